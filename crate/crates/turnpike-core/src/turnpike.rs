//! Turnpike diagnostics: time-measure of excursions, integral deviation
//! metrics, horizon sweeps, and the gap-rate fit.
//!
//! For a trajectory and a reference set (steady point or periodic orbit),
//! the central quantity is the residual set measure `Q_eps`: the total time
//! (left-endpoint rule) spent at distance greater than `eps` from the set.
//! A horizon sweep solves the same tracking problem over growing horizons,
//! records value gaps and measures, and cross-checks three predictions:
//! the Markov-type bound tying `Q_eps` to the integral deviation metric,
//! the measure bound from a strict dissipation certificate, and the `1/T`
//! decay of the value gap.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dissipativity::{
    check_dissipation, estimate_dissipation_rate, RateEstimate, StorageFunction, SupplyRate,
    DISSIPATION_SLACK,
};
use crate::error::{Error, Result};
use crate::model::{norm_h_sq, ProblemInstance, Trajectory};
use crate::ocp::{solve, SolveOptions};
use crate::statics::StaticSolution;

/// Absolute slack for the Markov-type inequality, which holds with equality
/// up to rounding when measure and integral are computed on the same grid.
pub const MARKOV_SLACK: f64 = 1e-12;

/// Absolute slack (in measure units) for the dissipativity measure bound.
pub const MEASURE_BOUND_SLACK: f64 = 1e-8;

/// Reference set that trajectories are compared against.
#[derive(Debug, Clone)]
pub enum TurnpikeSet {
    /// A steady state, optionally with its steady control so that distances
    /// include the control deviation.
    Point {
        y: DVector<f64>,
        u: Option<DVector<f64>>,
        mesh_weight: f64,
    },
    /// A periodic orbit given by its state samples over one period;
    /// distances are state-only minima over the samples.
    PeriodicOrbit {
        states: Vec<DVector<f64>>,
        mesh_weight: f64,
    },
}

impl TurnpikeSet {
    /// Steady point of a static solution.
    pub fn steady_point(steady: &StaticSolution, mesh_weight: f64, include_control: bool) -> Self {
        TurnpikeSet::Point {
            y: steady.y_s.clone(),
            u: include_control.then(|| steady.u_s.clone()),
            mesh_weight,
        }
    }

    /// Orbit of a periodic trajectory (its left-endpoint state samples).
    pub fn orbit(traj: &Trajectory, mesh_weight: f64) -> Self {
        TurnpikeSet::PeriodicOrbit {
            states: traj.states[..traj.nt()].to_vec(),
            mesh_weight,
        }
    }

    /// Mesh-weighted distance from a state (and optionally a control) to
    /// the set. The control enters only for a `Point` that stores one and
    /// when a control is passed.
    pub fn distance(&self, y: &DVector<f64>, u: Option<&DVector<f64>>) -> f64 {
        match self {
            TurnpikeSet::Point {
                y: y_ref,
                u: u_ref,
                mesh_weight,
            } => {
                let mut d = norm_h_sq(*mesh_weight, &(y - y_ref));
                if let (Some(ur), Some(uc)) = (u_ref, u) {
                    d += norm_h_sq(*mesh_weight, &(uc - ur));
                }
                d.sqrt()
            }
            TurnpikeSet::PeriodicOrbit {
                states,
                mesh_weight,
            } => states
                .iter()
                .map(|s| norm_h_sq(*mesh_weight, &(y - s)).sqrt())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Distances from each left-endpoint sample of a trajectory to the set.
pub fn sample_distances(traj: &Trajectory, set: &TurnpikeSet) -> Vec<f64> {
    (0..traj.nt())
        .map(|k| set.distance(&traj.states[k], Some(&traj.controls[k])))
        .collect()
}

/// Time measure of `{t : dist(t) > eps}` under the left-endpoint rule
/// (strict inequality: points exactly at distance `eps` do not count).
pub fn measure_q_eps(traj: &Trajectory, set: &TurnpikeSet, eps: f64) -> f64 {
    let dt = traj.dt();
    sample_distances(traj, set)
        .iter()
        .filter(|&&d| d > eps)
        .count() as f64
        * dt
}

/// Monomial comparison function `beta(d) = coefficient * d^exponent`.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonFunction {
    pub coefficient: f64,
    pub exponent: f64,
}

impl ComparisonFunction {
    pub fn eval(&self, d: f64) -> f64 {
        self.coefficient * d.powf(self.exponent)
    }
}

impl Default for ComparisonFunction {
    fn default() -> Self {
        ComparisonFunction {
            coefficient: 1.0,
            exponent: 2.0,
        }
    }
}

/// Time-averaged integral deviation metric
/// `(1/T) * sum_k dt * beta(dist_k)`.
pub fn integral_turnpike(traj: &Trajectory, set: &TurnpikeSet, beta: &ComparisonFunction) -> f64 {
    let dt = traj.dt();
    let total: f64 = sample_distances(traj, set)
        .iter()
        .map(|&d| dt * beta.eval(d))
        .sum();
    total / traj.horizon()
}

/// Per-epsilon metrics of one sweep row.
#[derive(Debug, Clone)]
pub struct EpsMetrics {
    pub eps: f64,
    /// Time measure of the residual set at this epsilon.
    pub q_measure: f64,
    /// `q/T <= integral / beta(eps) + MARKOV_SLACK` held.
    pub markov_ok: bool,
    /// `q <= (T*gap + 2M + slack) / (rate * eps^2) + slack` held; `None`
    /// when no usable strict rate was certified.
    pub measure_bound_ok: Option<bool>,
}

/// Metrics of one horizon in a sweep.
#[derive(Debug, Clone)]
pub struct HorizonRow {
    pub horizon: f64,
    pub nt: usize,
    /// Time-averaged optimal value at this horizon.
    pub value: f64,
    /// `value - j_s`.
    pub gap: f64,
    /// `horizon * gap`; bounded in `T` exactly when the gap decays like `1/T`.
    pub scaled_gap: f64,
    /// `sum_k dt * dist_k^2` (not time-averaged).
    pub l2_deviation: f64,
    /// Time-averaged integral deviation metric under the sweep's `beta`.
    pub integral_turnpike: f64,
    /// Worst dissipation residual of the optimal trajectory.
    pub dissipation_min_residual: f64,
    /// Largest mesh-norm of a visited state (ball-radius diagnostic).
    pub max_state_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub per_eps: Vec<EpsMetrics>,
    pub trajectory: Trajectory,
}

/// Least-squares fit of `log gap` against `log T`.
#[derive(Debug, Clone, Copy)]
pub struct GapFit {
    /// Slope of the log-log fit; `-1` is the expected decay rate.
    pub slope: f64,
    /// Intercept of the log-log fit (log of the gap constant).
    pub intercept: f64,
    /// Number of horizons with a positive gap used by the fit.
    pub used: usize,
    /// Horizons excluded because their gap was not positive.
    pub excluded: usize,
    /// Slope far from `-1` (`|slope + 1| > 0.3`): the gaps have likely
    /// saturated at solver accuracy or the decay is not `1/T`.
    pub saturation_suspected: bool,
}

/// Fit the decay rate of positive value gaps on a log-log scale.
/// Needs at least three positive gaps.
pub fn fit_gap_rate(points: &[(f64, f64)]) -> Result<GapFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(t, g)| t > 0.0 && g > 0.0)
        .map(|&(t, g)| (t.ln(), g.ln()))
        .collect();
    let excluded = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::InsufficientData { have: usable.len() });
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::InsufficientData { have: 1 });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok(GapFit {
        slope,
        intercept,
        used: usable.len(),
        excluded,
        saturation_suspected: (slope + 1.0).abs() > 0.3,
    })
}

/// Everything a horizon sweep needs.
pub struct SweepSpec<'a> {
    /// Template instance; each row re-solves it with a different horizon.
    pub base: &'a ProblemInstance,
    pub static_solution: &'a StaticSolution,
    pub horizons: &'a [f64],
    pub epsilons: &'a [f64],
    pub beta: ComparisonFunction,
    pub storage: &'a StorageFunction,
    pub supply: &'a SupplyRate,
    /// Radius of the state ball used for the storage bound `M`.
    pub state_ball_radius: f64,
    /// Include the control deviation in the distance to the steady point.
    pub include_control_in_distance: bool,
    pub solver: SolveOptions,
}

/// Outcome of a horizon sweep.
#[derive(Debug, Clone)]
pub struct TurnpikeReport {
    /// Steady (time-averaged) optimal value.
    pub j_s: f64,
    /// Shared step size across all rows.
    pub dt: f64,
    pub rows: Vec<HorizonRow>,
    /// Strict dissipation rate certified jointly by all optimal
    /// trajectories of the sweep.
    pub rate: RateEstimate,
    /// Storage bound `M` on the configured state ball.
    pub storage_bound: f64,
    /// Gap decay fit; `None` when fewer than three gaps were positive.
    pub fit: Option<GapFit>,
    /// For each epsilon, the largest residual measure over all horizons
    /// (finite uniformly in `T` under the measure bound).
    pub lambda_per_eps: Vec<(f64, f64)>,
}

/// Solve the tracking problem over every horizon, collect turnpike metrics,
/// and cross-check the Markov and dissipativity measure bounds. Solver
/// non-convergence on a row is recorded, not fatal.
pub fn horizon_sweep(spec: &SweepSpec<'_>) -> Result<TurnpikeReport> {
    if spec.horizons.is_empty() {
        return Err(Error::EmptyCollection {
            context: "horizon sweep needs at least one horizon",
        });
    }
    let h = spec.base.mesh_weight;
    let j_s = spec.static_solution.value;
    let set = TurnpikeSet::steady_point(
        spec.static_solution,
        h,
        spec.include_control_in_distance,
    );
    let mut horizons = spec.horizons.to_vec();
    horizons.sort_by(|a, b| a.partial_cmp(b).expect("finite horizons"));
    horizons.dedup();

    let reference = (&spec.static_solution.y_s, &spec.static_solution.u_s);
    let mut rows = horizons
        .par_iter()
        .map(|&t| -> Result<HorizonRow> {
            let inst = spec.base.with_horizon(t);
            let res = solve(&inst, &spec.solver)?;
            let traj = res.trajectory;
            let dt = traj.dt();
            let gap = res.value - j_s;
            let dists = sample_distances(&traj, &set);
            let l2_deviation: f64 = dists.iter().map(|d| dt * d * d).sum();
            let integral = integral_turnpike(&traj, &set, &spec.beta);
            let report = check_dissipation(
                &traj,
                spec.storage,
                spec.supply,
                Some((reference.0, reference.1)),
            );
            let max_state_norm = traj
                .states
                .iter()
                .map(|y| norm_h_sq(h, y).sqrt())
                .fold(0.0_f64, f64::max);
            let per_eps = spec
                .epsilons
                .iter()
                .map(|&eps| {
                    let q = dists.iter().filter(|&&d| d > eps).count() as f64 * dt;
                    let markov_ok =
                        q / t <= integral / spec.beta.eval(eps) + MARKOV_SLACK;
                    EpsMetrics {
                        eps,
                        q_measure: q,
                        markov_ok,
                        measure_bound_ok: None, // filled once the rate is known
                    }
                })
                .collect();
            Ok(HorizonRow {
                horizon: t,
                nt: inst.nt,
                value: res.value,
                gap,
                scaled_gap: t * gap,
                l2_deviation,
                integral_turnpike: integral,
                dissipation_min_residual: report.min_residual,
                max_state_norm,
                converged: res.converged,
                iterations: res.iterations,
                per_eps,
                trajectory: traj,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // joint strict rate over the sweep's optimal trajectories
    let reports: Vec<_> = rows
        .iter()
        .map(|row| {
            check_dissipation(
                &row.trajectory,
                spec.storage,
                spec.supply,
                Some((reference.0, reference.1)),
            )
        })
        .collect();
    let rate = estimate_dissipation_rate(&reports)?;

    let storage_bound = spec.storage.bound_on_ball(spec.state_ball_radius);
    let usable_rate = rate.rate > 0.0 && !rate.degenerate && !rate.plain_violated;
    for row in &mut rows {
        for em in &mut row.per_eps {
            row.trajectory.nt(); // keep borrowck happy about split borrows
            if usable_rate {
                let alpha = rate.rate * em.eps * em.eps;
                let budget =
                    (row.scaled_gap + 2.0 * storage_bound + DISSIPATION_SLACK) / alpha;
                em.measure_bound_ok = Some(em.q_measure <= budget + MEASURE_BOUND_SLACK);
            }
        }
    }

    let gaps: Vec<(f64, f64)> = rows.iter().map(|r| (r.horizon, r.gap)).collect();
    let fit = match fit_gap_rate(&gaps) {
        Ok(f) => Some(f),
        Err(Error::InsufficientData { .. }) => None,
        Err(e) => return Err(e),
    };

    let lambda_per_eps = spec
        .epsilons
        .iter()
        .map(|&eps| {
            let worst = rows
                .iter()
                .flat_map(|r| r.per_eps.iter())
                .filter(|em| em.eps == eps)
                .map(|em| em.q_measure)
                .fold(0.0_f64, f64::max);
            (eps, worst)
        })
        .collect();

    Ok(TurnpikeReport {
        j_s,
        dt: spec.base.dt(),
        rows,
        rate,
        storage_bound,
        fit,
        lambda_per_eps,
    })
}
