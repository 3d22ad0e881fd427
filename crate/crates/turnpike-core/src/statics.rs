//! Steady-state problems and their multiplier structure.
//!
//! Three solvers share one solution record: the linear-quadratic steady
//! problem (fixed-point iteration on the projected stationarity map with an
//! active-set Newton fallback), a cubic semilinear steady problem (Newton on
//! the coupled optimality system), and a generic finite-dimensional problem
//! with state and control boxes (augmented Lagrangian over projected
//! descent). The module also evaluates the Lagrangians that certify
//! optimality and samples strong-duality rates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Error, Result};
use crate::model::{
    build_laplacian_1d, dot_h, unit_direction, BoxConstraints, ProblemInstance,
    SpatialGrid,
};
use crate::pg::{minimize, PgBounds, PgOptions, PgProblem};

/// Steady-state solution with its adjoint and box multipliers.
///
/// Sign conventions, uniform across the solvers: `p_s` solves the tracking
/// adjoint equation `-A^T p_s = sw (y_d - y_s)` (for the semilinear problem,
/// `(-lap + 3 y_s^2) p_s = y_d - y_s`), stationarity reads
/// `cw u_s - B^T p_s - mu_a + mu_b = 0` with `mu_a, mu_b >= 0` complementary
/// to the box, and the multiplier pairing with the *forward* constraint
/// orientation `+(A y + B u)` is `-p_s`. Consequently the strong-duality
/// storage function is `S(y) = +<p_s, y>_h` for every problem kind.
#[derive(Debug, Clone)]
pub struct StaticSolution {
    pub y_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub p_s: DVector<f64>,
    pub mu_a: DVector<f64>,
    pub mu_b: DVector<f64>,
    /// Steady cost `f0(y_s, u_s)`.
    pub value: f64,
    /// Worst componentwise violation over stationarity, both equations,
    /// multiplier signs, and complementarity.
    pub kkt_residual: f64,
}

/// Bound treated as active when the control sits within this distance of it.
/// Projections put iterates exactly on bounds, so the slack only covers
/// round-off from the final fixed-point update.
const ACTIVE_BOUND_SLACK: f64 = 1e-9;

/// Iterations of the damped fixed point before the active-set fallback kicks
/// in.
const FIXED_POINT_CAP: usize = 1000;

fn fixed_target(instance: &ProblemInstance) -> DVector<f64> {
    // the steady problem of a periodic-target instance tracks the mean target
    // (averaging a feasible periodic pair preserves feasibility and can only
    // lower a convex cost, so the steady problem below is its tight relaxation)
    instance.cost.target.mean()
}

/// KKT residual of a candidate steady solution; the componentwise maximum of
/// primal feasibility, the adjoint equation, stationarity, multiplier signs,
/// and complementarity.
fn kkt_residual_lq(instance: &ProblemInstance, sol: &StaticSolution) -> f64 {
    let a = &instance.dynamics.a;
    let b = &instance.dynamics.b;
    let sw = instance.cost.state_weight;
    let cw = instance.cost.control_weight;
    let y_d = fixed_target(instance);

    let primal = (a * &sol.y_s + b * &sol.u_s).amax();
    let adjoint = (a.transpose() * &sol.p_s + (&y_d - &sol.y_s) * sw).amax();
    let stationarity =
        (&sol.u_s * cw - b.transpose() * &sol.p_s - &sol.mu_a + &sol.mu_b).amax();

    let mut signs: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..sol.u_s.len() {
        signs = signs.max(-sol.mu_a[i]).max(-sol.mu_b[i]);
        let lo = instance.controls.lower[i];
        let hi = instance.controls.upper[i];
        if lo.is_finite() {
            comp = comp.max((sol.mu_a[i] * (sol.u_s[i] - lo)).abs());
        }
        if hi.is_finite() {
            comp = comp.max((sol.mu_b[i] * (hi - sol.u_s[i])).abs());
        }
    }
    primal.max(adjoint).max(stationarity).max(signs).max(comp)
}

/// Recover the box multipliers from the stationarity residual
/// `cw u - B^T p`: positive part on lower-active components feeds `mu_a`,
/// negative part on upper-active components feeds `mu_b`.
fn recover_multipliers(
    controls: &BoxConstraints,
    u: &DVector<f64>,
    residual: &DVector<f64>, // cw u - B^T p
) -> (DVector<f64>, DVector<f64>) {
    let m = u.len();
    let mut mu_a = DVector::zeros(m);
    let mut mu_b = DVector::zeros(m);
    for i in 0..m {
        let lo = controls.lower[i];
        let hi = controls.upper[i];
        let width_scale = 1.0 + u[i].abs();
        if lo.is_finite() && u[i] - lo <= ACTIVE_BOUND_SLACK * width_scale {
            mu_a[i] = residual[i].max(0.0);
        } else if hi.is_finite() && hi - u[i] <= ACTIVE_BOUND_SLACK * width_scale {
            mu_b[i] = (-residual[i]).max(0.0);
        }
    }
    (mu_a, mu_b)
}

/// Solve the steady linear-quadratic problem
/// `min f0(y, u)  s.t.  A y + B u = 0,  u in the box`.
///
/// Iterates the damped projected fixed point
/// `u <- u + (proj(B^T p(u) / cw) - u) / 2` with
/// `y(u) = (-A)^{-1} B u` and `p(u) = (-A)^{-T} sw (y_d - y(u))`; after
/// [`FIXED_POINT_CAP`] stalled iterations an active-set Newton step on the
/// reduced normal equations finishes the job.
pub fn solve_static_lq(instance: &ProblemInstance, tolerance: f64) -> Result<StaticSolution> {
    instance.validate()?;
    let a = &instance.dynamics.a;
    let b = &instance.dynamics.b;
    let m = instance.control_dim();
    let sw = instance.cost.state_weight;
    let cw = instance.cost.control_weight;
    assert!(cw > 0.0, "steady problem needs a positive control weight");
    let y_d = fixed_target(instance);

    let neg_a = -a;
    let lu = neg_a.clone().lu();
    let lu_t = neg_a.transpose().lu();
    if lu.determinant().abs() == 0.0 {
        return Err(Error::SingularGenerator);
    }

    let state_of = |u: &DVector<f64>| lu.solve(&(b * u)).expect("checked invertible");
    let adjoint_of =
        |y: &DVector<f64>| lu_t.solve(&((&y_d - y) * sw)).expect("checked invertible");

    let mut u = DVector::zeros(m);
    instance.controls.project(&mut u);
    let mut converged = false;
    for _ in 0..FIXED_POINT_CAP {
        let y = state_of(&u);
        let p = adjoint_of(&y);
        let candidate = instance.controls.projected(&(b.transpose() * &p / cw));
        let step = &candidate - &u;
        u += &step * 0.5;
        if step.amax() <= tolerance {
            u = candidate;
            converged = true;
            break;
        }
    }

    if !converged {
        u = active_set_newton(instance, &lu, &lu_t, &y_d, u, tolerance)?;
    }

    let y_s = state_of(&u);
    let p_s = adjoint_of(&y_s);
    let residual = &u * cw - b.transpose() * &p_s;
    let (mu_a, mu_b) = recover_multipliers(&instance.controls, &u, &residual);
    let h = instance.mesh_weight;
    let value = 0.5
        * (sw * h * (&y_s - &y_d).norm_squared() + cw * h * u.norm_squared());
    let mut sol = StaticSolution {
        y_s,
        u_s: u,
        p_s,
        mu_a,
        mu_b,
        value,
        kkt_residual: 0.0,
    };
    sol.kkt_residual = kkt_residual_lq(instance, &sol);
    Ok(sol)
}

/// Active-set Newton fallback on the reduced problem
/// `min (cw/2)||u||^2 + (sw/2)||(-A)^{-1} B u - y_d||^2` over the box:
/// components pinned to their bounds are eliminated, the remaining normal
/// equations are solved exactly, and the partition is revised until it
/// reproduces itself.
fn active_set_newton(
    instance: &ProblemInstance,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    _lu_t: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    y_d: &DVector<f64>,
    mut u: DVector<f64>,
    tolerance: f64,
) -> Result<DVector<f64>> {
    let b = &instance.dynamics.b;
    let m = instance.control_dim();
    let sw = instance.cost.state_weight;
    let cw = instance.cost.control_weight;

    // X = (-A)^{-1} B, reduced Hessian cw I + sw X^T X, linear term sw X^T y_d
    let mut x = DMatrix::zeros(b.nrows(), m);
    for j in 0..m {
        let col = lu
            .solve(&DVector::from(b.column(j).into_owned()))
            .expect("checked invertible");
        x.set_column(j, &col);
    }
    let gram = x.transpose() * &x * sw + DMatrix::identity(m, m) * cw;
    let rhs_full = x.transpose() * y_d * sw;

    for _ in 0..100 {
        // classify against the current iterate
        let mut lower_active = vec![false; m];
        let mut upper_active = vec![false; m];
        let mut free_idx = Vec::new();
        for i in 0..m {
            let lo = instance.controls.lower[i];
            let hi = instance.controls.upper[i];
            let scale = 1.0 + u[i].abs();
            if lo.is_finite() && u[i] - lo <= ACTIVE_BOUND_SLACK * scale {
                lower_active[i] = true;
            } else if hi.is_finite() && hi - u[i] <= ACTIVE_BOUND_SLACK * scale {
                upper_active[i] = true;
            } else {
                free_idx.push(i);
            }
        }

        // solve the free block exactly with active components pinned
        let mut next = u.clone();
        for i in 0..m {
            if lower_active[i] {
                next[i] = instance.controls.lower[i];
            } else if upper_active[i] {
                next[i] = instance.controls.upper[i];
            }
        }
        if !free_idx.is_empty() {
            let k = free_idx.len();
            let mut gram_ff = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in free_idx.iter().enumerate() {
                rhs[r] = rhs_full[i];
                for (c, &j) in free_idx.iter().enumerate() {
                    gram_ff[(r, c)] = gram[(i, j)];
                }
                for j in 0..m {
                    if !free_idx.contains(&j) {
                        rhs[r] -= gram[(i, j)] * next[j];
                    }
                }
            }
            let sol = gram_ff
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularGenerator)?;
            for (r, &i) in free_idx.iter().enumerate() {
                next[i] = sol[r];
            }
        }
        instance.controls.project(&mut next);

        // stationarity of the projected candidate
        let grad = &gram * &next - &rhs_full;
        let res = (&next - instance.controls.projected(&(&next - &grad))).amax();
        let moved = (&next - &u).amax();
        u = next;
        if res <= tolerance {
            return Ok(u);
        }
        if moved <= f64::EPSILON {
            break; // partition reproduced itself but residual stuck
        }
    }
    Err(Error::StaticNonConvergence {
        iterations: FIXED_POINT_CAP + 100,
        residual: tolerance,
    })
}

/// Solve the steady cubic semilinear problem
/// `min f0(y, u)  s.t.  -lap y + y^3 = u` (no control bounds) by plain
/// Newton on the coupled optimality system
/// `-lap y + y^3 - p = 0`, `(-lap + 3 y^2) p + y - y_d = 0`, with `u = p`.
///
/// Plain (undamped) Newton converges fast for small targets and is *meant*
/// to leave its basin for large ones; divergence (non-finite or exploding
/// residual, or the iteration cap) reports `NewtonDivergence` instead of a
/// spurious answer.
pub fn solve_static_semilinear(
    grid: &SpatialGrid,
    y_d: &DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<StaticSolution> {
    let n = grid.n;
    if y_d.len() != n {
        return Err(Error::DimensionMismatch {
            context: format!("target has {} components on a grid of {}", y_d.len(), n),
        });
    }
    let lap = build_laplacian_1d(grid);
    let neg_lap = -&lap;

    let mut y = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    let residual = |y: &DVector<f64>, p: &DVector<f64>| -> DVector<f64> {
        let y3 = y.map(|v| v * v * v);
        let r1 = &neg_lap * y + y3 - p;
        let r2 = &neg_lap * p + y.map(|v| 3.0 * v * v).component_mul(p) + y - y_d;
        let mut r = DVector::zeros(2 * n);
        r.rows_mut(0, n).copy_from(&r1);
        r.rows_mut(n, n).copy_from(&r2);
        r
    };

    let mut res = residual(&y, &p);
    let mut res_norm = res.amax();
    for iter in 0..max_iterations {
        if res_norm <= tolerance {
            let u_s = p.clone();
            let h = grid.h;
            let value =
                0.5 * (h * (&y - y_d).norm_squared() + h * u_s.norm_squared());
            return Ok(StaticSolution {
                y_s: y,
                u_s,
                p_s: p,
                mu_a: DVector::zeros(n),
                mu_b: DVector::zeros(n),
                value,
                kkt_residual: res_norm,
            });
        }

        // Jacobian blocks: [ -lap + 3y^2        -I ]
        //                  [ I + 6 diag(y p)    -lap + 3y^2 ]
        let curv = &neg_lap
            + DMatrix::from_diagonal(&y.map(|v| 3.0 * v * v));
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        jac.view_mut((0, 0), (n, n)).copy_from(&curv);
        jac.view_mut((0, n), (n, n))
            .copy_from(&(-DMatrix::<f64>::identity(n, n)));
        let coupling = DMatrix::identity(n, n)
            + DMatrix::from_diagonal(&y.component_mul(&p).map(|v| 6.0 * v));
        jac.view_mut((n, 0), (n, n)).copy_from(&coupling);
        jac.view_mut((n, n), (n, n)).copy_from(&curv);

        let delta = jac.lu().solve(&res).ok_or(Error::NewtonDivergence {
            iterations: iter,
            residual: res_norm,
        })?;
        for i in 0..n {
            y[i] -= delta[i];
            p[i] -= delta[n + i];
        }

        res = residual(&y, &p);
        let next_norm = res.amax();
        if !next_norm.is_finite() || next_norm > 1e8 {
            return Err(Error::NewtonDivergence {
                iterations: iter + 1,
                residual: next_norm,
            });
        }
        res_norm = next_norm;
    }
    Err(Error::NewtonDivergence {
        iterations: max_iterations,
        residual: res_norm,
    })
}

/// Lagrangian of the steady problem at `(y, u)` with the box multipliers:
/// `f0(y, u) + <(-A) y - B u, p_s>_h + <mu_a, u_a - u>_h + <mu_b, u - u_b>_h`.
///
/// At an exact steady solution this expands, for *every* pair, to
/// `value + (sw ||y - y_s||_h^2 + cw ||u - u_s||_h^2) / 2`. Components with
/// infinite bounds carry zero multipliers and contribute nothing.
pub fn lagrangian(
    instance: &ProblemInstance,
    sol: &StaticSolution,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let mut value = dual_lagrangian(instance, sol, y, u);
    let h = instance.mesh_weight;
    for i in 0..u.len() {
        let lo = instance.controls.lower[i];
        let hi = instance.controls.upper[i];
        if lo.is_finite() {
            value += h * sol.mu_a[i] * (lo - u[i]);
        }
        if hi.is_finite() {
            value += h * sol.mu_b[i] * (u[i] - hi);
        }
    }
    value
}

/// Lagrangian without the box terms:
/// `f0(y, u) + <p_s, -(A y + B u)>_h`. For box-feasible `u` it dominates the
/// full [`lagrangian`], hence also `value + ||(dy, du)||^2_w / 2`.
pub fn dual_lagrangian(
    instance: &ProblemInstance,
    sol: &StaticSolution,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let h = instance.mesh_weight;
    let y_d = fixed_target(instance);
    let sw = instance.cost.state_weight;
    let cw = instance.cost.control_weight;
    let f0 = 0.5 * (sw * h * (y - &y_d).norm_squared() + cw * h * u.norm_squared());
    let constraint = -(&instance.dynamics.a * y + &instance.dynamics.b * u);
    f0 + dot_h(h, &sol.p_s, &constraint)
}

/// Problem handed to the strong-duality sampler.
pub enum DualityProblem<'a> {
    /// Steady linear-quadratic problem of a dynamic instance.
    LinearQuadratic(&'a ProblemInstance),
    /// Steady cubic semilinear problem on a grid with target `y_d`.
    Semilinear {
        grid: &'a SpatialGrid,
        y_d: &'a DVector<f64>,
    },
}

/// Result of sampling the strong-duality rate.
#[derive(Debug, Clone)]
pub struct DualityCheck {
    /// Smallest sampled ratio `(L(y, u) - value) / ||(dy, du)||_h^2`.
    pub rate: f64,
    /// The pair attaining it.
    pub worst_pair: (DVector<f64>, DVector<f64>),
    /// Samples that landed (numerically) on the solution and were redrawn.
    pub degenerate_resampled: usize,
}

/// Sample feasible pairs around the steady solution and bound the
/// strong-duality rate from below:
/// `rate = min (L(y, u) - value) / ||(y - y_s, u - u_s)||_h^2` over the
/// samples, where `L` is the multiplier-free [`dual_lagrangian`] (its
/// semilinear counterpart uses the cubic constraint residual). States are
/// drawn uniformly from the radius-`radius` ball around `y_s`; controls
/// uniformly from the box (clipped to the same radius around `u_s` on
/// unbounded components).
pub fn check_strict_strong_duality(
    problem: &DualityProblem<'_>,
    sol: &StaticSolution,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<DualityCheck> {
    if samples == 0 {
        return Err(Error::EmptyCollection {
            context: "strong-duality sampling needs at least one sample",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sol.y_s.len();
    let m = sol.u_s.len();

    let (h, dual_value): (f64, Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64>) = match problem {
        DualityProblem::LinearQuadratic(instance) => (
            instance.mesh_weight,
            Box::new(|y, u| dual_lagrangian(instance, sol, y, u)),
        ),
        DualityProblem::Semilinear { grid, y_d } => {
            let lap = build_laplacian_1d(grid);
            let h = grid.h;
            let p = sol.p_s.clone();
            let y_d = (*y_d).clone();
            (
                h,
                Box::new(move |y: &DVector<f64>, u: &DVector<f64>| {
                    let f0 = 0.5 * (h * (y - &y_d).norm_squared() + h * u.norm_squared());
                    let residual = -(&lap * y) + y.map(|v| v * v * v) - u;
                    f0 + dot_h(h, &p, &residual)
                }),
            )
        }
    };

    let mut rate = f64::INFINITY;
    let mut worst = (sol.y_s.clone(), sol.u_s.clone());
    let mut degenerate = 0usize;
    for _ in 0..samples {
        let mut attempt = 0;
        loop {
            let ry = radius * rng.random_range(0.0_f64..1.0);
            let y = &sol.y_s + unit_direction(&mut rng, n) * ry;
            let u = match problem {
                DualityProblem::LinearQuadratic(instance) => {
                    DVector::from_iterator(
                        m,
                        (0..m).map(|i| {
                            let lo = instance.controls.lower[i].max(sol.u_s[i] - radius);
                            let hi = instance.controls.upper[i].min(sol.u_s[i] + radius);
                            if lo >= hi {
                                lo
                            } else {
                                rng.random_range(lo..=hi)
                            }
                        }),
                    )
                }
                DualityProblem::Semilinear { .. } => {
                    let ru = radius * rng.random_range(0.0_f64..1.0);
                    &sol.u_s + unit_direction(&mut rng, m) * ru
                }
            };
            let dev = h * ((&y - &sol.y_s).norm_squared() + (&u - &sol.u_s).norm_squared());
            if dev < 1e-18 {
                degenerate += 1;
                attempt += 1;
                if attempt > 100 {
                    return Err(Error::SolveFailure {
                        context: "strong-duality sampling cannot escape the solution point"
                            .into(),
                    });
                }
                continue;
            }
            let ratio = (dual_value(&y, &u) - sol.value) / dev;
            if ratio < rate {
                rate = ratio;
                worst = (y, u);
            }
            break;
        }
    }
    Ok(DualityCheck {
        rate,
        worst_pair: worst,
        degenerate_resampled: degenerate,
    })
}

/// Outcome of the generic finite-dimensional steady solve. Infeasibility of
/// the equality constraint over the boxes, and failure of strict interior
/// feasibility, are diagnoses rather than errors.
#[derive(Debug, Clone)]
pub struct FiniteDimStatic {
    pub solution: StaticSolution,
    /// `||A y + B u||_inf` at the returned point.
    pub feasibility_residual: f64,
    /// No point of the boxes satisfies the equality constraint.
    pub infeasible: bool,
    /// Feasible, but only on the boundary of the boxes (no strict interior
    /// point), so multiplier-based certificates may degenerate.
    pub slater_violated: bool,
}

struct PenalizedStatic<'a> {
    instance: &'a ProblemInstance,
    y_d: DVector<f64>,
    multiplier: DVector<f64>,
    rho: f64,
    /// weight on the tracking cost; 0 turns the objective into pure
    /// feasibility restoration
    cost_weight: f64,
}

impl PenalizedStatic<'_> {
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.instance.state_dim();
        let m = self.instance.control_dim();
        (
            DVector::from_iterator(n, (0..n).map(|i| z[i])),
            DVector::from_iterator(m, (0..m).map(|i| z[n + i])),
        )
    }
}

impl PgProblem for PenalizedStatic<'_> {
    fn value(&mut self, z: &DVector<f64>) -> f64 {
        let (y, u) = self.split(z);
        let h = self.instance.mesh_weight;
        let sw = self.instance.cost.state_weight;
        let cw = self.instance.cost.control_weight;
        let defect = &self.instance.dynamics.a * &y + &self.instance.dynamics.b * &u;
        let f0 = 0.5 * (sw * h * (&y - &self.y_d).norm_squared() + cw * h * u.norm_squared());
        self.cost_weight * f0
            + h * self.multiplier.dot(&defect)
            + 0.5 * self.rho * h * defect.norm_squared()
    }

    fn value_and_grad(&mut self, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let (y, u) = self.split(z);
        let h = self.instance.mesh_weight;
        let sw = self.instance.cost.state_weight;
        let cw = self.instance.cost.control_weight;
        let a = &self.instance.dynamics.a;
        let b = &self.instance.dynamics.b;
        let defect = a * &y + b * &u;
        let f = self.cost_weight
            * (0.5 * (sw * h * (&y - &self.y_d).norm_squared() + cw * h * u.norm_squared()))
            + h * self.multiplier.dot(&defect)
            + 0.5 * self.rho * h * defect.norm_squared();

        let lam = (&self.multiplier + &defect * self.rho) * h;
        let gy = (&y - &self.y_d) * (self.cost_weight * sw * h) + a.transpose() * &lam;
        let gu = &u * (self.cost_weight * cw * h) + b.transpose() * &lam;
        let n = y.len();
        let mut g = DVector::zeros(n + u.len());
        g.rows_mut(0, n).copy_from(&gy);
        g.rows_mut(n, u.len()).copy_from(&gu);
        (f, g)
    }
}

/// Solve the generic finite-dimensional steady problem
/// `min f0(y, u)  s.t.  A y + B u = 0,  y in state box, u in control box`
/// by an augmented Lagrangian over projected descent on the stacked pair.
///
/// A feasibility phase first minimizes the constraint residual alone; an
/// irreducible residual flags `infeasible`, and a residual that becomes
/// irreducible after shrinking every finite bound inward flags
/// `slater_violated`. Both flags leave the best-effort solution available.
pub fn solve_static_finite_dim(
    instance: &ProblemInstance,
    state_box: &BoxConstraints,
    tolerance: f64,
) -> Result<FiniteDimStatic> {
    instance.validate()?;
    let n = instance.state_dim();
    let m = instance.control_dim();
    if state_box.dim() != n {
        return Err(Error::DimensionMismatch {
            context: format!(
                "state box has {} components for state dimension {}",
                state_box.dim(),
                n
            ),
        });
    }
    let y_d = fixed_target(instance);
    let h = instance.mesh_weight;
    let cw = instance.cost.control_weight;

    let stacked = |sb: &BoxConstraints, cb: &BoxConstraints| -> PgBounds {
        let mut lower = DVector::zeros(n + m);
        let mut upper = DVector::zeros(n + m);
        lower.rows_mut(0, n).copy_from(&sb.lower);
        lower.rows_mut(n, m).copy_from(&cb.lower);
        upper.rows_mut(0, n).copy_from(&sb.upper);
        upper.rows_mut(n, m).copy_from(&cb.upper);
        PgBounds { lower, upper }
    };
    let feasibility_opts = PgOptions {
        tolerance: 1e-12,
        max_iterations: 5000,
        accelerate: true,
        fixed_step: None,
    };

    // feasibility phase on the plain boxes
    let mut phase1 = PenalizedStatic {
        instance,
        y_d: y_d.clone(),
        multiplier: DVector::zeros(n),
        rho: 1.0,
        cost_weight: 0.0,
    };
    let bounds = stacked(state_box, &instance.controls);
    let feas = minimize(&mut phase1, &bounds, DVector::zeros(n + m), &feasibility_opts);
    let (fy, fu) = phase1.split(&feas.z);
    let feas_residual = (&instance.dynamics.a * &fy + &instance.dynamics.b * &fu).amax();
    let infeasible = feas_residual > 1e-6;

    // Slater probe: shrink every finite bound inward and retry
    let shrink = |bx: &BoxConstraints| -> BoxConstraints {
        let mut lower = bx.lower.clone();
        let mut upper = bx.upper.clone();
        for i in 0..bx.dim() {
            if lower[i].is_finite() && upper[i].is_finite() {
                let margin = 1e-6 * (upper[i] - lower[i]).max(1e-6);
                if upper[i] - lower[i] > 2.0 * margin {
                    lower[i] += margin;
                    upper[i] -= margin;
                } else {
                    // degenerate interval: no interior exists
                    let mid = 0.5 * (lower[i] + upper[i]);
                    lower[i] = mid;
                    upper[i] = mid;
                }
            }
        }
        BoxConstraints { lower, upper }
    };
    let slater_violated = if infeasible {
        true
    } else {
        let sb = shrink(state_box);
        let cb = shrink(&instance.controls);
        let mut probe = PenalizedStatic {
            instance,
            y_d: y_d.clone(),
            multiplier: DVector::zeros(n),
            rho: 1.0,
            cost_weight: 0.0,
        };
        let bounds_in = stacked(&sb, &cb);
        let inner = minimize(&mut probe, &bounds_in, feas.z.clone(), &feasibility_opts);
        let (py, pu) = probe.split(&inner.z);
        // a boundary-only feasible set leaves a residual on the order of
        // the shrink margin (1e-6 of the width), so test one order below it
        (&instance.dynamics.a * &py + &instance.dynamics.b * &pu).amax() > 1e-7
    };

    // augmented-Lagrangian phase from the feasible point
    let mut al = PenalizedStatic {
        instance,
        y_d: y_d.clone(),
        multiplier: DVector::zeros(n),
        rho: 10.0,
        cost_weight: 1.0,
    };
    let mut z = feas.z;
    let al_opts = PgOptions {
        tolerance,
        max_iterations: 20_000,
        accelerate: true,
        fixed_step: None,
    };
    let mut residual = f64::INFINITY;
    let mut residual_prev = f64::INFINITY;
    let mut stationarity = f64::INFINITY;
    for _outer in 0..60 {
        let out = minimize(&mut al, &bounds, z, &al_opts);
        stationarity = out.stationarity;
        z = out.z;
        let (y, u) = al.split(&z);
        let defect = &instance.dynamics.a * &y + &instance.dynamics.b * &u;
        residual = defect.amax();
        if residual <= 1e-9 && out.converged {
            break;
        }
        al.multiplier += &defect * al.rho;
        if residual > 0.25 * residual_prev {
            al.rho = (al.rho * 5.0).min(1e10);
        }
        residual_prev = residual;
    }

    let (y_s, u_s) = al.split(&z);
    // the augmented multiplier pairs with +(A y + B u); flip to the
    // tracking-adjoint orientation used everywhere else
    let p_s = -(&al.multiplier + (&instance.dynamics.a * &y_s + &instance.dynamics.b * &u_s) * al.rho);
    let res_u = &u_s * cw - instance.dynamics.b.transpose() * &p_s;
    let (mu_a, mu_b) = recover_multipliers(&instance.controls, &u_s, &res_u);
    let value = 0.5
        * (instance.cost.state_weight * h * (&y_s - &y_d).norm_squared()
            + cw * h * u_s.norm_squared());
    let solution = StaticSolution {
        y_s,
        u_s,
        p_s,
        mu_a,
        mu_b,
        value,
        kkt_residual: stationarity.max(residual),
    };
    Ok(FiniteDimStatic {
        solution,
        feasibility_residual: residual,
        infeasible,
        slater_violated,
    })
}
