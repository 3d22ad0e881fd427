//! Finite-horizon solver: time-averaged tracking cost, adjoint gradients,
//! projected descent over the control sequence, a periodic variant with an
//! augmented-Lagrangian coupling of the endpoints, and an exhaustive oracle
//! for tiny instances.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{
    norm_h, propagate, ImplicitEulerStepper, ProblemInstance, Trajectory,
};
use crate::pg::{minimize, PgBounds, PgOptions, PgProblem};

/// Periodicity gap `||y(T) - y(0)||_h` below which the augmented-Lagrangian
/// loop declares the endpoint constraint met. Chosen so the constraint error
/// perturbs reported average costs well below solver tolerance.
pub const PERIODIC_GAP_TOL: f64 = 1e-6;

/// Cap on the number of control sequences the brute-force oracle will visit.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Step-size rule of the projected descent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Spectral (Barzilai-Borwein) step, safeguarded by backtracking. Default.
    BarzilaiBorwein,
    /// Fixed trial step, still safeguarded by backtracking.
    Fixed(f64),
}

/// Knobs of the dynamic solver.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Bound on `||u - proj(u - grad)||_inf` at the returned point.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    /// Nesterov acceleration with monotone restarts (on by default).
    pub accelerate: bool,
    /// Optimize the initial state as well (the instance's `y0`, when present,
    /// becomes the initial guess).
    pub free_initial: bool,
    /// Solve the periodic problem (endpoints coupled, initial state free).
    pub periodic: bool,
    /// Consumed by sampling-based diagnostics configured alongside the
    /// solver; the deterministic descent itself ignores it.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50_000,
            step_rule: StepRule::BarzilaiBorwein,
            accelerate: true,
            free_initial: false,
            periodic: false,
            seed: 0,
        }
    }
}

/// Outcome of a dynamic solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub trajectory: Trajectory,
    /// Time-averaged cost of `trajectory`.
    pub value: f64,
    pub iterations: usize,
    /// Fixed-point residual `||z - proj(z - grad)||_inf` at the final iterate
    /// (for the periodic solver: of the last augmented subproblem).
    pub stationarity: f64,
    pub converged: bool,
}

/// Time-averaged cost of a trajectory: `(1/T) sum_k dt * f0(t_k, y_k, u_k)`,
/// read at left endpoints.
pub fn cost(instance: &ProblemInstance, traj: &Trajectory) -> f64 {
    assert_eq!(traj.nt(), instance.nt, "trajectory/instance step mismatch");
    let dt = instance.dt();
    let mut acc = 0.0;
    for k in 0..instance.nt {
        acc += dt
            * instance.cost.stage(
                instance.mesh_weight,
                traj.times[k],
                &traj.states[k],
                &traj.controls[k],
            );
    }
    acc / instance.horizon
}

/// Backward sweep shared by every objective built on the same dynamics.
///
/// Given the Euclidean stage gradients `ly[k]`, `lu[k]` of a sum
/// `sum_k l_k(y_k, u_k)` (plus an optional terminal gradient at `y_nt`),
/// returns the gradient with respect to each control and to the initial
/// state. The recursion is the exact transpose of the implicit-Euler forward
/// map `y_{k+1} = M (y_k + dt B u_k)`, `M = (I - dt A)^{-1}`:
/// `lambda_k = ly_k + M^T lambda_{k+1}`, `g_{u_k} = lu_k + dt B^T M^T lambda_{k+1}`.
pub(crate) fn adjoint_gradient(
    stepper: &ImplicitEulerStepper,
    ly: &[DVector<f64>],
    lu: &[DVector<f64>],
    terminal: Option<&DVector<f64>>,
) -> (Vec<DVector<f64>>, DVector<f64>) {
    let nt = lu.len();
    let n = ly
        .first()
        .map(|v| v.len())
        .or_else(|| terminal.map(|v| v.len()))
        .expect("adjoint sweep needs at least one stage");
    let bt = stepper.injection().transpose();
    let dt = stepper.dt();
    let mut lambda = terminal.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut gu = vec![DVector::zeros(0); nt];
    for k in (0..nt).rev() {
        let mt = stepper.solve_transposed(&lambda);
        gu[k] = &lu[k] + &bt * &mt * dt;
        lambda = &ly[k] + mt;
    }
    (gu, lambda)
}

/// Stage gradients of the time-averaged tracking cost along a trajectory.
fn cost_stage_grads(
    instance: &ProblemInstance,
    traj: &Trajectory,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let dt = instance.dt();
    let scale = dt / instance.horizon;
    let h = instance.mesh_weight;
    let sw = instance.cost.state_weight;
    let cw = instance.cost.control_weight;
    let mut ly = Vec::with_capacity(instance.nt);
    let mut lu = Vec::with_capacity(instance.nt);
    for k in 0..instance.nt {
        let d = instance.cost.target.at(traj.times[k]);
        ly.push((&traj.states[k] - d) * (scale * sw * h));
        lu.push(&traj.controls[k] * (scale * cw * h));
    }
    (ly, lu)
}

/// Gradient of the time-averaged cost with respect to the controls and the
/// initial state, computed by one adjoint sweep along `traj` (which must be
/// the forward trajectory of those controls).
pub fn gradient_via_adjoint(
    instance: &ProblemInstance,
    traj: &Trajectory,
) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
    if traj.nt() != instance.nt {
        return Err(Error::DimensionMismatch {
            context: format!(
                "trajectory has {} steps but the instance has {}",
                traj.nt(),
                instance.nt
            ),
        });
    }
    let stepper = ImplicitEulerStepper::new(&instance.dynamics, instance.dt())?;
    let (ly, lu) = cost_stage_grads(instance, traj);
    Ok(adjoint_gradient(&stepper, &ly, &lu, None))
}

/// Endpoint-coupling data of the periodic augmented Lagrangian.
struct AlTerms {
    multiplier: DVector<f64>,
    rho: f64,
}

/// The stacked-variable objective handed to the projected-gradient engine.
/// Layout of `z`: controls step by step, then (when the initial state is
/// free) the initial state.
struct OcpObjective<'a> {
    instance: &'a ProblemInstance,
    stepper: ImplicitEulerStepper,
    free_initial: bool,
    y0_fixed: DVector<f64>,
    al: Option<AlTerms>,
}

impl OcpObjective<'_> {
    fn unpack(&self, z: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let m = self.instance.control_dim();
        let n = self.instance.state_dim();
        let nt = self.instance.nt;
        let controls: Vec<DVector<f64>> = (0..nt)
            .map(|k| DVector::from_iterator(m, (0..m).map(|i| z[k * m + i])))
            .collect();
        let y0 = if self.free_initial {
            DVector::from_iterator(n, (0..n).map(|i| z[nt * m + i]))
        } else {
            self.y0_fixed.clone()
        };
        (y0, controls)
    }

    fn objective(&self, traj: &Trajectory) -> f64 {
        let mut f = cost(self.instance, traj);
        if let Some(al) = &self.al {
            let h = self.instance.mesh_weight;
            let defect = &traj.states[self.instance.nt] - &traj.states[0];
            f += h * al.multiplier.dot(&defect) + 0.5 * al.rho * h * defect.norm_squared();
        }
        f
    }
}

impl PgProblem for OcpObjective<'_> {
    fn value(&mut self, z: &DVector<f64>) -> f64 {
        let (y0, controls) = self.unpack(z);
        let traj = propagate(&self.stepper, &y0, &controls, self.instance.dt());
        self.objective(&traj)
    }

    fn value_and_grad(&mut self, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let (y0, controls) = self.unpack(z);
        let traj = propagate(&self.stepper, &y0, &controls, self.instance.dt());
        let f = self.objective(&traj);

        let (ly, lu) = cost_stage_grads(self.instance, &traj);
        let mut terminal = None;
        let mut y0_extra = None;
        if let Some(al) = &self.al {
            let h = self.instance.mesh_weight;
            let defect = &traj.states[self.instance.nt] - &traj.states[0];
            let seed = (&al.multiplier + &defect * al.rho) * h;
            y0_extra = Some(-&seed);
            terminal = Some(seed);
        }
        let (gu, gy0) = adjoint_gradient(&self.stepper, &ly, &lu, terminal.as_ref());

        let m = self.instance.control_dim();
        let nt = self.instance.nt;
        let dim = nt * m + if self.free_initial { self.instance.state_dim() } else { 0 };
        let mut g = DVector::zeros(dim);
        for k in 0..nt {
            for i in 0..m {
                g[k * m + i] = gu[k][i];
            }
        }
        if self.free_initial {
            let mut g0 = gy0;
            if let Some(extra) = y0_extra {
                g0 += extra;
            }
            for i in 0..self.instance.state_dim() {
                g[nt * m + i] = g0[i];
            }
        }
        (f, g)
    }
}

fn stacked_bounds(instance: &ProblemInstance, free_initial: bool) -> PgBounds {
    let m = instance.control_dim();
    let nt = instance.nt;
    let n = instance.state_dim();
    let dim = nt * m + if free_initial { n } else { 0 };
    let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    for k in 0..nt {
        for i in 0..m {
            lower[k * m + i] = instance.controls.lower[i];
            upper[k * m + i] = instance.controls.upper[i];
        }
    }
    PgBounds { lower, upper }
}

fn initial_stack(instance: &ProblemInstance, free_initial: bool) -> DVector<f64> {
    let m = instance.control_dim();
    let nt = instance.nt;
    let n = instance.state_dim();
    let dim = nt * m + if free_initial { n } else { 0 };
    let mut z = DVector::zeros(dim);
    if free_initial {
        if let Some(y0) = &instance.y0 {
            for i in 0..n {
                z[nt * m + i] = y0[i];
            }
        }
    }
    z
}

fn pg_options(options: &SolveOptions) -> PgOptions {
    PgOptions {
        tolerance: options.tolerance,
        max_iterations: options.max_iterations,
        accelerate: options.accelerate,
        fixed_step: match options.step_rule {
            StepRule::BarzilaiBorwein => None,
            StepRule::Fixed(s) => Some(s),
        },
    }
}

/// Solve the finite-horizon problem by projected descent on the control
/// sequence (and the initial state, when `options.free_initial`).
pub fn solve(instance: &ProblemInstance, options: &SolveOptions) -> Result<SolveResult> {
    if options.periodic {
        return solve_periodic(instance, options);
    }
    instance.validate()?;
    let y0_fixed = if options.free_initial {
        DVector::zeros(instance.state_dim())
    } else {
        instance.y0.clone().ok_or(Error::MissingInitialState)?
    };
    let stepper = ImplicitEulerStepper::new(&instance.dynamics, instance.dt())?;
    let mut objective = OcpObjective {
        instance,
        stepper,
        free_initial: options.free_initial,
        y0_fixed,
        al: None,
    };
    let bounds = stacked_bounds(instance, options.free_initial);
    let z0 = initial_stack(instance, options.free_initial);
    let out = minimize(&mut objective, &bounds, z0, &pg_options(options));
    let (y0, controls) = objective.unpack(&out.z);
    let traj = propagate(&objective.stepper, &y0, &controls, instance.dt());
    let value = cost(instance, &traj);
    Ok(SolveResult {
        trajectory: traj,
        value,
        iterations: out.iterations,
        stationarity: out.stationarity,
        converged: out.converged,
    })
}

/// Solve the periodic problem: minimize the average cost over one period
/// subject to `y(T) = y(0)`, the endpoint constraint enforced by an
/// augmented-Lagrangian outer loop around the same projected descent.
pub fn solve_periodic(instance: &ProblemInstance, options: &SolveOptions) -> Result<SolveResult> {
    instance.validate()?;
    let n = instance.state_dim();
    let stepper = ImplicitEulerStepper::new(&instance.dynamics, instance.dt())?;
    let mut objective = OcpObjective {
        instance,
        stepper,
        free_initial: true,
        y0_fixed: DVector::zeros(n),
        al: Some(AlTerms {
            multiplier: DVector::zeros(n),
            rho: 10.0,
        }),
    };
    let bounds = stacked_bounds(instance, true);
    let mut z = initial_stack(instance, true);
    let pg_opts = pg_options(options);

    let mut total_iterations = 0;
    let mut gap_prev = f64::INFINITY;
    let mut last_stationarity = f64::INFINITY;
    let mut inner_converged = false;
    let mut gap = f64::INFINITY;
    for _outer in 0..50 {
        let out = minimize(&mut objective, &bounds, z, &pg_opts);
        total_iterations += out.iterations;
        last_stationarity = out.stationarity;
        inner_converged = out.converged;
        z = out.z;

        let (y0, controls) = objective.unpack(&z);
        let traj = propagate(&objective.stepper, &y0, &controls, instance.dt());
        let defect = &traj.states[instance.nt] - &traj.states[0];
        gap = norm_h(instance.mesh_weight, &defect);
        if gap <= PERIODIC_GAP_TOL {
            break;
        }
        let al = objective.al.as_mut().unwrap();
        al.multiplier += &defect * al.rho;
        if gap > 0.25 * gap_prev {
            al.rho = (al.rho * 5.0).min(1e8);
        }
        gap_prev = gap;
    }

    let (y0, controls) = objective.unpack(&z);
    let traj = propagate(&objective.stepper, &y0, &controls, instance.dt());
    let value = cost(instance, &traj);
    Ok(SolveResult {
        trajectory: traj,
        value,
        iterations: total_iterations,
        stationarity: last_stationarity,
        converged: inner_converged && gap <= PERIODIC_GAP_TOL,
    })
}

/// Exhaustively evaluate every control sequence on a per-component grid of
/// `levels` values spanning the box, and return the best one.
///
/// Sequences are visited in lexicographic order (first component of the
/// first step varies slowest) and a new minimum is accepted only on a strict
/// comparison, so exact ties resolve to the lexicographically first
/// minimizer. Refuses with `SearchSpaceTooLarge` beyond [`BRUTE_FORCE_LIMIT`]
/// sequences.
pub fn brute_force_oracle(instance: &ProblemInstance, levels: usize) -> Result<SolveResult> {
    instance.validate()?;
    assert!(levels >= 1, "need at least one grid level");
    let y0 = instance.y0.clone().ok_or(Error::MissingInitialState)?;
    let m = instance.control_dim();
    let nt = instance.nt;
    for i in 0..m {
        if !instance.controls.lower[i].is_finite() || !instance.controls.upper[i].is_finite() {
            return Err(Error::UnboundedBox { component: i });
        }
    }
    let digits = m * nt;
    let total = (levels as f64).powi(digits as i32);
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size: total,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    // value of digit d for component i
    let level_value = |i: usize, d: usize| -> f64 {
        let lo = instance.controls.lower[i];
        let hi = instance.controls.upper[i];
        if levels == 1 {
            lo
        } else {
            lo + (hi - lo) * d as f64 / (levels - 1) as f64
        }
    };

    let stepper = ImplicitEulerStepper::new(&instance.dynamics, instance.dt())?;
    let dt = instance.dt();
    let mut digit = vec![0usize; digits];
    let mut best_value = f64::INFINITY;
    let mut best_digits = digit.clone();
    let mut evaluated = 0usize;
    let mut u = DVector::zeros(m);

    loop {
        // forward sweep, accumulating the averaged cost
        let mut y = y0.clone();
        let mut acc = 0.0;
        for k in 0..nt {
            for i in 0..m {
                u[i] = level_value(i, digit[k * m + i]);
            }
            acc += dt * instance.cost.stage(instance.mesh_weight, k as f64 * dt, &y, &u);
            y = stepper.step(&y, &u);
        }
        let value = acc / instance.horizon;
        evaluated += 1;
        if value < best_value {
            best_value = value;
            best_digits.copy_from_slice(&digit);
        }

        // odometer: last digit fastest, so digit[0] varies slowest
        let mut pos = digits;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            digit[pos] += 1;
            if digit[pos] < levels {
                break;
            }
            digit[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX {
            break;
        }
    }

    let controls: Vec<DVector<f64>> = (0..nt)
        .map(|k| DVector::from_iterator(m, (0..m).map(|i| level_value(i, best_digits[k * m + i]))))
        .collect();
    let trajectory = propagate(&stepper, &y0, &controls, dt);
    Ok(SolveResult {
        trajectory,
        value: best_value,
        iterations: evaluated,
        stationarity: 0.0,
        converged: true,
    })
}
