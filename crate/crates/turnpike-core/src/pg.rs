//! Projected-gradient engine shared by the dynamic solver, the periodic
//! augmented-Lagrangian loops, and the sampling-based storage bounds.
//!
//! The loop is Barzilai-Borwein projected descent with optional Nesterov
//! acceleration, backtracking on the local quadratic upper bound, and a
//! monotone restart: whenever an accelerated step would increase the
//! objective the momentum is dropped and the step retried from the current
//! iterate. Without acceleration the method is plainly monotone. Convergence
//! is declared on the fixed-point residual `|| z - proj(z - grad(z)) ||_inf`,
//! always re-verified with a fresh gradient at the candidate iterate.

use nalgebra::DVector;

/// Objective with an (optionally expensive) value/gradient oracle. `&mut`
/// lets implementations keep scratch buffers between calls.
pub(crate) trait PgProblem {
    fn value(&mut self, z: &DVector<f64>) -> f64;
    fn value_and_grad(&mut self, z: &DVector<f64>) -> (f64, DVector<f64>);
}

/// Box feasible set for the stacked variable (entries may be infinite).
pub(crate) struct PgBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl PgBounds {
    pub fn project(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn projected_step(&self, z: &DVector<f64>, g: &DVector<f64>, s: f64) -> DVector<f64> {
        let mut out = z - g * s;
        self.project(&mut out);
        out
    }

    /// Fixed-point residual of the projected-gradient map at unit step.
    pub fn stationarity(&self, z: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (z - self.projected_step(z, g, 1.0)).amax()
    }
}

pub(crate) struct PgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub accelerate: bool,
    /// `None`: Barzilai-Borwein step; `Some(s)`: fixed step with backtracking.
    pub fixed_step: Option<f64>,
}

pub(crate) struct PgOutcome {
    pub z: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
}

const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;
const MAX_BACKTRACKS: usize = 80;
/// Relative slack in the sufficient-decrease test; also the slack within
/// which the non-accelerated iteration is monotone.
const DECREASE_SLACK: f64 = 1e-12;

pub(crate) fn minimize(
    problem: &mut impl PgProblem,
    bounds: &PgBounds,
    z0: DVector<f64>,
    opts: &PgOptions,
) -> PgOutcome {
    let mut z = z0;
    bounds.project(&mut z);
    let mut f_z = problem.value(&z);
    let mut v = z.clone(); // extrapolated point (equals z when not accelerating)
    let mut t = 1.0_f64; // momentum scalar
    let mut s = opts.fixed_step.unwrap_or(1.0);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None; // (v, grad at v)

    for iter in 1..=opts.max_iterations {
        let (f_v, g_v) = problem.value_and_grad(&v);

        if let Some(s0) = opts.fixed_step {
            s = s0; // backtracking below may still shrink it for this iteration
        } else if let Some((pv, pg)) = &prev {
            let dv = &v - pv;
            let dg = &g_v - pg;
            let num = dv.dot(&dv);
            let den = dv.dot(&dg);
            if den > 0.0 && num > 0.0 {
                s = (num / den).clamp(STEP_MIN, STEP_MAX);
            }
        }
        prev = Some((v.clone(), g_v.clone()));

        // backtrack until the step satisfies the quadratic upper bound at v
        let mut z_new = bounds.projected_step(&v, &g_v, s);
        let mut f_new = problem.value(&z_new);
        let mut backtracks = 0;
        loop {
            let d = &z_new - &v;
            let bound = f_v + g_v.dot(&d) + d.norm_squared() / (2.0 * s)
                + DECREASE_SLACK * f_v.abs().max(1.0);
            if f_new <= bound || backtracks >= MAX_BACKTRACKS {
                break;
            }
            s *= 0.5;
            backtracks += 1;
            z_new = bounds.projected_step(&v, &g_v, s);
            f_new = problem.value(&z_new);
        }

        if backtracks >= MAX_BACKTRACKS {
            // no usable decrease direction left; report the exact residual
            let (_, g_z) = problem.value_and_grad(&z);
            let res = bounds.stationarity(&z, &g_z);
            return PgOutcome {
                z,
                value: f_z,
                iterations: iter,
                stationarity: res,
                converged: res <= opts.tolerance,
            };
        }

        if opts.accelerate && f_new > f_z + DECREASE_SLACK * f_z.abs().max(1.0) {
            // accelerated overshoot: drop momentum, retry from the iterate
            t = 1.0;
            v = z.clone();
            prev = None;
            continue;
        }

        let z_old = std::mem::replace(&mut z, z_new);
        f_z = f_new;

        // cheap trigger for the exact stationarity check
        let proxy = (&v - &z).amax() / s.clamp(1e-6, 1e6);
        if proxy <= opts.tolerance || iter % 25 == 0 || iter == opts.max_iterations {
            let (_, g_z) = problem.value_and_grad(&z);
            let res = bounds.stationarity(&z, &g_z);
            if res <= opts.tolerance {
                return PgOutcome {
                    z,
                    value: f_z,
                    iterations: iter,
                    stationarity: res,
                    converged: true,
                };
            }
        }

        if opts.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let coeff = (t - 1.0) / t_next;
            v = &z + (&z - &z_old) * coeff;
            bounds.project(&mut v);
            t = t_next;
        } else {
            v = z.clone();
        }
    }

    let (_, g_z) = problem.value_and_grad(&z);
    let res = bounds.stationarity(&z, &g_z);
    PgOutcome {
        z,
        value: f_z,
        iterations: opts.max_iterations,
        stationarity: res,
        converged: res <= opts.tolerance,
    }
}
