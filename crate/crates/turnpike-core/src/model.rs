//! Grids, dynamics, constraints, costs, and time stepping.
//!
//! Everything downstream (solvers, certificates, sweep diagnostics) works on
//! the vocabulary defined here: a 1-d interior grid with its mesh-weighted
//! inner product, linear dynamics `y' = A y + B u`, box bounds on the control,
//! and a quadratic tracking cost averaged over the horizon. Time is discretized
//! by implicit Euler and every time integral is read at left endpoints, so a
//! trajectory on `nt` steps carries `nt + 1` states and `nt` controls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Slack allowed when checking a control against its box. Projections land on
/// bounds exactly, so this only absorbs round-off picked up by callers that
/// reconstruct controls arithmetically (e.g. interpolation between iterates).
pub const CONTROL_FEASIBILITY_SLACK: f64 = 1e-12;

/// Uniform grid of `n` interior points on `(0, length)` with spacing `h`.
///
/// Boundary values are pinned to zero and never stored; the mesh-weighted
/// inner product `<x, z>_h = h * x . z` is the discrete counterpart of the
/// L2 pairing on the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub n: usize,
    pub length: f64,
    pub h: f64,
}

impl SpatialGrid {
    pub fn new(n: usize, length: f64) -> Self {
        assert!(n > 0, "grid needs at least one interior point");
        assert!(length > 0.0, "grid length must be positive");
        let h = length / (n as f64 + 1.0);
        Self { n, length, h }
    }

    /// Coordinates of the interior points, `x_i = (i + 1) h`.
    pub fn interior_points(&self) -> Vec<f64> {
        (0..self.n).map(|i| (i as f64 + 1.0) * self.h).collect()
    }
}

/// Mesh-weighted inner product `h * x . z`.
pub fn dot_h(mesh_weight: f64, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    mesh_weight * x.dot(z)
}

/// Squared mesh-weighted norm.
pub fn norm_h_sq(mesh_weight: f64, x: &DVector<f64>) -> f64 {
    mesh_weight * x.norm_squared()
}

/// Mesh-weighted norm.
pub fn norm_h(mesh_weight: f64, x: &DVector<f64>) -> f64 {
    norm_h_sq(mesh_weight, x).sqrt()
}

/// Second-difference matrix for the Dirichlet Laplacian on `grid`:
/// tridiagonal with `-2/h^2` on the diagonal and `1/h^2` off it.
///
/// The matrix is symmetric negative definite; its negation has eigenvalues
/// `(2/h^2) (1 - cos(j pi / (n+1)))`, `j = 1..n`.
pub fn build_laplacian_1d(grid: &SpatialGrid) -> DMatrix<f64> {
    let n = grid.n;
    let w = 1.0 / (grid.h * grid.h);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -2.0 * w;
        if i + 1 < n {
            a[(i, i + 1)] = w;
            a[(i + 1, i)] = w;
        }
    }
    a
}

/// Injection matrix of a distributed control supported on a subset of the
/// interior grid, together with the 0/1 indicator of that subset.
///
/// `support` lists zero-based interior indices; the injection has one column
/// `e_i` per support point, so controls live in `R^m` with `m = |support|`.
pub fn build_control_injection(
    n: usize,
    support: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if support.is_empty() {
        return Err(Error::EmptyControlSupport);
    }
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::DuplicateSupportIndex { index: pair[0] });
        }
    }
    let mut b = DMatrix::zeros(n, sorted.len());
    let mut mask = DVector::zeros(n);
    for (col, &i) in sorted.iter().enumerate() {
        if i >= n {
            return Err(Error::SupportIndexOutOfRange { index: i, n });
        }
        b[(i, col)] = 1.0;
        mask[i] = 1.0;
    }
    Ok((b, mask))
}

/// Single-lobe profile `amplitude * sin(pi x / length)` sampled on the grid.
/// This is the lowest Dirichlet eigenfunction: smooth, positive, zero at the
/// boundary — the workhorse initial state and tracking target.
pub fn bump_profile(grid: &SpatialGrid, amplitude: f64) -> DVector<f64> {
    mode_profile(grid, 1, amplitude)
}

/// Eigenfunction profile `amplitude * sin(j pi x / length)` on the grid.
pub fn mode_profile(grid: &SpatialGrid, mode: usize, amplitude: f64) -> DVector<f64> {
    assert!(mode >= 1, "mode index starts at 1");
    let pts = grid.interior_points();
    DVector::from_iterator(
        grid.n,
        pts.iter()
            .map(|&x| amplitude * (mode as f64 * std::f64::consts::PI * x / grid.length).sin()),
    )
}

/// Smallest eigenvalue of the symmetric part of `-a`.
///
/// For the heat generator this is the discrete Poincare constant: the slowest
/// decay rate of the uncontrolled dynamics, and the state-energy coefficient
/// in dissipation-rate thresholds.
pub fn smallest_decay_rate(a: &DMatrix<f64>) -> f64 {
    let sym = -(a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Componentwise box `lower <= u <= upper`; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxConstraints {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "box bounds have lengths {} and {}",
                    lower.len(),
                    upper.len()
                ),
            });
        }
        for i in 0..lower.len() {
            if !(lower[i] <= upper[i]) {
                return Err(Error::InfeasibleBox {
                    component: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Same scalar bounds on every component.
    pub fn uniform(m: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(m, lower),
            DVector::from_element(m, upper),
        )
    }

    /// No bounds at all (`[-inf, inf]` everywhere).
    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: DVector::from_element(m, f64::NEG_INFINITY),
            upper: DVector::from_element(m, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Euclidean projection onto the box.
    pub fn project(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn projected(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut v = u.clone();
        self.project(&mut v);
        v
    }

    /// First component violating the box beyond `slack`, if any.
    pub fn first_violation(&self, u: &DVector<f64>, slack: f64) -> Option<usize> {
        (0..u.len()).find(|&i| u[i] < self.lower[i] - slack || u[i] > self.upper[i] + slack)
    }

    /// Uniform sample inside the box; infinite bounds are truncated to
    /// `fallback` around zero so sampling always terminates.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, fallback: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                let lo = self.lower[i].max(-fallback);
                let hi = self.upper[i].min(fallback);
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            }),
        )
    }

    /// Random corner of the box (each component at one of its bounds),
    /// truncating infinite bounds to `fallback`.
    pub fn sample_corner<R: Rng>(&self, rng: &mut R, fallback: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                if rng.random_bool(0.5) {
                    self.lower[i].max(-fallback)
                } else {
                    self.upper[i].min(fallback)
                }
            }),
        )
    }
}

/// Linear time-invariant dynamics `y' = A y + B u`.
///
/// `time_invariant` is informational: every constructor in this crate builds
/// autonomous dynamics, and the stepper relies on it to cache one
/// factorization per `(A, dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub time_invariant: bool,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: format!("generator is {}x{}, expected square", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "injection has {} rows but the state dimension is {}",
                    b.nrows(),
                    a.nrows()
                ),
            });
        }
        Ok(Self {
            a,
            b,
            time_invariant: true,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Tracking target: fixed in time, or a periodic piecewise-constant sample
/// path repeated with period `period`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostTarget {
    Fixed(DVector<f64>),
    Periodic {
        period: f64,
        samples: Vec<DVector<f64>>,
    },
}

impl CostTarget {
    /// Target value at time `t >= 0`. Periodic targets are piecewise constant
    /// on their sampling grid; the small nudge keeps `t` landing on a sample
    /// boundary in the right cell despite round-off in `k * dt`.
    pub fn at(&self, t: f64) -> &DVector<f64> {
        match self {
            CostTarget::Fixed(d) => d,
            CostTarget::Periodic { period, samples } => {
                let phase = (t / period).rem_euclid(1.0);
                let idx = ((phase * samples.len() as f64 + 1e-9).floor() as usize)
                    % samples.len();
                &samples[idx]
            }
        }
    }

    /// Time average of the target over one period (the target itself when
    /// fixed). The steady-state problem of a periodic instance tracks this.
    pub fn mean(&self) -> DVector<f64> {
        match self {
            CostTarget::Fixed(d) => d.clone(),
            CostTarget::Periodic { samples, .. } => {
                let mut acc = DVector::zeros(samples[0].len());
                for s in samples {
                    acc += s;
                }
                acc / samples.len() as f64
            }
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            CostTarget::Fixed(d) => d.len(),
            CostTarget::Periodic { samples, .. } => samples[0].len(),
        }
    }
}

/// Quadratic tracking cost density
/// `f0(t, y, u) = (state_weight ||y - target(t)||_h^2 + control_weight ||u||_h^2) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub target: CostTarget,
    pub state_weight: f64,
    pub control_weight: f64,
}

impl CostSpec {
    pub fn tracking(target: DVector<f64>) -> Self {
        Self {
            target: CostTarget::Fixed(target),
            state_weight: 1.0,
            control_weight: 1.0,
        }
    }

    /// Cost density at time `t` (the running integrand, not yet averaged).
    pub fn stage(&self, mesh_weight: f64, t: f64, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let d = self.target.at(t);
        0.5 * (self.state_weight * mesh_weight * (y - d).norm_squared()
            + self.control_weight * mesh_weight * u.norm_squared())
    }
}

/// A fully discretized control problem on the horizon `[0, horizon]` with
/// `nt` implicit-Euler steps.
///
/// `mesh_weight` is the grid spacing `h` for distributed problems and `1` for
/// generic finite-dimensional ones, so all inner products below are written
/// once against `<., .>_h`. `control_mask` records the 0/1 support indicator
/// of a distributed control (all ones when the injection is dense).
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub dynamics: LinearDynamics,
    pub cost: CostSpec,
    pub controls: BoxConstraints,
    pub y0: Option<DVector<f64>>,
    pub horizon: f64,
    pub nt: usize,
    pub control_mask: DVector<f64>,
    pub mesh_weight: f64,
}

impl ProblemInstance {
    /// Heat equation on `grid` with a distributed control on `support`
    /// (zero-based interior indices), tracking target `y_d`.
    pub fn heat_1d(
        grid: &SpatialGrid,
        support: &[usize],
        y_d: DVector<f64>,
        controls: BoxConstraints,
        y0: Option<DVector<f64>>,
        horizon: f64,
        nt: usize,
    ) -> Result<Self> {
        let a = build_laplacian_1d(grid);
        let (b, mask) = build_control_injection(grid.n, support)?;
        let dynamics = LinearDynamics::new(a, b)?;
        let instance = Self {
            dynamics,
            cost: CostSpec::tracking(y_d),
            controls,
            y0,
            horizon,
            nt,
            control_mask: mask,
            mesh_weight: grid.h,
        };
        instance.validate()?;
        Ok(instance)
    }

    /// Generic finite-dimensional linear system; the mesh weight is 1.
    pub fn finite_dim(
        dynamics: LinearDynamics,
        cost: CostSpec,
        controls: BoxConstraints,
        y0: Option<DVector<f64>>,
        horizon: f64,
        nt: usize,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        let instance = Self {
            dynamics,
            cost,
            controls,
            y0,
            horizon,
            nt,
            control_mask: DVector::from_element(n, 1.0),
            mesh_weight: 1.0,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dynamics.state_dim();
        let m = self.dynamics.control_dim();
        if self.controls.dim() != m {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "box has {} components but the control dimension is {}",
                    self.controls.dim(),
                    m
                ),
            });
        }
        if self.cost.target.state_dim() != n {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "target has {} components but the state dimension is {}",
                    self.cost.target.state_dim(),
                    n
                ),
            });
        }
        if let Some(y0) = &self.y0 {
            if y0.len() != n {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "initial state has {} components but the state dimension is {}",
                        y0.len(),
                        n
                    ),
                });
            }
        }
        if !(self.horizon > 0.0) || self.nt == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("horizon {} with {} steps", self.horizon, self.nt),
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// Copy of this instance on horizon `t` at (approximately) the same time
    /// step: `nt` is rounded so `t / nt` matches the base `dt`.
    pub fn with_horizon(&self, t: f64) -> Self {
        let nt = ((t / self.dt()).round() as usize).max(1);
        let mut other = self.clone();
        other.horizon = t;
        other.nt = nt;
        other
    }
}

/// Discrete trajectory: `nt + 1` states at the grid times and `nt` controls,
/// `controls[k]` acting on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn nt(&self) -> usize {
        self.controls.len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Implicit-Euler stepper with the factorization of `I - dt A` (and of its
/// transpose, for adjoint sweeps) computed once per `(A, dt)`.
pub struct ImplicitEulerStepper {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    b: DMatrix<f64>,
    dt: f64,
}

impl ImplicitEulerStepper {
    pub fn new(dynamics: &LinearDynamics, dt: f64) -> Result<Self> {
        assert!(dt > 0.0, "time step must be positive");
        let n = dynamics.state_dim();
        let system = DMatrix::identity(n, n) - &dynamics.a * dt;
        let lu = system.clone().lu();
        let lu_t = system.transpose().lu();
        if lu.determinant().abs() == 0.0 {
            return Err(Error::SingularGenerator);
        }
        Ok(Self {
            lu,
            lu_t,
            b: dynamics.b.clone(),
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step: solve `(I - dt A) y_next = y + dt B u`.
    pub fn step(&self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let rhs = y + &self.b * u * self.dt;
        self.lu.solve(&rhs).expect("factorization checked at build")
    }

    /// Solve `(I - dt A)^T x = rhs`; the propagation map of adjoint sweeps.
    pub(crate) fn solve_transposed(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu_t.solve(rhs).expect("factorization checked at build")
    }

    pub(crate) fn injection(&self) -> &DMatrix<f64> {
        &self.b
    }
}

/// One implicit-Euler step without a cached stepper. Convenience for
/// single-shot use; loops should build an [`ImplicitEulerStepper`] instead.
pub fn step_implicit_euler(
    dynamics: &LinearDynamics,
    dt: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(ImplicitEulerStepper::new(dynamics, dt)?.step(y, u))
}

/// Integrate the instance's dynamics from its own initial state.
pub fn simulate(instance: &ProblemInstance, controls: &[DVector<f64>]) -> Result<Trajectory> {
    let y0 = instance.y0.as_ref().ok_or(Error::MissingInitialState)?;
    simulate_from(instance, y0, controls)
}

/// Integrate the instance's dynamics from an explicit initial state,
/// rejecting inadmissible controls with the first offending index.
pub fn simulate_from(
    instance: &ProblemInstance,
    y0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Trajectory> {
    if controls.len() != instance.nt {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{} controls supplied for {} time steps",
                controls.len(),
                instance.nt
            ),
        });
    }
    for (k, u) in controls.iter().enumerate() {
        if u.len() != instance.control_dim() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "control {} has {} components, expected {}",
                    k,
                    u.len(),
                    instance.control_dim()
                ),
            });
        }
        if let Some(i) = instance
            .controls
            .first_violation(u, CONTROL_FEASIBILITY_SLACK)
        {
            return Err(Error::ControlOutOfBounds {
                step: k,
                component: i,
                value: u[i],
                lower: instance.controls.lower[i],
                upper: instance.controls.upper[i],
            });
        }
    }
    let stepper = ImplicitEulerStepper::new(&instance.dynamics, instance.dt())?;
    Ok(propagate(&stepper, y0, controls, instance.dt()))
}

/// Forward sweep without admissibility checks; shared by the solvers, which
/// only ever produce projected (hence feasible) controls.
pub(crate) fn propagate(
    stepper: &ImplicitEulerStepper,
    y0: &DVector<f64>,
    controls: &[DVector<f64>],
    dt: f64,
) -> Trajectory {
    let nt = controls.len();
    let mut states = Vec::with_capacity(nt + 1);
    let mut times = Vec::with_capacity(nt + 1);
    states.push(y0.clone());
    times.push(0.0);
    for (k, u) in controls.iter().enumerate() {
        let next = stepper.step(&states[k], u);
        states.push(next);
        times.push((k as f64 + 1.0) * dt);
    }
    Trajectory {
        times,
        states,
        controls: controls.to_vec(),
    }
}

/// Standard normal via Box-Muller; enough randomness plumbing for the few
/// spots that need isotropic directions.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random_range(0.0_f64..1.0);
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random_range(0.0_f64..1.0);
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Uniform direction on the unit sphere in `R^n`.
pub(crate) fn unit_direction<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| standard_normal(rng)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n, 1.0)
    }

    #[test]
    fn laplacian_single_point_is_minus_two_over_h_squared() {
        // n = 1, length = 1: h = 1/2, stencil value -2/h^2 = -8
        let a = build_laplacian_1d(&unit_grid(1));
        assert_eq!(a.nrows(), 1);
        assert_eq!(a[(0, 0)], -8.0);
    }

    #[test]
    fn laplacian_three_points_matches_stencil() {
        // n = 3, length = 1: h = 1/4, 1/h^2 = 16
        let a = build_laplacian_1d(&unit_grid(3));
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[-32.0, 16.0, 0.0, 16.0, -32.0, 16.0, 0.0, 16.0, -32.0],
        );
        assert_eq!(a, expected);
    }

    #[test]
    fn laplacian_is_exactly_symmetric() {
        let a = build_laplacian_1d(&unit_grid(17));
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn control_injection_full_support_is_identity() {
        let support: Vec<usize> = (0..4).collect();
        let (b, mask) = build_control_injection(4, &support).unwrap();
        assert_eq!(b, DMatrix::identity(4, 4));
        assert_eq!(mask, DVector::from_element(4, 1.0));
    }

    #[test]
    fn control_injection_partial_support() {
        let (b, mask) = build_control_injection(4, &[1, 3]).unwrap();
        assert_eq!(b.ncols(), 2);
        assert_eq!(b[(1, 0)], 1.0);
        assert_eq!(b[(3, 1)], 1.0);
        assert_eq!(b.column(0).sum(), 1.0);
        assert_eq!(mask, DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn control_injection_rejects_empty_support() {
        match build_control_injection(4, &[]) {
            Err(Error::EmptyControlSupport) => {}
            other => panic!("expected EmptyControlSupport, got {other:?}"),
        }
    }

    #[test]
    fn control_injection_rejects_out_of_range_and_duplicates() {
        assert!(matches!(
            build_control_injection(4, &[4]),
            Err(Error::SupportIndexOutOfRange { index: 4, n: 4 })
        ));
        assert!(matches!(
            build_control_injection(4, &[2, 2]),
            Err(Error::DuplicateSupportIndex { index: 2 })
        ));
    }

    #[test]
    fn box_rejects_crossed_bounds() {
        let lower = DVector::from_vec(vec![0.0, 1.0]);
        let upper = DVector::from_vec(vec![1.0, 0.5]);
        assert!(matches!(
            BoxConstraints::new(lower, upper),
            Err(Error::InfeasibleBox { component: 1, .. })
        ));
    }

    #[test]
    fn box_projection_is_idempotent_and_feasible() {
        let b = BoxConstraints::uniform(3, -1.0, 1.0).unwrap();
        let mut v = DVector::from_vec(vec![-5.0, 0.3, 2.0]);
        b.project(&mut v);
        assert_eq!(v, DVector::from_vec(vec![-1.0, 0.3, 1.0]));
        assert!(b.first_violation(&v, 0.0).is_none());
        let w = b.projected(&v);
        assert_eq!(w, v);
    }

    #[test]
    fn identity_dynamics_step_matches_closed_form() {
        // y' = -y + u, implicit Euler: y+ = (y + dt u) / (1 + dt)
        let dyn_ = LinearDynamics::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let y = DVector::from_element(1, 2.0);
        let u = DVector::from_element(1, 0.5);
        let dt = 0.1;
        let next = step_implicit_euler(&dyn_, dt, &y, &u).unwrap();
        let expected = (2.0 + 0.1 * 0.5) / 1.1;
        assert!((next[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn unforced_heat_decays_monotonically() {
        let grid = unit_grid(7);
        let inst = ProblemInstance::heat_1d(
            &grid,
            &(0..7).collect::<Vec<_>>(),
            DVector::zeros(7),
            BoxConstraints::uniform(7, -1.0, 1.0).unwrap(),
            Some(bump_profile(&grid, 1.0)),
            1.0,
            50,
        )
        .unwrap();
        let zeros = vec![DVector::zeros(7); 50];
        let traj = simulate(&inst, &zeros).unwrap();
        for k in 0..traj.nt() {
            let now = norm_h(grid.h, &traj.states[k]);
            let next = norm_h(grid.h, &traj.states[k + 1]);
            assert!(next < now, "decay violated at step {k}: {next} >= {now}");
        }
    }

    #[test]
    fn equilibrium_is_preserved_exactly_by_the_stepper() {
        // steady pair: -A y_s = B u_s; one step from y_s under u_s returns y_s
        let grid = unit_grid(5);
        let a = build_laplacian_1d(&grid);
        let (b, _) = build_control_injection(5, &[0, 1, 2, 3, 4]).unwrap();
        let u_s = DVector::from_element(5, 0.7);
        let y_s = (-&a).lu().solve(&(&b * &u_s)).unwrap();
        let dyn_ = LinearDynamics::new(a, b).unwrap();
        let stepper = ImplicitEulerStepper::new(&dyn_, 0.05).unwrap();
        let y1 = stepper.step(&y_s, &u_s);
        assert!((&y1 - &y_s).amax() < 1e-13);
    }

    #[test]
    fn simulate_rejects_first_violating_control() {
        let grid = unit_grid(3);
        let inst = ProblemInstance::heat_1d(
            &grid,
            &[0, 1, 2],
            DVector::zeros(3),
            BoxConstraints::uniform(3, -1.0, 1.0).unwrap(),
            Some(DVector::zeros(3)),
            0.1,
            3,
        )
        .unwrap();
        let mut controls = vec![DVector::zeros(3); 3];
        controls[1][2] = 1.5; // first offence: step 1, component 2
        controls[2][0] = -3.0;
        match simulate(&inst, &controls) {
            Err(Error::ControlOutOfBounds {
                step: 1,
                component: 2,
                ..
            }) => {}
            other => panic!("expected step-1 component-2 rejection, got {other:?}"),
        }
    }

    #[test]
    fn periodic_target_indexing_is_stable_on_sample_boundaries() {
        let s0 = DVector::from_element(1, 0.0);
        let s1 = DVector::from_element(1, 1.0);
        let target = CostTarget::Periodic {
            period: 1.0,
            samples: vec![s0, s1],
        };
        // dt = 0.1 grid: t in [0, 0.5) -> sample 0, [0.5, 1) -> sample 1
        assert_eq!(target.at(0.0)[0], 0.0);
        assert_eq!(target.at(0.4999)[0], 0.0);
        assert_eq!(target.at(0.5)[0], 1.0);
        assert_eq!(target.at(0.9)[0], 1.0);
        assert_eq!(target.at(1.0)[0], 0.0); // wraps
        assert_eq!(target.at(2.5)[0], 1.0);
        // mean is the sample average
        assert_eq!(target.mean()[0], 0.5);
    }

    #[test]
    fn decay_rate_of_scalar_system() {
        let a = DMatrix::from_element(1, 1, -3.0);
        assert!((smallest_decay_rate(&a) - 3.0).abs() < 1e-14);
    }
}
