//! Numerical laboratory for constrained linear-quadratic control: discretize,
//! solve, and cross-examine the long-horizon behavior of tracking problems.
//!
//! The crate discretizes a 1-d heat equation (or any finite-dimensional
//! linear system) with box-constrained distributed controls, solves the
//! finite-horizon, steady-state, and periodic tracking problems, and then
//! measures how optimal trajectories concentrate near the steady solution:
//! deviation measures, dissipation certificates with quadratic or linear
//! storage functions, duality-based rate checks, and horizon sweeps that fit
//! the decay of the value gap.
//!
//! Modules:
//! - [`model`]: grids, dynamics, constraints, costs, implicit-Euler stepping;
//! - [`ocp`]: the finite-horizon and periodic solvers plus a brute-force
//!   oracle for tiny instances;
//! - [`statics`]: steady-state solvers (linear-quadratic, cubic semilinear,
//!   generic finite-dimensional) and Lagrangian/duality checks;
//! - [`dissipativity`]: supply rates, storage functions, residual
//!   certificates, and dissipation-rate estimation;
//! - [`turnpike`]: deviation measures, horizon sweeps, and gap-rate fits.

pub mod dissipativity;
pub mod error;
pub mod model;
pub mod ocp;
mod pg;
pub mod statics;
pub mod turnpike;

/// Crate version, re-exported for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use model::{
    BoxConstraints, CostSpec, CostTarget, LinearDynamics, ProblemInstance, SpatialGrid,
    Trajectory,
};
pub use ocp::{SolveOptions, SolveResult, StepRule};
pub use statics::StaticSolution;
