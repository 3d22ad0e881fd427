//! Error type shared by every module of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building or solving a problem.
///
/// Solver non-convergence on the dynamic problems is *not* an error: `solve`
/// reports it through `SolveResult::converged` so horizon sweeps can flag the
/// affected row and keep going. The variants here are structural defects
/// (bad dimensions, empty supports), genuinely failed computations (singular
/// generator, diverged Newton iteration), or refusals (search space too big).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A distributed control with an empty support acts on nothing.
    #[error("control support is empty")]
    EmptyControlSupport,

    /// Support index outside the interior grid `0..n`.
    #[error("control support index {index} out of range for {n} interior points")]
    SupportIndexOutOfRange { index: usize, n: usize },

    /// The same interior point was listed twice in a control support.
    #[error("duplicate control support index {index}")]
    DuplicateSupportIndex { index: usize },

    /// A box with `lower > upper` somewhere admits no control at all.
    #[error("infeasible box constraint at component {component}: lower {lower} > upper {upper}")]
    InfeasibleBox {
        component: usize,
        lower: f64,
        upper: f64,
    },

    /// Operands whose sizes cannot be reconciled; `context` says which.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// A control handed to `simulate` leaves the admissible box.
    #[error(
        "control at step {step}, component {component} violates bounds: \
         {value} outside [{lower}, {upper}]"
    )]
    ControlOutOfBounds {
        step: usize,
        component: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// The instance has no initial state but the operation needs one.
    #[error("instance has no initial state and none was supplied")]
    MissingInitialState,

    /// Exhaustive enumeration needs finite bounds on every component.
    #[error("brute-force enumeration requires finite control bounds (component {component})")]
    UnboundedBox { component: usize },

    /// Refusing an enumeration that would not finish in reasonable time.
    #[error("search space of {size:.3e} control sequences exceeds the limit of {limit:.1e}")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    /// The steady-state map needs an invertible generator matrix.
    #[error("generator matrix is singular; no unique steady state")]
    SingularGenerator,

    /// Newton iteration left its basin (residual grew or became non-finite).
    #[error("Newton iteration diverged after {iterations} steps (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    /// A steady-state solve ran out of iterations before meeting its tolerance.
    #[error("steady-state solve stalled at residual {residual:.3e} after {iterations} iterations")]
    StaticNonConvergence { iterations: usize, residual: f64 },

    /// An operation over a collection received nothing to work on.
    #[error("empty collection: {context}")]
    EmptyCollection { context: &'static str },

    /// Rate fitting needs at least three usable data points.
    #[error("insufficient data to fit a rate: need at least 3 positive gaps, have {have}")]
    InsufficientData { have: usize },

    /// A lower-level solve inside a composite operation failed.
    #[error("inner solve failed: {context}")]
    SolveFailure { context: String },
}
