//! Experiment configuration: strict JSON schema, defaults, and the
//! translation into solver-ready objects.
//!
//! Unknown keys are rejected everywhere, and schema errors carry the JSON
//! path of the offending key. Validation (dimensions, signs, emptiness) runs
//! before any solve starts.

use anyhow::{anyhow, bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use turnpike_core::model::{bump_profile, mode_profile, norm_h};
use turnpike_core::turnpike::ComparisonFunction;
use turnpike_core::{
    BoxConstraints, CostTarget, LinearDynamics, ProblemInstance, SolveOptions, SpatialGrid,
    StepRule,
};

/// Top-level experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemConfig,
    /// Sweep horizons (required for dynamic problems).
    #[serde(default)]
    pub horizons: Vec<f64>,
    /// Deviation thresholds: absolute numbers or fractions of the target's
    /// mesh norm.
    #[serde(default)]
    pub epsilons: Vec<EpsilonSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub certificates: CertificateConfig,
    /// Default output directory (overridden by `--out`).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Problem selector. `kind` picks the variant; the remaining keys are the
/// variant's own fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemConfig {
    #[serde(rename = "heat-1d")]
    Heat1d(HeatProblem),
    FiniteDim(FiniteDimProblem),
    SemilinearStatic(SemilinearProblem),
}

/// Distributed control of the 1-d heat equation with Dirichlet boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatProblem {
    /// Interior grid points.
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Zero-based interior indices carrying a control (default: all).
    #[serde(default)]
    pub support: Option<Vec<usize>>,
    pub target: TargetConfig,
    #[serde(default = "default_bounds")]
    pub bounds: BoundsConfig,
    /// Initial state profile (default: rest).
    #[serde(default)]
    pub initial: Option<ProfileConfig>,
    #[serde(default = "one")]
    pub state_weight: f64,
    #[serde(default = "one")]
    pub control_weight: f64,
    /// Time step, kept fixed across all sweep horizons.
    #[serde(default = "default_dt")]
    pub dt: f64,
}

/// Generic finite-dimensional linear system with dense matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteDimProblem {
    /// Row-major generator.
    pub a: Vec<Vec<f64>>,
    /// Row-major control injection.
    pub b: Vec<Vec<f64>>,
    pub target: TargetConfig,
    #[serde(default = "default_bounds")]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Steady-state box on the state (enables the feasibility/interior
    /// probes of the generic steady solver).
    #[serde(default)]
    pub state_bounds: Option<BoundsConfig>,
    #[serde(default = "one")]
    pub state_weight: f64,
    #[serde(default = "one")]
    pub control_weight: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

/// Steady cubic semilinear problem (no dynamics, no sweep).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemilinearProblem {
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    pub target: ProfileConfig,
    #[serde(default = "default_duality_samples")]
    pub duality_samples: usize,
    #[serde(default = "default_duality_radius")]
    pub duality_radius: f64,
}

/// Tracking target: fixed profile, explicit periodic samples, or a profile
/// with a sinusoidally modulated amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetConfig {
    Static(ProfileConfig),
    PeriodicSamples(PeriodicSamples),
    Modulated(ModulatedTarget),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicSamples {
    pub period: f64,
    /// Piecewise-constant samples, uniformly spaced over one period.
    pub samples: Vec<ProfileConfig>,
}

/// `profile * (base + depth * sin(2 pi t / period))`, sampled piecewise
/// constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatedTarget {
    pub period: f64,
    pub profile: ProfileConfig,
    #[serde(default = "one")]
    pub base: f64,
    pub depth: f64,
    #[serde(default = "default_samples_per_period")]
    pub samples_per_period: usize,
}

/// State-space profile. Shapes (`bump`, `mode`) need a grid and are only
/// valid for heat problems; `constant` and `values` work everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileConfig {
    Bump(BumpProfile),
    Mode(ModeProfile),
    Constant(ConstantProfile),
    Values(ValuesProfile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpProfile {
    /// Amplitude of the first Dirichlet mode.
    pub bump: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeProfile {
    pub mode: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantProfile {
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesProfile {
    pub values: Vec<f64>,
}

/// Deviation threshold: a number, or `{"relative": r}` resolving to
/// `r * ||mean target||_h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Absolute(f64),
    Relative(RelativeEpsilon),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeEpsilon {
    pub relative: f64,
}

/// Componentwise box, uniform or per component.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsConfig {
    Uniform { lower: f64, upper: f64 },
    PerComponent { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub accelerate: bool,
    /// Fixed trial step instead of the spectral rule.
    pub fixed_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50_000,
            accelerate: true,
            fixed_step: None,
        }
    }
}

/// Which certificate the sampled-trajectory stage checks. The horizon sweep
/// itself always pairs the cost-shift supply with the duality storage: those
/// are the objects its gap/measure bounds are stated for.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateConfig {
    pub storage: StorageKind,
    pub supply: SupplyKind,
    /// Radius of the state ball carrying the storage bound.
    pub state_ball_radius: f64,
    pub include_control_in_distance: bool,
    pub beta: BetaConfig,
    /// Random admissible trajectories checked against the certificate.
    pub sample_trajectories: usize,
    /// Radius of the initial-state cube for those samples.
    pub sample_radius: f64,
    pub duality_samples: usize,
    pub duality_radius: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            storage: StorageKind::Duality,
            supply: SupplyKind::ShiftedCost,
            state_ball_radius: 2.0,
            include_control_in_distance: true,
            beta: BetaConfig::default(),
            sample_trajectories: 100,
            sample_radius: 0.5,
            duality_samples: 100,
            duality_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageKind {
    /// `S(y) = <p_s, y>_h` from the steady adjoint.
    Duality,
    /// `S(y) = ||y||_h^2 / 2`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupplyKind {
    /// Running cost shifted by the steady value.
    ShiftedCost,
    /// `<y, B u>_h + ||u||_h^2`.
    Bilinear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaConfig {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            coefficient: 1.0,
            exponent: 2.0,
        }
    }
}

impl BetaConfig {
    pub fn build(&self) -> ComparisonFunction {
        ComparisonFunction {
            coefficient: self.coefficient,
            exponent: self.exponent,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_length() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.02
}
fn default_duality_samples() -> usize {
    100
}
fn default_duality_radius() -> f64 {
    0.1
}
fn default_samples_per_period() -> usize {
    50
}
fn default_bounds() -> BoundsConfig {
    BoundsConfig::Uniform {
        lower: -1.0,
        upper: 1.0,
    }
}

/// Parse and validate a configuration document. Schema errors name the JSON
/// path of the offending key.
pub fn parse_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| anyhow!("config schema error at `{}`: {}", e.path(), e.inner()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Fail-fast semantic validation (dimensions, signs, emptiness).
    pub fn validate(&self) -> anyhow::Result<()> {
        match &self.problem {
            ProblemConfig::Heat1d(p) => {
                if p.n == 0 {
                    bail!("problem.n must be positive");
                }
                if !(p.length > 0.0) {
                    bail!("problem.length must be positive");
                }
                if !(p.dt > 0.0) {
                    bail!("problem.dt must be positive");
                }
                if let Some(support) = &p.support {
                    if support.is_empty() {
                        bail!("problem.support must be nonempty when given");
                    }
                }
                self.validate_dynamic()?;
            }
            ProblemConfig::FiniteDim(p) => {
                let n = p.a.len();
                if n == 0 || p.a.iter().any(|row| row.len() != n) {
                    bail!("problem.a must be a nonempty square row-major matrix");
                }
                if p.b.len() != n {
                    bail!("problem.b must have one row per state component");
                }
                let m = p.b[0].len();
                if m == 0 || p.b.iter().any(|row| row.len() != m) {
                    bail!("problem.b rows must share a positive length");
                }
                if !(p.dt > 0.0) {
                    bail!("problem.dt must be positive");
                }
                self.validate_dynamic()?;
            }
            ProblemConfig::SemilinearStatic(p) => {
                if p.n == 0 {
                    bail!("problem.n must be positive");
                }
                if p.duality_samples == 0 {
                    bail!("problem.duality_samples must be positive");
                }
                if !(p.duality_radius > 0.0) {
                    bail!("problem.duality_radius must be positive");
                }
                if !self.horizons.is_empty() {
                    bail!("horizons have no meaning for a static problem");
                }
            }
        }
        Ok(())
    }

    fn validate_dynamic(&self) -> anyhow::Result<()> {
        if self.horizons.is_empty() {
            bail!("horizons must be nonempty");
        }
        if self.horizons.iter().any(|t| !(*t > 0.0)) {
            bail!("horizons must be positive");
        }
        if self.epsilons.is_empty() {
            bail!("epsilons must be nonempty");
        }
        for (i, e) in self.epsilons.iter().enumerate() {
            let v = match e {
                EpsilonSpec::Absolute(v) => *v,
                EpsilonSpec::Relative(r) => r.relative,
            };
            if !(v > 0.0) {
                bail!("epsilons[{i}] must be positive");
            }
        }
        if !(self.solver.tolerance > 0.0) {
            bail!("solver.tolerance must be positive");
        }
        let c = &self.certificates;
        if !(c.state_ball_radius > 0.0) {
            bail!("certificates.state_ball_radius must be positive");
        }
        if !(c.beta.coefficient > 0.0) || !(c.beta.exponent > 0.0) {
            bail!("certificates.beta must have positive coefficient and exponent");
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            step_rule: match self.solver.fixed_step {
                Some(s) => StepRule::Fixed(s),
                None => StepRule::BarzilaiBorwein,
            },
            accelerate: self.solver.accelerate,
            free_initial: false,
            periodic: false,
            seed: self.seed,
        }
    }
}

impl BoundsConfig {
    pub fn build(&self, m: usize, what: &str) -> anyhow::Result<BoxConstraints> {
        let (lower, upper) = match self {
            BoundsConfig::Uniform { lower, upper } => (
                DVector::from_element(m, *lower),
                DVector::from_element(m, *upper),
            ),
            BoundsConfig::PerComponent { lower, upper } => {
                if lower.len() != m || upper.len() != m {
                    bail!("{what}: expected {m} components");
                }
                (
                    DVector::from_vec(lower.clone()),
                    DVector::from_vec(upper.clone()),
                )
            }
        };
        BoxConstraints::new(lower, upper).with_context(|| format!("{what}: invalid box"))
    }

    /// Single-component box taken from the first configured component (used
    /// by the downscaled oracle problem).
    pub fn build_first(&self, what: &str) -> anyhow::Result<BoxConstraints> {
        let (lo, hi) = match self {
            BoundsConfig::Uniform { lower, upper } => (*lower, *upper),
            BoundsConfig::PerComponent { lower, upper } => {
                let (Some(lo), Some(hi)) = (lower.first(), upper.first()) else {
                    bail!("{what}: empty component lists");
                };
                (*lo, *hi)
            }
        };
        BoxConstraints::new(
            DVector::from_element(1, lo),
            DVector::from_element(1, hi),
        )
        .with_context(|| format!("{what}: invalid box"))
    }
}

impl ProfileConfig {
    /// Materialize the profile; `grid` is required for shaped profiles.
    pub fn build(&self, n: usize, grid: Option<&SpatialGrid>, what: &str) -> anyhow::Result<DVector<f64>> {
        match self {
            ProfileConfig::Bump(b) => {
                let grid = grid.ok_or_else(|| anyhow!("{what}: bump profile needs a grid"))?;
                Ok(bump_profile(grid, b.bump))
            }
            ProfileConfig::Mode(m) => {
                let grid = grid.ok_or_else(|| anyhow!("{what}: mode profile needs a grid"))?;
                if m.mode == 0 || m.mode > n {
                    bail!("{what}: mode must lie in 1..={n}");
                }
                Ok(mode_profile(grid, m.mode, m.amplitude))
            }
            ProfileConfig::Constant(c) => Ok(DVector::from_element(n, c.constant)),
            ProfileConfig::Values(v) => {
                if v.values.len() != n {
                    bail!("{what}: expected {n} values, got {}", v.values.len());
                }
                Ok(DVector::from_vec(v.values.clone()))
            }
        }
    }
}

impl TargetConfig {
    pub fn build(&self, n: usize, grid: Option<&SpatialGrid>) -> anyhow::Result<CostTarget> {
        match self {
            TargetConfig::Static(p) => Ok(CostTarget::Fixed(p.build(n, grid, "target")?)),
            TargetConfig::PeriodicSamples(ps) => {
                if !(ps.period > 0.0) {
                    bail!("target period must be positive");
                }
                if ps.samples.is_empty() {
                    bail!("target samples must be nonempty");
                }
                let samples = ps
                    .samples
                    .iter()
                    .map(|p| p.build(n, grid, "target sample"))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                Ok(CostTarget::Periodic {
                    period: ps.period,
                    samples,
                })
            }
            TargetConfig::Modulated(m) => {
                if !(m.period > 0.0) {
                    bail!("target period must be positive");
                }
                if m.samples_per_period == 0 {
                    bail!("target samples_per_period must be positive");
                }
                let profile = m.profile.build(n, grid, "target profile")?;
                let samples = (0..m.samples_per_period)
                    .map(|j| {
                        let phase =
                            2.0 * std::f64::consts::PI * j as f64 / m.samples_per_period as f64;
                        &profile * (m.base + m.depth * phase.sin())
                    })
                    .collect();
                Ok(CostTarget::Periodic {
                    period: m.period,
                    samples,
                })
            }
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, TargetConfig::Static(_))
    }
}

/// Everything the runner needs, translated into solver objects.
pub struct BuiltExperiment {
    /// Dynamic instance (absent for the static semilinear problem). Horizon
    /// is set to the first sweep horizon; rows re-derive their own.
    pub instance: Option<ProblemInstance>,
    /// Steady-state box for the generic finite-dimensional solve.
    pub state_bounds: Option<BoxConstraints>,
    /// `(grid, target, duality samples, duality radius)` of the semilinear
    /// problem.
    pub semilinear: Option<(SpatialGrid, DVector<f64>, usize, f64)>,
    pub horizons: Vec<f64>,
    /// Resolved absolute thresholds.
    pub epsilons: Vec<f64>,
    /// Period of a periodic target (drives the orbit stage).
    pub period: Option<f64>,
    pub solver: SolveOptions,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Translate the validated config into core objects.
    pub fn build(&self) -> anyhow::Result<BuiltExperiment> {
        match &self.problem {
            ProblemConfig::Heat1d(p) => {
                let grid = SpatialGrid::new(p.n, p.length);
                let support: Vec<usize> = match &p.support {
                    Some(s) => s.clone(),
                    None => (0..p.n).collect(),
                };
                let target = p.target.build(p.n, Some(&grid))?;
                let bounds = p.bounds.build(support.len(), "bounds")?;
                let initial = match &p.initial {
                    Some(prof) => prof.build(p.n, Some(&grid), "initial")?,
                    None => DVector::zeros(p.n), // rest
                };
                let horizon = self.horizons[0];
                let nt = steps_for(horizon, p.dt)?;
                let mut instance = ProblemInstance::heat_1d(
                    &grid,
                    &support,
                    DVector::zeros(p.n),
                    bounds,
                    Some(initial),
                    horizon,
                    nt,
                )?;
                instance.cost.target = target;
                instance.cost.state_weight = p.state_weight;
                instance.cost.control_weight = p.control_weight;
                instance.validate()?;
                self.finish_dynamic(instance, None, p.dt)
            }
            ProblemConfig::FiniteDim(p) => {
                let n = p.a.len();
                let m = p.b[0].len();
                let a = DMatrix::from_fn(n, n, |i, j| p.a[i][j]);
                let b = DMatrix::from_fn(n, m, |i, j| p.b[i][j]);
                let target = p.target.build(n, None)?;
                let bounds = p.bounds.build(m, "bounds")?;
                let state_bounds = match &p.state_bounds {
                    Some(sb) => Some(sb.build(n, "state_bounds")?),
                    None => None,
                };
                let initial = match &p.initial {
                    Some(v) => {
                        if v.len() != n {
                            bail!("initial: expected {n} values, got {}", v.len());
                        }
                        DVector::from_vec(v.clone())
                    }
                    None => DVector::zeros(n), // rest
                };
                let horizon = self.horizons[0];
                let nt = steps_for(horizon, p.dt)?;
                let mut cost = turnpike_core::CostSpec::tracking(DVector::zeros(n));
                cost.target = target;
                cost.state_weight = p.state_weight;
                cost.control_weight = p.control_weight;
                let instance = ProblemInstance::finite_dim(
                    LinearDynamics::new(a, b)?,
                    cost,
                    bounds,
                    Some(initial),
                    horizon,
                    nt,
                )?;
                self.finish_dynamic(instance, state_bounds, p.dt)
            }
            ProblemConfig::SemilinearStatic(p) => {
                let grid = SpatialGrid::new(p.n, p.length);
                let y_d = p.target.build(p.n, Some(&grid), "target")?;
                Ok(BuiltExperiment {
                    instance: None,
                    state_bounds: None,
                    semilinear: Some((grid, y_d, p.duality_samples, p.duality_radius)),
                    horizons: Vec::new(),
                    epsilons: Vec::new(),
                    period: None,
                    solver: self.solve_options(),
                    seed: self.seed,
                })
            }
        }
    }

    fn finish_dynamic(
        &self,
        instance: ProblemInstance,
        state_bounds: Option<BoxConstraints>,
        dt: f64,
    ) -> anyhow::Result<BuiltExperiment> {
        let mut horizons = self.horizons.clone();
        horizons.sort_by(|a, b| a.partial_cmp(b).unwrap());
        horizons.dedup();
        for &t in &horizons {
            steps_for(t, dt)?; // every horizon must hold a whole number of steps
        }
        let anchor = norm_h(instance.mesh_weight, &instance.cost.target.mean());
        let mut epsilons = Vec::with_capacity(self.epsilons.len());
        for (i, e) in self.epsilons.iter().enumerate() {
            let v = match e {
                EpsilonSpec::Absolute(v) => *v,
                EpsilonSpec::Relative(r) => {
                    if anchor <= 0.0 {
                        bail!("epsilons[{i}]: relative threshold needs a nonzero target");
                    }
                    r.relative * anchor
                }
            };
            epsilons.push(v);
        }
        let period = match &instance.cost.target {
            CostTarget::Periodic { period, .. } => Some(*period),
            CostTarget::Fixed(_) => None,
        };
        if let Some(pi) = period {
            steps_for(pi, dt)?;
        }
        Ok(BuiltExperiment {
            instance: Some(instance),
            state_bounds,
            semilinear: None,
            horizons,
            epsilons,
            period,
            solver: self.solve_options(),
            seed: self.seed,
        })
    }
}

/// Number of steps of size `dt` covering `horizon`, which must be a whole
/// multiple of `dt` (to a relative slack of 1e-9).
pub fn steps_for(horizon: f64, dt: f64) -> anyhow::Result<usize> {
    let raw = horizon / dt;
    let nt = raw.round();
    if nt < 1.0 || (raw - nt).abs() > 1e-9 * raw.max(1.0) {
        bail!("horizon {horizon} is not a whole multiple of dt = {dt}");
    }
    Ok(nt as usize)
}
