//! Experiment pipeline: steady solve, certificate checks, horizon sweep,
//! optional periodic stage, artifact emission.
//!
//! Artifacts are written into a temporary directory inside the output
//! directory and renamed into place, so an aborted run leaves no partial
//! files under the final names.

use crate::config::{ExperimentConfig, ProblemConfig, StorageKind, SupplyKind};
use crate::report;
use anyhow::{bail, Context};
use nalgebra::DVector;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use turnpike_core::dissipativity::{
    check_dissipation, estimate_dissipation_rate, sample_trajectories, StorageFunction,
    SupplyRate, DISSIPATION_SLACK,
};
use turnpike_core::model::{norm_h, CostTarget};
use turnpike_core::ocp::{brute_force_oracle, solve, solve_periodic};
use turnpike_core::statics::{
    check_strict_strong_duality, solve_static_finite_dim, solve_static_lq,
    solve_static_semilinear, DualityProblem, StaticSolution,
};
use turnpike_core::turnpike::{horizon_sweep, measure_q_eps, SweepSpec, TurnpikeSet};
use turnpike_core::ProblemInstance;

/// Anything the run flags as a broken invariant. A nonempty list makes the
/// CLI exit with status 2.
pub struct RunOutcome {
    pub violations: Vec<String>,
    pub out_dir: PathBuf,
}

/// Tolerance for the steady solves backing certificates and sweeps; tighter
/// than the trajectory solves because every downstream bound leans on it.
const STATIC_TOL: f64 = 1e-12;

/// Run the configured experiment and write `report.csv`, `report.json`,
/// `static_solution.json`, and `manifest.json` into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: Option<usize>,
    seed_override: Option<u64>,
) -> anyhow::Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let started = Instant::now();
    let built = cfg.build()?;

    let (csv, report_json, static_json, mut violations) = match &built.semilinear {
        Some((grid, y_d, samples, radius)) => {
            log::info!("steady semilinear solve on {} interior points", grid.n);
            let sol = solve_static_semilinear(grid, y_d, STATIC_TOL, 200)?;
            let duality = check_strict_strong_duality(
                &DualityProblem::Semilinear { grid, y_d },
                &sol,
                *samples,
                *radius,
                built.seed,
            )?;
            let report_json = json!({
                "kind": "semilinear-static",
                "static": {
                    "value": sol.value,
                    "kkt_residual": sol.kkt_residual,
                },
                "duality": {
                    "rate": duality.rate,
                    "samples": samples,
                    "radius": radius,
                    "degenerate_resampled": duality.degenerate_resampled,
                },
                "violations": Vec::<String>::new(),
            });
            let static_json = report::static_solution_json(&sol, json!(null));
            (report::render_csv(None), report_json, static_json, vec![])
        }
        None => run_dynamic(&cfg, &built, jobs)?,
    };

    if !violations.is_empty() {
        for v in &violations {
            log::warn!("violation: {v}");
        }
    }
    let mut report_json = report_json;
    report_json["violations"] = json!(violations);

    let manifest = json!({
        "name": cfg.name,
        "versions": {
            "turnpike-lab": env!("CARGO_PKG_VERSION"),
            "turnpike-core": turnpike_core::VERSION,
        },
        "seed": built.seed,
        "jobs": jobs,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "config": serde_json::to_value(&cfg)?,
        "artifacts": ["report.csv", "report.json", "static_solution.json", "manifest.json"],
    });

    write_artifacts(
        out_dir,
        &[
            ("report.csv", csv),
            ("report.json", pretty(&report_json)?),
            ("static_solution.json", pretty(&static_json)?),
            ("manifest.json", pretty(&manifest)?),
        ],
    )
    .with_context(|| format!("writing artifacts under {}", out_dir.display()))?;

    violations.sort();
    Ok(RunOutcome {
        violations,
        out_dir: out_dir.to_path_buf(),
    })
}

fn pretty(v: &Value) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

type DynamicArtifacts = (String, Value, Value, Vec<String>);

fn run_dynamic(
    cfg: &ExperimentConfig,
    built: &crate::config::BuiltExperiment,
    jobs: Option<usize>,
) -> anyhow::Result<DynamicArtifacts> {
    let instance = built.instance.as_ref().expect("dynamic instance");
    let h = instance.mesh_weight;
    let mut violations = Vec::new();

    // steady solve, with feasibility probes when a state box is configured
    log::info!("steady solve");
    let mut static_flags = json!(null);
    let sol: StaticSolution = match &built.state_bounds {
        Some(state_box) => {
            let fd = solve_static_finite_dim(instance, state_box, STATIC_TOL)?;
            if fd.infeasible {
                violations.push("steady problem infeasible over the configured boxes".into());
            }
            static_flags = json!({
                "feasibility_residual": fd.feasibility_residual,
                "infeasible": fd.infeasible,
                "slater_violated": fd.slater_violated,
            });
            fd.solution
        }
        None => solve_static_lq(instance, STATIC_TOL)?,
    };

    // sampled-certificate stage with the configured storage/supply pair
    let cert = &cfg.certificates;
    let sample_storage = match cert.storage {
        StorageKind::Duality => StorageFunction::from_duality(&sol, h),
        StorageKind::Quadratic => StorageFunction::quadratic(h),
    };
    let sample_supply = match cert.supply {
        SupplyKind::ShiftedCost => SupplyRate::shifted_cost(instance, &sol),
        SupplyKind::Bilinear => SupplyRate::bilinear(instance),
    };
    let zero_ref = (
        DVector::zeros(instance.state_dim()),
        DVector::zeros(instance.control_dim()),
    );
    let reference = match cert.supply {
        SupplyKind::ShiftedCost => (sol.y_s.clone(), sol.u_s.clone()),
        SupplyKind::Bilinear => zero_ref,
    };
    let samples_json = if cert.sample_trajectories > 0 {
        log::info!(
            "checking {} sampled trajectories against the certificate",
            cert.sample_trajectories
        );
        let trajs = sample_trajectories(
            instance,
            cert.sample_trajectories,
            cert.sample_radius,
            built.seed,
        )?;
        let reports: Vec<_> = trajs
            .iter()
            .map(|t| {
                check_dissipation(
                    t,
                    &sample_storage,
                    &sample_supply,
                    Some((&reference.0, &reference.1)),
                )
            })
            .collect();
        let min_residual = reports
            .iter()
            .map(|r| r.min_residual)
            .fold(f64::INFINITY, f64::min);
        if min_residual < -DISSIPATION_SLACK {
            violations.push(format!(
                "sampled dissipation residual {min_residual:.3e} below -{DISSIPATION_SLACK:.0e}"
            ));
        }
        let rate = estimate_dissipation_rate(&reports)?;
        if rate.plain_violated {
            violations.push("sampled trajectories violate plain dissipativity".into());
        }
        json!({
            "count": cert.sample_trajectories,
            "min_residual": min_residual,
            "rate": {
                "value": rate.rate,
                "degenerate": rate.degenerate,
                "plain_violated": rate.plain_violated,
            },
        })
    } else {
        json!(null)
    };

    // the sweep always checks the pair its bounds are stated for
    let sweep_storage = StorageFunction::from_duality(&sol, h);
    let sweep_supply = SupplyRate::shifted_cost(instance, &sol);
    let spec = SweepSpec {
        base: instance,
        static_solution: &sol,
        horizons: &built.horizons,
        epsilons: &built.epsilons,
        beta: cert.beta.build(),
        storage: &sweep_storage,
        supply: &sweep_supply,
        state_ball_radius: cert.state_ball_radius,
        include_control_in_distance: cert.include_control_in_distance,
        solver: built.solver.clone(),
    };
    log::info!("horizon sweep over {:?}", built.horizons);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    let sweep = pool.install(|| horizon_sweep(&spec))?;

    for row in &sweep.rows {
        if !row.converged {
            violations.push(format!(
                "tracking solve at horizon {} stopped before reaching tolerance",
                row.horizon
            ));
        }
        if row.dissipation_min_residual < -DISSIPATION_SLACK {
            violations.push(format!(
                "dissipation residual {:.3e} at horizon {} below -{DISSIPATION_SLACK:.0e}",
                row.dissipation_min_residual, row.horizon
            ));
        }
        for em in &row.per_eps {
            if !em.markov_ok {
                violations.push(format!(
                    "measure/integral inequality failed at horizon {} eps {}",
                    row.horizon, em.eps
                ));
            }
            if em.measure_bound_ok == Some(false) {
                violations.push(format!(
                    "certified measure bound failed at horizon {} eps {}",
                    row.horizon, em.eps
                ));
            }
        }
    }
    if sweep.rate.plain_violated {
        violations.push("optimal trajectories violate plain dissipativity".into());
    }

    // periodic stage: close one orbit of the target period and compare
    // deviation measures against orbit and steady point
    let periodic_json = match built.period {
        Some(period) => {
            log::info!("periodic solve over one period {period}");
            let per_instance = instance.with_horizon(period);
            let res = solve_periodic(&per_instance, &built.solver)?;
            if !res.converged {
                violations.push("periodic solve did not close the orbit".into());
            }
            let traj = &res.trajectory;
            let endpoint_gap = norm_h(h, &(&traj.states[traj.nt()] - &traj.states[0]));
            let orbit_set = TurnpikeSet::orbit(traj, h);
            let point_set = TurnpikeSet::steady_point(&sol, h, false);
            let nt = traj.nt();
            let mut mean = DVector::zeros(instance.state_dim());
            for k in 0..nt {
                mean += &traj.states[k];
            }
            mean /= nt as f64;
            let amplitude = (0..nt)
                .map(|k| norm_h(h, &(&traj.states[k] - &mean)))
                .fold(0.0_f64, f64::max);
            let comparison = sweep.rows.last().map(|row| {
                let eps = 0.5 * amplitude;
                let q_orbit = measure_q_eps(&row.trajectory, &orbit_set, eps);
                let q_point = measure_q_eps(&row.trajectory, &point_set, eps);
                json!({
                    "horizon": row.horizon,
                    "eps": eps,
                    "q_orbit": q_orbit,
                    "q_point": q_point,
                })
            });
            json!({
                "period": period,
                "value": res.value,
                "steady_value_gap": res.value - sol.value,
                "endpoint_gap": endpoint_gap,
                "converged": res.converged,
                "orbit_amplitude": amplitude,
                "max_orbit_distance_to_steady": (0..nt)
                    .map(|k| norm_h(h, &(&traj.states[k] - &sol.y_s)))
                    .fold(0.0_f64, f64::max),
                "measure_comparison": comparison,
            })
        }
        None => json!(null),
    };

    let report_json = json!({
        "kind": match &cfg.problem {
            ProblemConfig::Heat1d(_) => "heat-1d",
            ProblemConfig::FiniteDim(_) => "finite-dim",
            ProblemConfig::SemilinearStatic(_) => unreachable!("dynamic path"),
        },
        "static": {
            "value": sol.value,
            "kkt_residual": sol.kkt_residual,
            "flags": static_flags,
        },
        "samples": samples_json,
        "sweep": report::sweep_json(&sweep),
        "periodic": periodic_json,
    });
    let static_json = report::static_solution_json(&sol, static_flags);
    Ok((
        report::render_csv(Some(&sweep)),
        report_json,
        static_json,
        violations,
    ))
}

/// Write `(name, contents)` pairs into `out_dir` atomically: everything goes
/// to a fresh temporary directory inside `out_dir` first, then each file is
/// renamed into place (same filesystem, so the rename cannot half-write).
fn write_artifacts(out_dir: &Path, files: &[(&str, String)]) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let tmp = tempfile_dir(out_dir)?;
    for (name, contents) in files {
        fs::write(tmp.join(name), contents)
            .with_context(|| format!("writing staged {name}"))?;
    }
    for (name, _) in files {
        fs::rename(tmp.join(name), out_dir.join(name))
            .with_context(|| format!("publishing {name}"))?;
    }
    let _ = fs::remove_dir_all(&tmp);
    Ok(())
}

fn tempfile_dir(out_dir: &Path) -> anyhow::Result<PathBuf> {
    for attempt in 0..64 {
        let candidate = out_dir.join(format!(".staging-{}-{attempt}", std::process::id()));
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).context("creating the staging directory"),
        }
    }
    bail!("could not create a staging directory under {}", out_dir.display());
}

/// Outcome of the downscaled exhaustive cross-check.
pub struct OracleOutcome {
    pub solver_value: f64,
    pub grid_value: f64,
    pub levels: usize,
    pub grid_points: f64,
}

/// Shrink the configured problem until exhaustive control-grid search is
/// affordable, then require the iterative solver to match or beat the grid.
///
/// Heat problems are re-posed on a two-point grid with a single control at
/// the left node; finite-dimensional systems keep their matrices. Either
/// way the horizon shrinks to four steps and the number of grid levels is
/// capped so the search stays under [`turnpike_core::ocp::BRUTE_FORCE_LIMIT`]
/// points. Periodic targets are replaced by their mean.
pub fn run_oracle(cfg: &ExperimentConfig, levels: usize) -> anyhow::Result<OracleOutcome> {
    let nt = 4;
    let instance = match &cfg.problem {
        ProblemConfig::Heat1d(p) => {
            let grid = turnpike_core::SpatialGrid::new(2, p.length);
            // shape profiles re-sample on the coarse grid; a literal value
            // list has no meaning at a different resolution and errors out.
            // periodic targets collapse to their mean.
            let coarse_target = p
                .target
                .build(grid.n, Some(&grid))
                .context("re-sampling the target on the coarse oracle grid")?
                .mean();
            let bounds = p.bounds.build_first("bounds")?;
            let horizon = nt as f64 * p.dt;
            let mut inst = ProblemInstance::heat_1d(
                &grid,
                &[0],
                coarse_target,
                bounds,
                Some(DVector::zeros(2)),
                horizon,
                nt,
            )?;
            inst.cost.state_weight = p.state_weight;
            inst.cost.control_weight = p.control_weight;
            inst
        }
        ProblemConfig::FiniteDim(_) => {
            let built = cfg.build()?;
            let mut inst = built
                .instance
                .expect("finite-dim builds a dynamic instance");
            inst = inst.with_horizon(nt as f64 * inst.dt());
            if inst.y0.is_none() {
                inst.y0 = Some(DVector::zeros(inst.state_dim()));
            }
            inst.cost.target = CostTarget::Fixed(inst.cost.target.mean());
            inst
        }
        ProblemConfig::SemilinearStatic(_) => {
            bail!("the exhaustive cross-check needs a dynamic problem")
        }
    };

    let m = instance.control_dim();
    let dims = (m * instance.nt) as f64;
    let mut levels = levels.max(2);
    while (levels as f64).powf(dims) > turnpike_core::ocp::BRUTE_FORCE_LIMIT && levels > 2 {
        levels -= 1;
    }
    let grid_points = (levels as f64).powf(dims);
    if grid_points > turnpike_core::ocp::BRUTE_FORCE_LIMIT {
        bail!(
            "control grid would need {grid_points:.3e} points even at 2 levels; \
             the system is too large for the exhaustive check"
        );
    }

    let mut options = turnpike_core::SolveOptions::default();
    options.tolerance = 1e-10;
    let solved = solve(&instance, &options)?;
    let grid = brute_force_oracle(&instance, levels)?;
    Ok(OracleOutcome {
        solver_value: solved.value,
        grid_value: grid.value,
        levels,
        grid_points,
    })
}

