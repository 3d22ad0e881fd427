//! Artifact serialization: the per-(horizon, threshold) CSV table and the
//! JSON reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs produce byte-identical files.

use nalgebra::DVector;
use serde_json::{json, Value};
use turnpike_core::statics::StaticSolution;
use turnpike_core::turnpike::TurnpikeReport;

/// Fixed column set of `report.csv`.
pub const CSV_HEADER: &str = "T,J_T,J_s,gap,scaled_gap,eps,Q_measure,integral_turnpike,\
L2_deviation,markov_ok,dissip_min_residual";

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

/// Render the sweep as CSV, one row per (horizon, threshold), sorted by
/// horizon first and threshold second.
pub fn render_csv(report: Option<&TurnpikeReport>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let Some(report) = report else {
        return out;
    };
    for row in &report.rows {
        let mut per_eps: Vec<_> = row.per_eps.iter().collect();
        per_eps.sort_by(|a, b| a.eps.partial_cmp(&b.eps).unwrap());
        for em in per_eps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                fmt(row.horizon),
                fmt(row.value),
                fmt(report.j_s),
                fmt(row.gap),
                fmt(row.scaled_gap),
                fmt(em.eps),
                fmt(em.q_measure),
                fmt(row.integral_turnpike),
                fmt(row.l2_deviation),
                em.markov_ok,
                fmt(row.dissipation_min_residual),
            ));
        }
    }
    out
}

fn vec_json(v: &DVector<f64>) -> Value {
    Value::from(v.iter().copied().collect::<Vec<f64>>())
}

/// `static_solution.json`: the steady pair with its multipliers.
pub fn static_solution_json(sol: &StaticSolution, extra: Value) -> Value {
    json!({
        "y_s": vec_json(&sol.y_s),
        "u_s": vec_json(&sol.u_s),
        "p_s": vec_json(&sol.p_s),
        "mu_lower": vec_json(&sol.mu_a),
        "mu_upper": vec_json(&sol.mu_b),
        "value": sol.value,
        "kkt_residual": sol.kkt_residual,
        "extra": extra,
    })
}

/// Sweep section of `report.json`.
pub fn sweep_json(report: &TurnpikeReport) -> Value {
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|row| {
            json!({
                "horizon": row.horizon,
                "nt": row.nt,
                "value": row.value,
                "gap": row.gap,
                "scaled_gap": row.scaled_gap,
                "l2_deviation": row.l2_deviation,
                "integral_turnpike": row.integral_turnpike,
                "dissipation_min_residual": row.dissipation_min_residual,
                "max_state_norm": row.max_state_norm,
                "converged": row.converged,
                "iterations": row.iterations,
                "per_eps": row.per_eps.iter().map(|em| json!({
                    "eps": em.eps,
                    "q_measure": em.q_measure,
                    "markov_ok": em.markov_ok,
                    "measure_bound_ok": em.measure_bound_ok,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let fit = report.fit.as_ref().map(|f| {
        json!({
            "slope": f.slope,
            "intercept": f.intercept,
            "points_used": f.used,
            "points_excluded": f.excluded,
            "saturation_suspected": f.saturation_suspected,
        })
    });
    json!({
        "steady_value": report.j_s,
        "dt": report.dt,
        "rate": {
            "value": report.rate.rate,
            "degenerate": report.rate.degenerate,
            "plain_violated": report.rate.plain_violated,
            "strict_min_residual": report.rate.strict_min_residual,
        },
        "storage_bound": report.storage_bound,
        "gap_fit": fit,
        "lambda_per_eps": report.lambda_per_eps,
        "rows": rows,
    })
}
