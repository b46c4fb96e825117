//! Executing one configured run and writing its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qem::engine::EngineConfig;
use qem::qem::{run_qem, Estimator, QemConfig, QemError, Trace};
use serde_json::{json, Map, Value};

use crate::config::{CommonSpec, Method, RunSpec};
use crate::outputs::{moment_mse, write_json, write_trace_csv};
use crate::problem::{resolve, Problem};
use crate::CliError;

/// The configured output directory, unless the override environment
/// variable is set.
pub fn effective_out_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(crate::OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

/// Builds the engine-facing configuration for one grid cell.
pub fn qem_config(common: &CommonSpec, method: Method, k: usize, seed: u64) -> QemConfig {
    let mut engine = EngineConfig::default();
    if let Some(r) = common.rank_cap {
        engine.rank_cap = r;
    }
    if let Some(c) = common.chunk_entries {
        engine.chunk_entries = c;
    }
    QemConfig {
        k,
        iterations: common.iterations,
        seed,
        ema: common.ema,
        denominator: common.denominator,
        variance_floor: common.variance_floor,
        estimator: match method {
            Method::GlobalIw => Estimator::Global,
            Method::Qem | Method::MpiwFixed => Estimator::PerLatent,
        },
        adapt_proposals: method != Method::MpiwFixed,
        predictive_samples: common.predictive_samples,
        engine,
    }
}

fn map_qem_err(e: QemError) -> CliError {
    match e {
        QemError::Config(_) => CliError::Config(e.to_string()),
        other => CliError::Domain(other.to_string()),
    }
}

/// One completed run's in-memory results.
pub struct RunOutcome {
    pub trace: Trace,
    /// Final-iteration first-moment MSE, when an oracle was available.
    pub moment_mse: Option<f64>,
}

/// Runs one cell against an already-resolved problem and writes `trace.csv`
/// and `summary.json` into `dir`.
pub fn run_to_dir(
    common: &CommonSpec,
    method: Method,
    k: usize,
    seed: u64,
    problem: &Problem,
    dir: &Path,
) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", dir.display())))?;
    let cfg = qem_config(common, method, k, seed);
    let started = Instant::now();
    let trace = run_qem(&problem.model, &problem.data, problem.test.as_ref(), &cfg)
        .map_err(map_qem_err)?;
    let total_ms = started.elapsed().as_millis() as u64;

    write_trace_csv(&dir.join("trace.csv"), &problem.model.ir, &trace, common.record_timing)?;

    let mse = problem.oracle.as_ref().map(|o| moment_mse(trace.final_moments(), o));
    let reported_mse = if common.oracle { mse } else { None };
    let summary = summary_json(common, method, k, seed, problem, &trace, reported_mse, total_ms);
    write_json(&dir.join("summary.json"), &summary)?;

    Ok(RunOutcome { trace, moment_mse: mse })
}

#[allow(clippy::too_many_arguments)]
fn summary_json(
    common: &CommonSpec,
    method: Method,
    k: usize,
    seed: u64,
    problem: &Problem,
    trace: &Trace,
    moment_mse: Option<f64>,
    total_ms: u64,
) -> Value {
    let mut final_moments = Map::new();
    for (decl, cells) in problem.model.ir.latents.iter().zip(trace.final_moments()) {
        let cells_json: Vec<Value> = cells
            .iter()
            .map(|m| Value::Array(m.values.iter().map(|&v| json!(v)).collect()))
            .collect();
        final_moments.insert(decl.name.clone(), Value::Array(cells_json));
    }
    let best = trace
        .rows
        .iter()
        .map(|r| r.log_evidence)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut config_echo = Map::new();
    for (key, value) in &common.echo {
        config_echo.insert(key.clone(), Value::String(value.clone()));
    }
    json!({
        "model": common.model,
        "method": method.name(),
        "k": k,
        "iterations": common.iterations,
        "seed": seed,
        "final_moments": Value::Object(final_moments),
        "best_log_evidence": best,
        "moment_mse": moment_mse,
        "total_time_ms": total_ms,
        "config": Value::Object(config_echo),
    })
}

/// Resolves and executes a `run` configuration.
pub fn execute_run(spec: &RunSpec) -> Result<PathBuf, CliError> {
    let problem = resolve(&spec.common)?;
    let out_dir = effective_out_dir(&spec.common.out_dir);
    run_to_dir(&spec.common, spec.method, spec.k, spec.seed, &problem, &out_dir)?;
    Ok(out_dir)
}
