//! Grid execution: the cartesian product of methods × K × seeds, one output
//! directory per cell, plus per-iteration aggregates across seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{Method, SweepSpec};
use crate::outputs::moment_mse;
use crate::problem::{resolve, Problem};
use crate::runner::{effective_out_dir, run_to_dir};
use crate::CliError;

#[derive(Clone, Copy)]
struct Cell {
    method: Method,
    k: usize,
    seed: u64,
}

fn cell_name(c: &Cell) -> String {
    format!("{}_k{}_seed{}", c.method.name(), c.k, c.seed)
}

/// Per-iteration metric series for one completed cell.
struct CellMetrics {
    /// (metric name, value per iteration).
    series: Vec<(&'static str, Vec<f64>)>,
}

fn cell_metrics(
    spec: &SweepSpec,
    problem: &Problem,
    outcome: &crate::runner::RunOutcome,
) -> CellMetrics {
    let rows = &outcome.trace.rows;
    let mut series: Vec<(&'static str, Vec<f64>)> = Vec::new();
    if spec.common.metrics.elbo {
        series.push(("log_evidence", rows.iter().map(|r| r.log_evidence).collect()));
    }
    if spec.common.metrics.predictive_ll {
        series.push((
            "predictive_ll",
            rows.iter().map(|r| r.predictive_ll.unwrap_or(f64::NAN)).collect(),
        ));
    }
    if spec.common.metrics.moment_mse {
        if let Some(oracle) = &problem.oracle {
            series.push((
                "moment_mse",
                rows.iter().map(|r| moment_mse(&r.moments, oracle)).collect(),
            ));
        }
    }
    CellMetrics { series }
}

/// Everything a finished sweep leaves behind.
pub struct SweepArtifacts {
    pub out_dir: PathBuf,
    /// (cell name, error message) for cells that failed; the sweep itself
    /// still succeeds.
    pub failures: Vec<(String, String)>,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn write_aggregate(
    path: &Path,
    table: &BTreeMap<(&'static str, usize, &'static str, usize), Vec<f64>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(["method", "k", "iter", "metric", "mean", "stderr"]).map_err(io)?;
    for ((method, k, metric, iter), values) in table {
        let (mean, stderr) = mean_and_stderr(values);
        w.write_record([
            method.to_string(),
            k.to_string(),
            iter.to_string(),
            metric.to_string(),
            format!("{mean}"),
            format!("{stderr}"),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_failures(path: &Path, failures: &[(String, String)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(["cell", "error"]).map_err(io)?;
    for (cell, error) in failures {
        w.write_record([cell, error]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Resolves the problem once, runs every cell on a bounded worker pool, and
/// writes `aggregate.csv` plus `failures.csv` at the sweep root. Identical
/// configurations produce identical aggregates regardless of worker count.
pub fn execute_sweep(spec: &SweepSpec) -> Result<SweepArtifacts, CliError> {
    let problem = resolve(&spec.common)?;
    let out_dir = effective_out_dir(&spec.common.out_dir);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", out_dir.display())))?;

    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &k in &spec.ks {
            for &seed in &spec.seeds {
                cells.push(Cell { method, k, seed });
            }
        }
    }

    let results: Vec<Mutex<Option<Result<CellMetrics, String>>>> =
        (0..cells.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..spec.workers.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let dir = out_dir.join(cell_name(cell));
                let out = run_to_dir(
                    &spec.common,
                    cell.method,
                    cell.k,
                    cell.seed,
                    &problem,
                    &dir,
                )
                .map(|outcome| cell_metrics(spec, &problem, &outcome))
                .map_err(|e| e.to_string());
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    // Deterministic reduction in cell order.
    let mut table: BTreeMap<(&'static str, usize, &'static str, usize), Vec<f64>> =
        BTreeMap::new();
    let mut failures = Vec::new();
    for (cell, slot) in cells.iter().zip(&results) {
        let outcome = slot.lock().unwrap().take().expect("every cell ran");
        match outcome {
            Ok(metrics) => {
                for (name, series) in metrics.series {
                    for (idx, value) in series.into_iter().enumerate() {
                        table
                            .entry((cell.method.name(), cell.k, name, idx + 1))
                            .or_default()
                            .push(value);
                    }
                }
            }
            Err(message) => failures.push((cell_name(cell), message)),
        }
    }

    write_aggregate(&out_dir.join("aggregate.csv"), &table)?;
    write_failures(&out_dir.join("failures.csv"), &failures)?;
    Ok(SweepArtifacts { out_dir, failures })
}
