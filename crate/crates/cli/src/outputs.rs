//! Trace and summary serialization.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parsed file reproduces the in-memory values bit for bit.

use std::path::Path;

use qem::dist::MeanParams;
use qem::graph::ModelIR;
use qem::oracles::ExactPosterior;
use qem::qem::Trace;

use crate::CliError;

fn file_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// First-moment column names: `m1_<latent>` for scalars,
/// `m1_<latent>_<cell>` per cell for plated latents (row-major over sorted
/// plate axes, the same order the moment vectors use).
pub fn latent_columns(ir: &ModelIR) -> Vec<String> {
    let mut cols = Vec::new();
    for decl in &ir.latents {
        let cells = ir.cell_count(&decl.plates);
        if cells == 1 {
            cols.push(format!("m1_{}", decl.name));
        } else {
            for c in 0..cells {
                cols.push(format!("m1_{}_{c}", decl.name));
            }
        }
    }
    cols
}

/// Flattens one iteration's moments into the first-moment column values.
pub fn first_moments(moments: &[Vec<MeanParams>]) -> Vec<f64> {
    moments.iter().flat_map(|cells| cells.iter().map(|m| m.values[0])).collect()
}

/// Mean squared error between first moments and an exact posterior,
/// averaged over every latent cell.
pub fn moment_mse(moments: &[Vec<MeanParams>], exact: &ExactPosterior) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (est_cells, exact_cells) in moments.iter().zip(&exact.moments) {
        for (est, ex) in est_cells.iter().zip(exact_cells) {
            let d = est.values[0] - ex.values[0];
            sum += d * d;
            n += 1;
        }
    }
    sum / n as f64
}

/// Writes `trace.csv`: iter, lambda, log_evidence, predictive_ll (empty
/// when scoring is off), one column per latent cell's first moment,
/// clamp_count, elapsed_ms (empty unless timing is recorded, keeping
/// repeated runs byte-identical).
pub fn write_trace_csv(
    path: &Path,
    ir: &ModelIR,
    trace: &Trace,
    record_timing: bool,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    let mut header: Vec<String> =
        ["iter", "lambda", "log_evidence", "predictive_ll"].map(String::from).to_vec();
    header.extend(latent_columns(ir));
    header.push("clamp_count".into());
    header.push("elapsed_ms".into());
    w.write_record(&header).map_err(|e| file_err(path, e))?;
    for row in &trace.rows {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        rec.push(row.iter.to_string());
        rec.push(fmt_f64(row.lambda));
        rec.push(fmt_f64(row.log_evidence));
        rec.push(row.predictive_ll.map(fmt_f64).unwrap_or_default());
        rec.extend(first_moments(&row.moments).into_iter().map(fmt_f64));
        rec.push(row.clamp_count.to_string());
        rec.push(if record_timing {
            row.elapsed.as_millis().to_string()
        } else {
            String::new()
        });
        w.write_record(&rec).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// One parsed `trace.csv` row; `first_moments` holds the latent-cell
/// columns in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub lambda: f64,
    pub log_evidence: f64,
    pub predictive_ll: Option<f64>,
    pub first_moments: Vec<f64>,
    pub clamp_count: usize,
    pub elapsed_ms: Option<u128>,
}

/// A parsed `trace.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTrace {
    pub header: Vec<String>,
    pub rows: Vec<CsvRow>,
}

/// Reads a `trace.csv` back; numeric fields parse to the exact written
/// values.
pub fn read_trace_csv(path: &Path) -> Result<CsvTrace, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let header: Vec<String> =
        r.headers().map_err(|e| file_err(path, e))?.iter().map(String::from).collect();
    if header.len() < 6 {
        return Err(CliError::Domain(format!(
            "{}: expected at least 6 columns, found {}",
            path.display(),
            header.len()
        )));
    }
    let n_moments = header.len() - 6;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| file_err(path, e))?;
        let field = |j: usize| -> &str { rec.get(j).unwrap_or("") };
        let num = |j: usize| -> Result<f64, CliError> {
            field(j).parse().map_err(|_| {
                CliError::Domain(format!(
                    "{} row {}: bad number `{}`",
                    path.display(),
                    i + 1,
                    field(j)
                ))
            })
        };
        let iter: usize = field(0).parse().map_err(|_| {
            CliError::Domain(format!("{} row {}: bad iter", path.display(), i + 1))
        })?;
        let predictive_ll =
            if field(3).is_empty() { None } else { Some(num(3)?) };
        let mut first_moments = Vec::with_capacity(n_moments);
        for j in 0..n_moments {
            first_moments.push(num(4 + j)?);
        }
        let clamp_count: usize = field(4 + n_moments).parse().map_err(|_| {
            CliError::Domain(format!("{} row {}: bad clamp_count", path.display(), i + 1))
        })?;
        let elapsed_field = field(5 + n_moments);
        let elapsed_ms = if elapsed_field.is_empty() {
            None
        } else {
            Some(elapsed_field.parse().map_err(|_| {
                CliError::Domain(format!("{} row {}: bad elapsed_ms", path.display(), i + 1))
            })?)
        };
        rows.push(CsvRow {
            iter,
            lambda: num(1)?,
            log_evidence: num(2)?,
            predictive_ll,
            first_moments,
            clamp_count,
            elapsed_ms,
        });
    }
    Ok(CsvTrace { header, rows })
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Domain(format!("json: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| file_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use qem::dist::Family;
    use qem::qem::TraceRow;
    use std::time::Duration;

    fn model_ir() -> ModelIR {
        qem::dsl::parse(
            "plate rows[2]\n\
             latent z ~ Gaussian(0, 1)\n\
             latent w[rows] ~ Gaussian(z, 1)\n\
             observe x[rows] ~ Gaussian(w, 1) from x\n",
        )
        .unwrap()
    }

    fn gauss(m1: f64, m2: f64) -> MeanParams {
        MeanParams::new_unchecked(Family::Gaussian, vec![m1, m2]).unwrap()
    }

    fn sample_trace() -> Trace {
        Trace {
            rows: vec![
                TraceRow {
                    iter: 1,
                    lambda: 0.0,
                    log_evidence: -3.0999999999999996,
                    predictive_ll: None,
                    moments: vec![
                        vec![gauss(0.1 + 0.2, 1.0)],
                        vec![gauss(1e-17, 2.0), gauss(-4.625, 25.0)],
                    ],
                    clamp_count: 0,
                    elapsed: Duration::from_millis(3),
                },
                TraceRow {
                    iter: 2,
                    lambda: 1.0 - std::f64::consts::FRAC_1_SQRT_2,
                    log_evidence: f64::NEG_INFINITY,
                    predictive_ll: Some(-12.75),
                    moments: vec![
                        vec![gauss(0.3, 1.5)],
                        vec![gauss(7.0, 50.0), gauss(0.0, 1.0)],
                    ],
                    clamp_count: 2,
                    elapsed: Duration::from_millis(5),
                },
            ],
        }
    }

    #[test]
    fn column_names_expand_plated_latents() {
        let ir = model_ir();
        assert_eq!(latent_columns(&ir), vec!["m1_z", "m1_w_0", "m1_w_1"]);
    }

    #[test]
    fn trace_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let ir = model_ir();
        let trace = sample_trace();
        write_trace_csv(&path, &ir, &trace, false).unwrap();

        let parsed = read_trace_csv(&path).unwrap();
        assert_eq!(parsed.header.len(), 9);
        assert_eq!(parsed.rows.len(), 2);
        for (row, orig) in parsed.rows.iter().zip(&trace.rows) {
            assert_eq!(row.iter, orig.iter);
            assert_eq!(row.lambda.to_bits(), orig.lambda.to_bits());
            assert_eq!(row.log_evidence.to_bits(), orig.log_evidence.to_bits());
            assert_eq!(
                row.predictive_ll.map(f64::to_bits),
                orig.predictive_ll.map(f64::to_bits)
            );
            let expect = first_moments(&orig.moments);
            assert_eq!(row.first_moments.len(), expect.len());
            for (a, b) in row.first_moments.iter().zip(&expect) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(row.clamp_count, orig.clamp_count);
            assert_eq!(row.elapsed_ms, None, "timing off leaves the column empty");
        }
    }

    #[test]
    fn timing_column_fills_only_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &model_ir(), &sample_trace(), true).unwrap();
        let parsed = read_trace_csv(&path).unwrap();
        assert_eq!(parsed.rows[0].elapsed_ms, Some(3));
        assert_eq!(parsed.rows[1].elapsed_ms, Some(5));
    }

    #[test]
    fn mse_averages_over_all_cells() {
        let est = vec![vec![gauss(1.0, 2.0)], vec![gauss(0.0, 1.0), gauss(2.0, 5.0)]];
        let exact = ExactPosterior {
            moments: vec![vec![gauss(1.5, 2.0)], vec![gauss(0.0, 1.0), gauss(1.0, 5.0)]],
            log_evidence: 0.0,
        };
        let got = moment_mse(&est, &exact);
        let want = (0.25 + 0.0 + 1.0) / 3.0;
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}
