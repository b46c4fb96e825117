use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use qem::dsl;
use qem::oracles::{builtin_by_name, builtin_names, synth_data};
use qem_cli::problem::exact_posterior;
use qem_cli::{config, outputs, runner, sweep, CliError};

#[derive(Parser)]
#[command(
    name = "qem",
    version,
    about = "Importance-weighted moment-matching EM for plated hierarchical models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a model file; exit 0 only when it is well formed.
    Validate {
        /// Path to a model file.
        model: PathBuf,
    },
    /// Execute one configuration, writing trace.csv and summary.json.
    Run {
        /// Path to a flat key = value configuration file.
        config: PathBuf,
    },
    /// Execute the cartesian product of methods × k × seeds, writing one
    /// trace per cell plus aggregate.csv and failures.csv.
    Sweep {
        /// Path to a flat key = value configuration file with lists.
        config: PathBuf,
    },
    /// Print the exact posterior of a built-in model on its synthetic data.
    Oracle {
        /// Built-in name (see `oracle --help` for the list).
        builtin: String,
        /// Seed for the synthetic dataset.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Quadrature size for models with discrete latents.
        #[arg(long, default_value_t = 80)]
        quad: usize,
        /// Also write oracle.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate { model } => cmd_validate(&model),
        Cmd::Run { config } => cmd_run(&config),
        Cmd::Sweep { config } => cmd_sweep(&config),
        Cmd::Oracle { builtin, seed, quad, out } => cmd_oracle(&builtin, seed, quad, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_validate(path: &PathBuf) -> Result<(), CliError> {
    let src = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read `{}`: {e}", path.display())))?;
    let ir = match dsl::parse(&src) {
        Ok(ir) => ir,
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            return Err(CliError::Domain(format!(
                "`{}`: {} parse error(s)",
                path.display(),
                errors.len()
            )));
        }
    };
    let report = ir.validate();
    print!("{report}");
    if report.is_ok() {
        println!(
            "ok: {} plate(s), {} covariate(s), {} latent(s), {} observation(s)",
            ir.plates.len(),
            ir.covariates.len(),
            ir.latents.len(),
            ir.observations.len()
        );
        Ok(())
    } else {
        Err(CliError::Domain(format!(
            "`{}`: {} validation error(s)",
            path.display(),
            report.errors.len()
        )))
    }
}

fn read_config(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read `{}`: {e}", path.display())))
}

fn cmd_run(path: &PathBuf) -> Result<(), CliError> {
    let spec = config::run_spec(&read_config(path)?)?;
    let out_dir = runner::execute_run(&spec)?;
    println!("wrote {}", out_dir.join("trace.csv").display());
    println!("wrote {}", out_dir.join("summary.json").display());
    Ok(())
}

fn cmd_sweep(path: &PathBuf) -> Result<(), CliError> {
    let spec = config::sweep_spec(&read_config(path)?)?;
    let arts = sweep::execute_sweep(&spec)?;
    println!("wrote {}", arts.out_dir.join("aggregate.csv").display());
    if !arts.failures.is_empty() {
        eprintln!(
            "{} cell(s) failed; see {}",
            arts.failures.len(),
            arts.out_dir.join("failures.csv").display()
        );
    }
    Ok(())
}

fn cmd_oracle(name: &str, seed: u64, quad: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let builtin = builtin_by_name(name).ok_or_else(|| {
        CliError::Domain(format!(
            "unknown builtin `{name}`; known: {} (conjugate_chain takes an optional depth suffix)",
            builtin_names().join(", ")
        ))
    })?;
    let synth = synth_data(&builtin.model, &builtin.covariates, seed, &BTreeMap::new())
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let exact = exact_posterior(&builtin.model, &synth.data, quad).ok_or_else(|| {
        CliError::Domain(format!("`{name}` has no exact posterior at this scale"))
    })?;

    let mut moments = Map::new();
    for (decl, cells) in builtin.model.ir.latents.iter().zip(&exact.moments) {
        let cells_json: Vec<Value> = cells
            .iter()
            .map(|m| Value::Array(m.values.iter().map(|&v| json!(v)).collect()))
            .collect();
        moments.insert(decl.name.clone(), Value::Array(cells_json));
    }
    let doc = json!({
        "model": name,
        "synth_seed": seed,
        "n_quad": quad,
        "log_evidence": exact.log_evidence,
        "moments": Value::Object(moments),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("plain data serializes"));
    if let Some(dir) = out {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", dir.display())))?;
        outputs::write_json(&dir.join("oracle.json"), &doc)?;
    }
    Ok(())
}
