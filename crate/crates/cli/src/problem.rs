//! Resolving a configuration into a concrete model, dataset, and optional
//! exact reference posterior.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qem::dsl::{self, DataError, DataSet};
use qem::graph::CompiledModel;
use qem::oracles::{
    builtin_by_name, discrete_posterior, linear_gaussian_posterior, synth_data, Builtin,
    ExactPosterior,
};

use crate::config::CommonSpec;
use crate::CliError;

/// A fully resolved inference problem.
#[derive(Debug)]
pub struct Problem {
    pub model: CompiledModel,
    pub data: DataSet,
    pub test: Option<DataSet>,
    /// Exact posterior, when requested and the model admits one.
    pub oracle: Option<ExactPosterior>,
    /// Set when `model` named a built-in rather than a file.
    pub builtin: Option<Builtin>,
}

fn map_data_err(e: DataError) -> CliError {
    match e {
        DataError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Domain(other.to_string()),
    }
}

/// Loads and compiles a model file, folding parse and validation failures
/// into one domain error.
pub fn compile_model_file(path: &Path) -> Result<CompiledModel, CliError> {
    let src = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read `{}`: {e}", path.display())))?;
    let ir = dsl::parse(&src).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        CliError::Domain(format!("`{}` failed to parse:\n{}", path.display(), lines.join("\n")))
    })?;
    ir.compile().map_err(|report| {
        CliError::Domain(format!("`{}` failed validation:\n{report}", path.display()))
    })
}

/// Exact posterior for models that admit one: the closed linear-Gaussian
/// form where the whole model is affine-Gaussian, otherwise quadrature over
/// the continuous latents with discrete summation. `None` when neither
/// applies.
pub fn exact_posterior(
    model: &CompiledModel,
    data: &DataSet,
    n_quad: usize,
) -> Option<ExactPosterior> {
    if let Ok(p) = linear_gaussian_posterior(model, data) {
        return Some(p);
    }
    discrete_posterior(model, data, n_quad).ok()
}

/// Resolves the model/data/test/oracle referenced by a configuration.
pub fn resolve(common: &CommonSpec) -> Result<Problem, CliError> {
    let builtin = builtin_by_name(&common.model);
    let model = match &builtin {
        Some(b) => b.model.clone(),
        None => compile_model_file(Path::new(&common.model))?,
    };

    let data = if common.data.is_empty() {
        let Some(b) = &builtin else {
            return Err(CliError::Config(format!(
                "model file `{}` needs a `data` key; only built-ins synthesize their own",
                common.model
            )));
        };
        synth_data(&model, &b.covariates, common.synth_seed, &BTreeMap::new())
            .map_err(|e| CliError::Domain(e.to_string()))?
            .data
    } else {
        dsl::load_dataset(&model.ir, &common.data).map_err(map_data_err)?
    };

    let wants_predictive = common.predictive_samples > 0;
    let test = if !common.test_data.is_empty() {
        Some(dsl::load_dataset(&model.ir, &common.test_data).map_err(map_data_err)?)
    } else if wants_predictive {
        let Some(b) = &builtin else {
            return Err(CliError::Config(
                "predictive scoring on a model file needs a `test_data` key".into(),
            ));
        };
        let seed = common.synth_seed.wrapping_add(1);
        Some(
            synth_data(&model, &b.covariates, seed, &BTreeMap::new())
                .map_err(|e| CliError::Domain(e.to_string()))?
                .data,
        )
    } else {
        None
    };

    let oracle = if common.oracle || common.metrics.moment_mse {
        exact_posterior(&model, &data, common.n_quad)
    } else {
        None
    };

    Ok(Problem { model, data, test, oracle, builtin })
}
