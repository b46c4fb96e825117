//! Moment-matching expectation maximization over exponential-family
//! approximate posteriors.
//!
//! Each iteration fits the proposal to the current moment estimates
//! (M-step), draws a fresh sample bank, re-estimates posterior moments with
//! importance weighting (E-step), and folds the new estimates into a moving
//! average. The moving average runs over *mean* parameters: that is what
//! makes the noisy fixed point coincide with the moment-matched posterior,
//! and a scheduled history weight drives the estimate's variance to zero
//! while keeping each increment unbiased.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::dist::{
    self, ConventionalParams, DistError, Family, MeanParams, NaturalParams,
};
use crate::dsl::DataSet;
use crate::engine::{
    build_log_factors, draw_sample_bank, global_bank, posterior_moments, Eliminator,
    EngineConfig, EngineError, MomentNormalizer, Proposals,
};
use crate::graph::CompiledModel;
use crate::rng::{mix_key, purpose};

#[derive(Debug, Error)]
pub enum QemError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<QemError>,
    },
    #[error("moment matching failed for latent `{latent}` cell {cell}: {source}")]
    InfeasibleMoments {
        latent: String,
        cell: usize,
        #[source]
        source: DistError,
    },
    #[error("family mismatch in moving average: {prev} vs {new}")]
    FamilyMismatch { prev: Family, new: Family },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// History-weight policy for the moving average. λ multiplies the running
/// history and 1−λ the fresh estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EmaConfig {
    /// Constant new-sample weight w ∈ (0,1]; λ = 1−w at every iteration.
    Fixed { new_weight: f64 },
    /// λ(t) = 1 − t^(−p) with p ∈ (0,1): the history weight grows toward 1,
    /// so per-iteration noise is averaged out while each increment stays
    /// unbiased. At t=1 the initialization is discarded entirely.
    Scheduled { p: f64 },
}

impl EmaConfig {
    fn validate(&self) -> Result<(), QemError> {
        match *self {
            EmaConfig::Fixed { new_weight } => {
                if !(new_weight > 0.0 && new_weight <= 1.0) {
                    return Err(QemError::Config(format!(
                        "new-sample weight must lie in (0,1], got {new_weight}"
                    )));
                }
            }
            EmaConfig::Scheduled { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(QemError::Config(format!(
                        "schedule exponent must lie in (0,1), got {p}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// History weight λ_t for iteration t ≥ 1.
pub fn lambda_of(t: usize, ema: &EmaConfig) -> f64 {
    assert!(t >= 1, "iterations are 1-based");
    match *ema {
        EmaConfig::Fixed { new_weight } => 1.0 - new_weight,
        EmaConfig::Scheduled { p } => 1.0 - (t as f64).powf(-p),
    }
}

/// Componentwise λ·prev + (1−λ)·new. Feasible mean-parameter sets are
/// convex, so averaging two feasible estimates stays feasible.
pub fn ema_update(
    prev: &MeanParams,
    new: &MeanParams,
    lambda: f64,
) -> Result<MeanParams, QemError> {
    if prev.family != new.family {
        return Err(QemError::FamilyMismatch { prev: prev.family, new: new.family });
    }
    let values = prev
        .values
        .iter()
        .zip(&new.values)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(MeanParams::new_unchecked(prev.family, values)?)
}

/// Moving average in natural-parameter space. This exists as a negative
/// control: its fixed point under a stochastic moment sequence differs from
/// the mean-parameter average's, which is why the loop averages means.
pub fn ema_over_natural(
    prev: &ConventionalParams,
    new_nat: &NaturalParams,
    lambda: f64,
) -> Result<ConventionalParams, QemError> {
    if prev.family != new_nat.family {
        return Err(QemError::FamilyMismatch { prev: prev.family, new: new_nat.family });
    }
    let prev_nat = dist::conventional_to_natural(prev)?;
    let values: Vec<f64> = prev_nat
        .values
        .iter()
        .zip(&new_nat.values)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(dist::natural_to_conventional(&NaturalParams {
        family: prev.family,
        values,
    })?)
}

/// The approximate posterior: per-latent, per-cell mean parameters with the
/// matching conventional parameters cached. The cache always equals the
/// conversion of `means`, including any clamping applied while matching.
#[derive(Clone, Debug)]
pub struct QState {
    pub means: Vec<Vec<MeanParams>>,
    pub proposals: Proposals,
}

/// Mean parameters the model's proposal initializers define, replicated per
/// cell.
pub fn initial_means(model: &CompiledModel) -> Vec<Vec<MeanParams>> {
    model
        .ir
        .latents
        .iter()
        .map(|decl| vec![decl.proposal_init.clone(); model.ir.cell_count(&decl.plates)])
        .collect()
}

/// Result of moment matching: the new state plus how many cells needed
/// clamping to stay proper.
#[derive(Clone, Debug)]
pub struct MStep {
    pub state: QState,
    pub clamp_count: usize,
}

/// Fits conventional parameters to the given moments. Gaussian cells whose
/// implied variance falls below `floor` are clamped to it, and Bernoulli
/// cells are kept inside [floor, 1−floor] so the proposal keeps full
/// support; both clamps are counted, not fatal. Infeasible Beta or Gamma
/// moments cannot be projected meaningfully and fail with the latent named.
pub fn m_step(
    model: &CompiledModel,
    means: &[Vec<MeanParams>],
    floor: f64,
) -> Result<MStep, QemError> {
    assert!(floor > 0.0, "clamp floor must be positive");
    let mut clamp_count = 0usize;
    let mut out_means = Vec::with_capacity(means.len());
    let mut out_params = Vec::with_capacity(means.len());
    for (i, cells) in means.iter().enumerate() {
        let decl = &model.ir.latents[i];
        let mut cell_means = Vec::with_capacity(cells.len());
        let mut cell_params = Vec::with_capacity(cells.len());
        for (c, m) in cells.iter().enumerate() {
            let infeasible = |source: DistError| QemError::InfeasibleMoments {
                latent: decl.name.clone(),
                cell: c,
                source,
            };
            let (fixed, params) = match m.family {
                Family::Gaussian => {
                    let m1 = m.values[0];
                    let m2 = m.values[1];
                    if !(m1.is_finite() && m2.is_finite()) {
                        return Err(infeasible(DistError::InvalidParams {
                            family: m.family,
                            detail: "non-finite moment estimate".into(),
                        }));
                    }
                    let mut var = m2 - m1 * m1;
                    if !(var >= floor) {
                        var = floor;
                        clamp_count += 1;
                    }
                    (
                        MeanParams::new_unchecked(m.family, vec![m1, m1 * m1 + var])?,
                        ConventionalParams::new(m.family, vec![m1, var])
                            .map_err(infeasible)?,
                    )
                }
                Family::Bernoulli => {
                    let p = m.values[0];
                    if !p.is_finite() {
                        return Err(infeasible(DistError::InvalidParams {
                            family: m.family,
                            detail: "non-finite moment estimate".into(),
                        }));
                    }
                    let clamped = p.clamp(floor, 1.0 - floor);
                    if clamped != p {
                        clamp_count += 1;
                    }
                    (
                        MeanParams::new_unchecked(m.family, vec![clamped])?,
                        ConventionalParams::new(m.family, vec![clamped])
                            .map_err(infeasible)?,
                    )
                }
                _ => (m.clone(), dist::mean_to_conventional(m).map_err(infeasible)?),
            };
            cell_means.push(fixed);
            cell_params.push(params);
        }
        out_means.push(cell_means);
        out_params.push(cell_params);
    }
    Ok(MStep {
        state: QState { means: out_means, proposals: Proposals { params: out_params } },
        clamp_count,
    })
}

/// Which importance scheme drives the E-step: independent copy axes per
/// latent, or one shared copy axis across all latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    PerLatent,
    Global,
}

/// How moment estimates are normalized: by the same bank's evidence, or by
/// an independently drawn bank's evidence so the ratio stays unbiased.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenominatorMode {
    SelfNormalized,
    FreshSample,
}

#[derive(Clone, Debug)]
pub struct QemConfig {
    /// Copies per latent (or per joint draw under the global estimator).
    pub k: usize,
    /// Iterations T ≥ 1.
    pub iterations: usize,
    pub seed: u64,
    pub ema: EmaConfig,
    pub denominator: DenominatorMode,
    /// Lower bound applied when matching moments (Gaussian variance,
    /// Bernoulli probability margin).
    pub variance_floor: f64,
    pub estimator: Estimator,
    /// When false, proposals stay fixed at their declared initialization and
    /// every iteration re-estimates moments from that same proposal; the
    /// trace still averages the per-iteration estimates. This is the
    /// non-adaptive importance-sampling baseline.
    pub adapt_proposals: bool,
    /// Posterior draws per iteration for held-out scoring; 0 disables it.
    pub predictive_samples: usize,
    pub engine: EngineConfig,
}

impl Default for QemConfig {
    fn default() -> Self {
        QemConfig {
            k: 30,
            iterations: 100,
            seed: 0,
            ema: EmaConfig::Scheduled { p: 0.5 },
            denominator: DenominatorMode::SelfNormalized,
            variance_floor: 1e-8,
            estimator: Estimator::PerLatent,
            adapt_proposals: true,
            predictive_samples: 0,
            engine: EngineConfig::default(),
        }
    }
}

impl QemConfig {
    fn validate(&self) -> Result<(), QemError> {
        if self.k < 1 {
            return Err(QemError::Config("need at least one copy per latent".into()));
        }
        if self.iterations < 1 {
            return Err(QemError::Config("need at least one iteration".into()));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(QemError::Config(format!(
                "variance floor must be positive and finite, got {}",
                self.variance_floor
            )));
        }
        self.ema.validate()
    }
}

/// One iteration's record. `elapsed` is wall-clock time since the run
/// started, so it increases monotonically down the trace; every other field
/// is a pure function of the configuration.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub lambda: f64,
    pub log_evidence: f64,
    pub predictive_ll: Option<f64>,
    /// Post-average mean parameters m_t.
    pub moments: Vec<Vec<MeanParams>>,
    pub clamp_count: usize,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Value equality ignoring wall-clock fields: this is the determinism
    /// contract two runs of the same configuration must satisfy.
    pub fn same_values(&self, other: &Trace) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.iter == b.iter
                    && a.lambda == b.lambda
                    && a.log_evidence == b.log_evidence
                    && a.predictive_ll == b.predictive_ll
                    && a.moments == b.moments
                    && a.clamp_count == b.clamp_count
            })
    }

    pub fn final_moments(&self) -> &[Vec<MeanParams>] {
        &self.rows.last().expect("trace is never empty").moments
    }
}

fn draw_bank(
    model: &CompiledModel,
    q: &Proposals,
    seed: u64,
    k: usize,
    estimator: Estimator,
) -> Result<crate::engine::SampleBank, EngineError> {
    match estimator {
        Estimator::PerLatent => draw_sample_bank(model, q, seed, k),
        Estimator::Global => global_bank(model, q, seed, k),
    }
}

/// Runs the full loop: match moments, sample, re-estimate, average. `test`
/// supplies held-out observations (and covariates) for predictive scoring
/// when `predictive_samples > 0`. Deterministic up to wall-clock fields.
pub fn run_qem(
    model: &CompiledModel,
    data: &DataSet,
    test: Option<&DataSet>,
    cfg: &QemConfig,
) -> Result<Trace, QemError> {
    cfg.validate()?;
    let start = Instant::now();
    let init = initial_means(model);
    let mut means = init.clone();
    let mut rows = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        let fit_from = if cfg.adapt_proposals { &means } else { &init };
        let step = (|| -> Result<TraceRow, QemError> {
            let MStep { state, clamp_count } = m_step(model, fit_from, cfg.variance_floor)?;
            let seed_t = mix_key(&[cfg.seed, t as u64]);

            let bank = draw_bank(model, &state.proposals, seed_t, cfg.k, cfg.estimator)?;
            let fs = build_log_factors(model, data, &bank, &state.proposals, &cfg.engine)?;
            let mut elim = Eliminator::new(&fs, &cfg.engine);
            let normalizer = match cfg.denominator {
                DenominatorMode::SelfNormalized => MomentNormalizer::SelfNormalized,
                DenominatorMode::FreshSample => {
                    let fresh_seed = mix_key(&[seed_t, purpose::FRESH]);
                    let fresh =
                        draw_bank(model, &state.proposals, fresh_seed, cfg.k, cfg.estimator)?;
                    let ffs =
                        build_log_factors(model, data, &fresh, &state.proposals, &cfg.engine)?;
                    MomentNormalizer::FixedLogEvidence(
                        Eliminator::new(&ffs, &cfg.engine).log_evidence()?,
                    )
                }
            };
            let estimate = posterior_moments(model, &bank, &mut elim, normalizer)?;

            let predictive_ll = match (test, cfg.predictive_samples) {
                (Some(test), n) if n > 0 => {
                    let samples = elim.backward_resample(&bank, seed_t, n)?;
                    Some(crate::engine::predictive_log_likelihood(
                        model,
                        test,
                        &bank,
                        &samples,
                        &cfg.engine,
                    )?)
                }
                _ => None,
            };

            let lambda = lambda_of(t, &cfg.ema);
            // Averaging history: the post-clamp fit when proposals adapt (so
            // the trace and the sampler agree), the raw running average when
            // they are frozen (the fit is pinned to the initial state then).
            let history = if cfg.adapt_proposals { &state.means } else { &means };
            let mut averaged = Vec::with_capacity(means.len());
            for (prev_cells, new_cells) in history.iter().zip(&estimate.moments) {
                let cells = prev_cells
                    .iter()
                    .zip(new_cells)
                    .map(|(p, n)| ema_update(p, n, lambda))
                    .collect::<Result<Vec<_>, _>>()?;
                averaged.push(cells);
            }
            Ok(TraceRow {
                iter: t,
                lambda,
                log_evidence: estimate.log_evidence,
                predictive_ll,
                moments: averaged,
                clamp_count,
                elapsed: start.elapsed(),
            })
        })()
        .map_err(|e| QemError::AtIteration { iter: t, source: Box::new(e) })?;
        means = step.moments.clone();
        rows.push(step);
    }
    Ok(Trace { rows })
}
