//! Massively parallel importance-weighted inference over a compiled model.
//!
//! The pipeline: draw K copies of every latent (`draw_sample_bank`), build
//! log-weight factors indexed by copy axes (`build_log_factors`), contract
//! them by variable elimination (`Eliminator`) to obtain the log-evidence
//! estimate and per-latent marginal copy weights, then post-process those
//! into moment estimates (`posterior_moments`), posterior index samples
//! (`backward_resample`), and predictive scores. `global_iw` runs the same
//! machinery with all copy axes collapsed onto one shared axis, which turns
//! the estimator into ordinary joint importance sampling over K samples.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use thiserror::Error;

use crate::dist::{
    self, ConventionalParams, DistError, Family, MeanParams,
};
use crate::dsl::DataSet;
use crate::graph::{eval_expr, CompiledModel, CovValue, EvalCtx, EvalError, LatentId};
use crate::rng::{mix_key, purpose, Stream};
use crate::special::LN_2PI;
use crate::tensor::{AxisId, Tensor, TensorError};

/// The shared copy axis used when all latents are sampled jointly (one
/// importance sample indexes every latent at once). Sorts after every
/// per-latent copy axis and before every plate axis.
pub const JOINT_AXIS: AxisId = AxisId::Copy(LatentId(usize::MAX));

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("factor for `{what}` would have copy rank {rank}, above the cap {cap}")]
    RankCap { what: String, rank: usize, cap: usize },
    #[error("all importance weights vanished while {context}")]
    DegenerateWeights { context: String },
    #[error("invalid parameters for `{what}`: {detail}")]
    InvalidParams { what: String, detail: String },
    #[error("proposal table mismatch: {0}")]
    BadProposals(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the per-latent proposal mass in the weight denominator treats the
/// parent copy index. `PermutationBound` evaluates the proposal at the one
/// parent copy the mixing permutation assigned to each child copy;
/// `Mixture` averages the proposal over all K parent copies. The proposals
/// this engine draws from are parent-free (one parameter vector per plate
/// cell), so the two conventions coincide; both are kept so the convention
/// is an explicit, testable choice rather than an accident.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QmpConvention {
    PermutationBound,
    Mixture,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Maximum number of copy axes any one factor may carry.
    pub rank_cap: usize,
    /// Soft bound on the number of scalar entries materialized at once when
    /// evaluating observation tables; larger tables stream in plate chunks.
    pub chunk_entries: usize,
    pub denominator: QmpConvention,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rank_cap: 4,
            chunk_entries: 1 << 22,
            denominator: QmpConvention::PermutationBound,
        }
    }
}

// ---------------------------------------------------------------------------
// Proposals and sample banks
// ---------------------------------------------------------------------------

/// Per-latent, per-plate-cell proposal parameters (conventional form). Cell
/// order is row-major over the latent's sorted plate axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposals {
    pub params: Vec<Vec<ConventionalParams>>,
}

impl Proposals {
    /// Proposals from each latent's declared initialization, replicated over
    /// its plate cells.
    pub fn from_init(model: &CompiledModel) -> Result<Proposals, DistError> {
        let mut params = Vec::with_capacity(model.ir.latents.len());
        for decl in &model.ir.latents {
            let conv = dist::mean_to_conventional(&decl.proposal_init)?;
            let cells = model.ir.cell_count(&decl.plates);
            params.push(vec![conv; cells]);
        }
        Ok(Proposals { params })
    }

    fn check(&self, model: &CompiledModel) -> Result<(), EngineError> {
        if self.params.len() != model.ir.latents.len() {
            return Err(EngineError::BadProposals(format!(
                "expected {} latents, got {}",
                model.ir.latents.len(),
                self.params.len()
            )));
        }
        for (decl, cells) in model.ir.latents.iter().zip(&self.params) {
            let want = model.ir.cell_count(&decl.plates);
            if cells.len() != want {
                return Err(EngineError::BadProposals(format!(
                    "latent `{}` has {} cells, got {} parameter vectors",
                    decl.name,
                    want,
                    cells.len()
                )));
            }
            for p in cells {
                if p.family != decl.proposal_family {
                    return Err(EngineError::BadProposals(format!(
                        "latent `{}` proposes {} but parameters are {}",
                        decl.name, decl.proposal_family, p.family
                    )));
                }
            }
        }
        Ok(())
    }
}

/// K drawn copies of every latent plus the uniforms that produced them and
/// the per-(child, parent) copy-mixing permutations.
#[derive(Clone, Debug)]
pub struct SampleBank {
    pub k: usize,
    /// Per latent: tensor over [copy axis, sorted plate axes].
    pub values: Vec<Tensor>,
    /// The uniform draws behind `values`, same shapes.
    pub xis: Vec<Tensor>,
    /// Copy axis each latent's values carry (its own axis, or the shared
    /// joint axis when sampling collapsed).
    pub axis_of: Vec<AxisId>,
    /// (child latent index, parent latent index) -> permutation of 0..K.
    pub perms: BTreeMap<(usize, usize), Vec<u32>>,
}

/// Draws K copies of every latent from its proposal by inverse transform.
/// Uniform streams are keyed by (seed, stream purpose, latent index), so
/// banks are reproducible and independent of declaration order changes
/// elsewhere in the model.
pub fn draw_sample_bank(
    model: &CompiledModel,
    q: &Proposals,
    seed: u64,
    k: usize,
) -> Result<SampleBank, EngineError> {
    q.check(model)?;
    assert!(k >= 1, "need at least one copy per latent");
    let mut values = Vec::with_capacity(model.ir.latents.len());
    let mut xis = Vec::with_capacity(model.ir.latents.len());
    let mut axis_of = Vec::with_capacity(model.ir.latents.len());
    for (i, decl) in model.ir.latents.iter().enumerate() {
        let cells = model.ir.cell_count(&decl.plates);
        let mut axes = vec![AxisId::Copy(LatentId(i))];
        axes.extend(model.ir.plate_axes(&decl.plates));
        let mut sizes = vec![k];
        sizes.extend(model.ir.plate_sizes_sorted(&decl.plates));

        let mut stream = Stream::from_parts(&[seed, purpose::XI, i as u64]);
        let mut xi = Vec::with_capacity(k * cells);
        let mut val = Vec::with_capacity(k * cells);
        for idx in 0..k * cells {
            let cell = idx % cells;
            let u = stream.next_open01();
            xi.push(u);
            val.push(dist::sample_it(&q.params[i][cell], u)?);
        }
        let shape = ndarray::IxDyn(&sizes);
        values.push(Tensor::from_data(
            axes.clone(),
            ndarray::ArrayD::from_shape_vec(shape.clone(), val).expect("shape"),
        ));
        xis.push(Tensor::from_data(
            axes,
            ndarray::ArrayD::from_shape_vec(shape, xi).expect("shape"),
        ));
        axis_of.push(AxisId::Copy(LatentId(i)));
    }
    let mut perms = BTreeMap::new();
    for (i, parents) in model.topo.latent_parents.iter().enumerate() {
        for &LatentId(j) in parents {
            let mut stream = Stream::from_parts(&[seed, purpose::PERM, i as u64, j as u64]);
            perms.insert((i, j), stream.permutation(k));
        }
    }
    Ok(SampleBank { k, values, xis, axis_of, perms })
}

/// Draws K joint samples: the same bank as `draw_sample_bank` with every
/// latent's copy axis renamed to the one shared axis, so copy index k means
/// "the k-th full joint draw". Sharing the underlying uniforms makes the
/// one-latent case agree with the per-latent bank bit for bit.
pub fn global_bank(
    model: &CompiledModel,
    q: &Proposals,
    seed: u64,
    k: usize,
) -> Result<SampleBank, EngineError> {
    let mut bank = draw_sample_bank(model, q, seed, k)?;
    for i in 0..bank.values.len() {
        let own = AxisId::Copy(LatentId(i));
        bank.values[i] = bank.values[i].rename_axis(own, JOINT_AXIS);
        bank.xis[i] = bank.xis[i].rename_axis(own, JOINT_AXIS);
        bank.axis_of[i] = JOINT_AXIS;
    }
    bank.perms.clear();
    Ok(bank)
}

// ---------------------------------------------------------------------------
// Log-density tables
// ---------------------------------------------------------------------------

fn count_copy_axes(axes_sets: &[&[AxisId]]) -> usize {
    let mut set = BTreeSet::new();
    for axes in axes_sets {
        set.extend(axes.iter().copied().filter(|a| a.is_copy()));
    }
    set.len()
}

/// Rejects parameter tables no member of the family accepts. Probability
/// parameters may sit on the closed interval [0,1] (saturated sigmoid
/// expressions reach the endpoints); the density then reports -inf at the
/// zero-mass atom rather than erroring.
fn validate_param_tables(
    family: Family,
    ps: &[Tensor],
    what: &str,
) -> Result<(), EngineError> {
    let bad = |detail: String| EngineError::InvalidParams { what: what.to_string(), detail };
    let expect = family.param_dim();
    if ps.len() != expect {
        return Err(bad(format!("expected {expect} parameters, got {}", ps.len())));
    }
    let check = |t: &Tensor, ok: &dyn Fn(f64) -> bool, msg: &str| -> Result<(), EngineError> {
        match t.iter().find(|&&x| !ok(x)) {
            Some(&x) => Err(bad(format!("{msg}, got {x}"))),
            None => Ok(()),
        }
    };
    match family {
        Family::Gaussian => {
            check(&ps[0], &|x| x.is_finite(), "mean must be finite")?;
            check(&ps[1], &|x| x.is_finite() && x > 0.0, "variance must be positive")?;
        }
        Family::Bernoulli => {
            check(&ps[0], &|x| (0.0..=1.0).contains(&x), "probability must lie in [0,1]")?;
        }
        Family::Beta | Family::Gamma => {
            check(&ps[0], &|x| x.is_finite() && x > 0.0, "first parameter must be positive")?;
            check(&ps[1], &|x| x.is_finite() && x > 0.0, "second parameter must be positive")?;
        }
        Family::NegativeBinomialLik => {
            check(&ps[0], &|x| x.is_finite() && x > 0.0, "count must be positive")?;
            check(&ps[1], &|x| (0.0..=1.0).contains(&x), "probability must lie in [0,1]")?;
        }
    }
    Ok(())
}

/// Elementwise log density of `target` under per-cell parameters, over the
/// broadcast union of all axes involved.
fn ln_pdf_tensors(family: Family, target: &Tensor, ps: &[Tensor]) -> Result<Tensor, EngineError> {
    Ok(match family {
        Family::Gaussian => target.zip3_with(&ps[0], &ps[1], dist::gaussian_ln_pdf)?,
        Family::Bernoulli => target.zip_with(&ps[0], dist::bernoulli_ln_pmf)?,
        Family::Beta => target.zip3_with(&ps[0], &ps[1], dist::beta_ln_pdf)?,
        Family::Gamma => target.zip3_with(&ps[0], &ps[1], dist::gamma_ln_pdf)?,
        Family::NegativeBinomialLik => {
            target.zip3_with(&ps[0], &ps[1], dist::negative_binomial_ln_pmf)?
        }
    })
}

fn plate_axes_of(t: &Tensor) -> Vec<AxisId> {
    t.axes().iter().copied().filter(|a| !a.is_copy()).collect()
}

fn union_all(ts: &[&Tensor]) -> Vec<AxisId> {
    let mut set = BTreeSet::new();
    for t in ts {
        set.extend(t.axes().iter().copied());
    }
    set.into_iter().collect()
}

fn entries_of(axes: &[AxisId], ts: &[&Tensor]) -> usize {
    axes.iter()
        .map(|&ax| {
            ts.iter()
                .find_map(|t| t.size_of(ax))
                .expect("axis size known from some input")
        })
        .product()
}

/// Sum over all plate cells of log density(target | params), returning a
/// table over the involved copy axes only. This is the single entry point
/// for prior, proposal, and observation terms; the Gaussian case avoids
/// materializing the full copy-grid-times-cells table by reducing the
/// squared residuals over plates first, and other families stream the table
/// in chunks along the largest plate axis when it would exceed the
/// configured size budget.
fn log_density_sum(
    family: Family,
    ps: &[Tensor],
    target: &Tensor,
    what: &str,
    cfg: &EngineConfig,
) -> Result<Tensor, EngineError> {
    validate_param_tables(family, ps, what)?;
    let all: Vec<&Tensor> = std::iter::once(target).chain(ps.iter()).collect();
    let rank = count_copy_axes(&all.iter().map(|t| t.axes()).collect::<Vec<_>>());
    if rank > cfg.rank_cap {
        return Err(EngineError::RankCap { what: what.to_string(), rank, cap: cfg.rank_cap });
    }
    if family == Family::Gaussian {
        if let Some(f) = gaussian_separated_sum(&ps[0], &ps[1], target, cfg) {
            return Ok(f?);
        }
    }
    generic_chunked_sum(family, ps, target, cfg)
}

/// Gaussian log-density sum with the residual reduction done before the
/// copy grid is assembled:
///   sum_cells ln N(x; m, v)
///     = -(1/2) * replication(v) * sum_{v cells} ln(2 pi v)
///       - sum_{v cells} [ sum_{other plates} (x - m)^2 ] / (2 v).
/// The inner residual sum collapses plates where m is constant through the
/// identity sum (x-m)^2 = sum x^2 - 2 m sum x + n m^2. Exact for every
/// Gaussian target because v never varies over plates it does not carry.
/// Returns None when the intermediates would exceed the chunk budget, in
/// which case the caller falls back to the streaming path.
fn gaussian_separated_sum(
    m: &Tensor,
    v: &Tensor,
    target: &Tensor,
    cfg: &EngineConfig,
) -> Option<Result<Tensor, EngineError>> {
    let p_x: BTreeSet<AxisId> = plate_axes_of(target).into_iter().collect();
    let p_m: BTreeSet<AxisId> = plate_axes_of(m).into_iter().collect();
    let p_v: BTreeSet<AxisId> = plate_axes_of(v).into_iter().collect();
    if !p_m.is_subset(&p_x) || !p_v.is_subset(&p_x) {
        return None; // parameters vary over plates the target lacks: stream instead
    }

    // Size guard: the residual grid and the final combine with v.
    let g_axes = union_all(&[m, target]);
    let g_entries = entries_of(&g_axes, &[m, target]);
    let b_axes = union_all(&[m, target, v]);
    let b_entries: usize = b_axes
        .iter()
        .filter(|a| a.is_copy() || p_v.contains(a))
        .map(|&ax| [m, target, v].iter().find_map(|t| t.size_of(ax)).unwrap())
        .product();
    if g_entries.max(b_entries) > cfg.chunk_entries {
        return None;
    }

    let go = || -> Result<Tensor, EngineError> {
        // Residual sum over plates where both m and v are constant.
        let mut sx = target.clone();
        let mut sx2 = target.map(|x| x * x);
        let mut n_red = 1.0;
        for &ax in &p_x {
            if !p_m.contains(&ax) && !p_v.contains(&ax) {
                n_red *= sx.size_of(ax).unwrap() as f64;
                sx = sx.sum_over(ax);
                sx2 = sx2.sum_over(ax);
            }
        }
        let m_sq = m.map(|mm| n_red * mm * mm);
        let cross = m.zip_with(&sx, |mm, s| -2.0 * mm * s)?;
        let mut g = m_sq.zip_with(&cross, |a, b| a + b)?.zip_with(&sx2, |a, b| a + b)?;
        // Collapse the plates v does not carry, then divide by 2v and
        // collapse the rest.
        for ax in plate_axes_of(&g) {
            if !p_v.contains(&ax) {
                g = g.sum_over(ax);
            }
        }
        let b = g.zip_with(v, |t, vv| -t / (2.0 * vv))?.sum_plates();

        let mult: f64 = p_x
            .iter()
            .filter(|a| !p_v.contains(a))
            .map(|&ax| target.size_of(ax).unwrap() as f64)
            .product();
        let a = v
            .map(|vv| LN_2PI + vv.ln())
            .sum_plates()
            .map(|s| -0.5 * mult * s);
        Ok(a.zip_with(&b, |x, y| x + y)?)
    };
    Some(go())
}

/// Log-density sum over the full broadcast table, streamed in chunks along
/// the largest plate axis when the table would exceed the size budget.
fn generic_chunked_sum(
    family: Family,
    ps: &[Tensor],
    target: &Tensor,
    cfg: &EngineConfig,
) -> Result<Tensor, EngineError> {
    let all: Vec<&Tensor> = std::iter::once(target).chain(ps.iter()).collect();
    let axes = union_all(&all);
    let entries = entries_of(&axes, &all);
    let chunk_axis = axes
        .iter()
        .copied()
        .filter(|a| !a.is_copy())
        .max_by_key(|&ax| entries_of(&[ax], &all));
    let axis = match chunk_axis {
        Some(ax) if entries > cfg.chunk_entries => ax,
        _ => return Ok(ln_pdf_tensors(family, target, ps)?.sum_plates()),
    };
    let size = entries_of(&[axis], &all);
    let per_index = entries / size;
    let step = (cfg.chunk_entries / per_index).max(1);
    let mut acc: Option<Tensor> = None;
    let mut start = 0;
    while start < size {
        let end = (start + step).min(size);
        let slice = |t: &Tensor| -> Tensor {
            if t.size_of(axis).is_some() {
                t.slice_range(axis, start, end)
            } else {
                t.clone()
            }
        };
        let tgt = slice(target);
        let pslices: Vec<Tensor> = ps.iter().map(slice).collect();
        let part = ln_pdf_tensors(family, &tgt, &pslices)?.sum_plates();
        acc = Some(match acc {
            None => part,
            Some(a) => a.zip_with(&part, |x, y| x + y)?,
        });
        start = end;
    }
    Ok(acc.expect("at least one chunk"))
}

// ---------------------------------------------------------------------------
// Factor construction
// ---------------------------------------------------------------------------

/// Log-weight factors over copy axes: one per latent
/// (log prior minus log proposal) and one per observation (log likelihood),
/// plate cells already summed in. The product of exp(factors) over a full
/// copy-index assignment is that combination's importance ratio.
#[derive(Clone, Debug)]
pub struct FactorSet {
    pub factors: Vec<Tensor>,
    pub k: usize,
    /// Number of distinct copy axes across all factors; the evidence
    /// estimate divides by k^n_copy_axes.
    pub n_copy_axes: usize,
}

/// Per-cell proposal parameter tables as tensors over the latent's plate
/// axes, one tensor per parameter slot. Routing the proposal density through
/// the same table evaluator as the prior keeps "prior equals proposal"
/// cancellations exact.
fn proposal_param_tensors(model: &CompiledModel, i: usize, q: &Proposals) -> Vec<Tensor> {
    let decl = &model.ir.latents[i];
    let axes = model.ir.plate_axes(&decl.plates);
    let sizes = model.ir.plate_sizes_sorted(&decl.plates);
    let dim = decl.proposal_family.param_dim();
    (0..dim)
        .map(|d| {
            let vals: Vec<f64> = q.params[i].iter().map(|p| p.values[d]).collect();
            Tensor::from_data(
                axes.clone(),
                ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&sizes), vals).expect("shape"),
            )
        })
        .collect()
}

pub fn build_log_factors(
    model: &CompiledModel,
    data: &DataSet,
    bank: &SampleBank,
    q: &Proposals,
    cfg: &EngineConfig,
) -> Result<FactorSet, EngineError> {
    q.check(model)?;
    let latent_vals: Vec<Option<Tensor>> = bank.values.iter().cloned().map(Some).collect();
    let covariates: Vec<Option<CovValue>> = data.covariates.iter().cloned().map(Some).collect();
    let ctx = EvalCtx { latents: &latent_vals, covariates: &covariates };

    let mut factors = Vec::new();
    for (i, decl) in model.ir.latents.iter().enumerate() {
        let ps: Vec<Tensor> = decl
            .prior_params
            .iter()
            .map(|e| eval_expr(&model.ir, e, &ctx))
            .collect::<Result<_, _>>()?;
        let prior = log_density_sum(decl.family, &ps, &bank.values[i], &decl.name, cfg)?;

        let q_ps = proposal_param_tensors(model, i, q);
        let what = format!("proposal for `{}`", decl.name);
        let lq = log_density_sum(decl.proposal_family, &q_ps, &bank.values[i], &what, cfg)?;
        // The proposal parameters carry no parent copy axis, so averaging
        // the proposal mass over the K parent copies returns the same
        // table; both denominator conventions share this code path.
        let lq = match cfg.denominator {
            QmpConvention::PermutationBound | QmpConvention::Mixture => lq,
        };
        factors.push(prior.zip_with(&lq, |a, b| a - b)?);
    }
    for (o, obs) in model.ir.observations.iter().enumerate() {
        let ps: Vec<Tensor> = obs
            .params
            .iter()
            .map(|e| eval_expr(&model.ir, e, &ctx))
            .collect::<Result<_, _>>()?;
        factors.push(log_density_sum(obs.family, &ps, &data.observations[o], &obs.name, cfg)?);
    }

    let n_copy_axes =
        count_copy_axes(&factors.iter().map(|f| f.axes()).collect::<Vec<_>>());
    Ok(FactorSet { factors, k: bank.k, n_copy_axes })
}

/// Largest factor rank the model's structure implies: each latent's factor
/// couples its own copy axis with its parents' (rank 1 + #parents), and each
/// observation's factor couples the copy axes of every latent it references.
pub fn structural_peak_bound(model: &CompiledModel) -> usize {
    let latents = model
        .topo
        .latent_parents
        .iter()
        .map(|pa| 1 + pa.len())
        .max()
        .unwrap_or(0);
    let obs = model
        .topo
        .obs_parents
        .iter()
        .map(|pa| pa.len())
        .max()
        .unwrap_or(0);
    latents.max(obs)
}

// ---------------------------------------------------------------------------
// Elimination
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    pub axis: AxisId,
    /// Rank of the message produced after summing this axis out.
    pub predicted_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EliminationPlan {
    pub steps: Vec<PlanStep>,
    pub peak_predicted: usize,
}

/// Greedy minimum-predicted-rank ordering over the axes in `eliminate`,
/// breaking ties by axis identity so the plan is deterministic.
pub fn plan_elimination(
    factor_axes: &[Vec<AxisId>],
    eliminate: &BTreeSet<AxisId>,
) -> EliminationPlan {
    let mut live: Vec<BTreeSet<AxisId>> = factor_axes
        .iter()
        .map(|a| a.iter().copied().collect())
        .collect();
    let mut remaining = eliminate.clone();
    let mut steps = Vec::with_capacity(remaining.len());
    let mut peak = 0usize;
    while !remaining.is_empty() {
        let (axis, rank) = remaining
            .iter()
            .map(|&ax| {
                let mut union = BTreeSet::new();
                for s in live.iter().filter(|s| s.contains(&ax)) {
                    union.extend(s.iter().copied());
                }
                union.remove(&ax);
                (ax, union.len())
            })
            .min_by_key(|&(ax, rank)| (rank, ax))
            .expect("remaining is non-empty");
        let mut union = BTreeSet::new();
        live.retain(|s| {
            if s.contains(&axis) {
                union.extend(s.iter().copied());
                false
            } else {
                true
            }
        });
        union.remove(&axis);
        live.push(union);
        peak = peak.max(rank);
        steps.push(PlanStep { axis, predicted_rank: rank });
        remaining.remove(&axis);
    }
    EliminationPlan { steps, peak_predicted: peak }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Largest number of copy axes on any materialized table: input factors
    /// and every combined table formed during elimination.
    pub peak_factor_rank: usize,
    pub eliminations: usize,
    pub memo_hits: usize,
}

struct ResampleStep {
    axis: AxisId,
    parts: Vec<Rc<Tensor>>,
}

/// Contraction state over one factor set. Elimination steps are memoized by
/// (axis, participating factor identities), so the per-latent marginal runs
/// reuse every message the evidence run or a previous marginal already
/// produced.
pub struct Eliminator {
    k: usize,
    n_copy_axes: usize,
    rank_cap: usize,
    base: Vec<Rc<Tensor>>,
    all_axes: BTreeSet<AxisId>,
    memo: HashMap<(AxisId, Vec<u32>), (u32, Rc<Tensor>)>,
    next_id: u32,
    evidence: Option<f64>,
    evidence_steps: Vec<ResampleStep>,
    marginals: BTreeMap<AxisId, Rc<Tensor>>,
    stats: EngineStats,
}

impl Eliminator {
    pub fn new(fs: &FactorSet, cfg: &EngineConfig) -> Eliminator {
        let base: Vec<Rc<Tensor>> = fs.factors.iter().cloned().map(Rc::new).collect();
        let mut all_axes = BTreeSet::new();
        let mut peak = 0usize;
        for f in &base {
            let copies = f.axes().iter().filter(|a| a.is_copy()).count();
            peak = peak.max(copies);
            all_axes.extend(f.axes().iter().copied().filter(|a| a.is_copy()));
        }
        Eliminator {
            k: fs.k,
            n_copy_axes: fs.n_copy_axes,
            rank_cap: cfg.rank_cap,
            base,
            all_axes,
            memo: HashMap::new(),
            next_id: fs.factors.len() as u32,
            evidence: None,
            evidence_steps: Vec::new(),
            marginals: BTreeMap::new(),
            stats: EngineStats { peak_factor_rank: peak, ..EngineStats::default() },
        }
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    /// Runs the plan that eliminates every copy axis except `keep`, returning
    /// the combination of whatever remains (a scalar table for a full
    /// contraction, a one-axis table for a marginal).
    fn run(&mut self, keep: Option<AxisId>) -> Result<Tensor, EngineError> {
        let eliminate: BTreeSet<AxisId> = self
            .all_axes
            .iter()
            .copied()
            .filter(|&a| Some(a) != keep)
            .collect();
        let axes: Vec<Vec<AxisId>> = self.base.iter().map(|f| f.axes().to_vec()).collect();
        let plan = plan_elimination(&axes, &eliminate);

        let record = keep.is_none() && self.evidence_steps.is_empty();
        let mut live: Vec<(u32, Rc<Tensor>)> = self
            .base
            .iter()
            .enumerate()
            .map(|(i, f)| (i as u32, f.clone()))
            .collect();
        for step in &plan.steps {
            let mut parts: Vec<(u32, Rc<Tensor>)> = Vec::new();
            live.retain(|(id, t)| {
                if t.size_of(step.axis).is_some() {
                    parts.push((*id, t.clone()));
                    false
                } else {
                    true
                }
            });
            parts.sort_by_key(|(id, _)| *id);
            if record {
                self.evidence_steps.push(ResampleStep {
                    axis: step.axis,
                    parts: parts.iter().map(|(_, t)| t.clone()).collect(),
                });
            }
            let key = (step.axis, parts.iter().map(|(id, _)| *id).collect::<Vec<u32>>());
            let entry = if let Some(hit) = self.memo.get(&key) {
                self.stats.memo_hits += 1;
                hit.clone()
            } else {
                let mut it = parts.iter().map(|(_, t)| t);
                let first = it.next().expect("an eliminated axis occurs in some factor");
                let mut combined = (**first).clone();
                for t in it {
                    combined = combined.zip_with(t, |a, b| a + b)?;
                }
                let rank = combined.axes().iter().filter(|a| a.is_copy()).count();
                self.stats.peak_factor_rank = self.stats.peak_factor_rank.max(rank);
                if rank > self.rank_cap {
                    return Err(EngineError::RankCap {
                        what: format!("eliminating axis {:?}", step.axis),
                        rank,
                        cap: self.rank_cap,
                    });
                }
                let msg = Rc::new(combined.logsumexp_over(step.axis));
                let id = self.next_id;
                self.next_id += 1;
                self.memo.insert(key, (id, msg.clone()));
                (id, msg)
            };
            self.stats.eliminations += 1;
            live.push(entry);
        }
        live.sort_by_key(|(id, _)| *id);
        let mut total = Tensor::scalar(0.0);
        for (_, t) in &live {
            total = total.zip_with(t, |a, b| a + b)?;
        }
        Ok(total)
    }

    /// log[(1/K^n) sum over all copy-index combinations of the weight
    /// product]. Finishing this run also fixes the per-step tables backward
    /// resampling walks through.
    pub fn log_evidence(&mut self) -> Result<f64, EngineError> {
        if let Some(le) = self.evidence {
            return Ok(le);
        }
        let total = self.run(None)?;
        let raw = *total.data().iter().next().expect("scalar");
        let le = raw - self.n_copy_axes as f64 * (self.k as f64).ln();
        if le.is_nan() || le == f64::NEG_INFINITY {
            return Err(EngineError::DegenerateWeights {
                context: "contracting the full factor set".to_string(),
            });
        }
        self.evidence = Some(le);
        Ok(le)
    }

    /// Unnormalized marginal log-weights over one copy axis: the log of the
    /// weight sum over all combinations holding that axis fixed.
    pub fn marginal(&mut self, axis: AxisId) -> Result<Tensor, EngineError> {
        if let Some(m) = self.marginals.get(&axis) {
            return Ok((**m).clone());
        }
        assert!(self.all_axes.contains(&axis), "axis {axis:?} not in the factor set");
        let t = self.run(Some(axis))?;
        let t = if t.size_of(axis).is_none() {
            // Every factor carrying this axis was axis-free of it only if the
            // axis never appeared; guard above prevents that, but a keep-axis
            // of size 1 can fold away. Rebuild the explicit one-axis table.
            t.broadcast_to(&[axis], &[self.k])
        } else {
            t
        };
        self.marginals.insert(axis, Rc::new(t.clone()));
        Ok(t)
    }

    /// Draws `count` full copy-index assignments with probability
    /// proportional to their weight product, by walking the elimination
    /// steps of the full contraction in reverse and sampling each axis
    /// conditioned on the axes already fixed. Returns, per draw, one copy
    /// index per latent (via the bank's axis map).
    pub fn backward_resample(
        &mut self,
        bank: &SampleBank,
        seed: u64,
        count: usize,
    ) -> Result<Vec<Vec<u32>>, EngineError> {
        self.log_evidence()?;
        let mut out = Vec::with_capacity(count);
        for s in 0..count {
            let mut stream = Stream::from_parts(&[seed, purpose::RESAMPLE, s as u64]);
            let mut assigned: BTreeMap<AxisId, usize> = BTreeMap::new();
            for step in self.evidence_steps.iter().rev() {
                let mut lw = vec![0.0f64; self.k];
                for part in &step.parts {
                    let mut t: Option<Tensor> = None;
                    for &ax in part.axes() {
                        if ax == step.axis {
                            continue;
                        }
                        let idx = *assigned
                            .get(&ax)
                            .expect("axes eliminated later are already assigned");
                        t = Some(match t {
                            None => part.select(ax, idx),
                            Some(cur) => cur.select(ax, idx),
                        });
                    }
                    let t = t.unwrap_or_else(|| (**part).clone());
                    if t.size_of(step.axis).is_some() {
                        for (j, x) in t.iter().enumerate() {
                            lw[j] += x;
                        }
                    } else {
                        let c = *t.data().iter().next().expect("scalar");
                        for w in lw.iter_mut() {
                            *w += c;
                        }
                    }
                }
                let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(EngineError::DegenerateWeights {
                        context: format!("resampling axis {:?}", step.axis),
                    });
                }
                let probs: Vec<f64> = lw.iter().map(|&x| (x - m).exp()).collect();
                let total: f64 = probs.iter().sum();
                let mut u = stream.next_open01() * total;
                let mut choice = self.k - 1;
                for (j, &p) in probs.iter().enumerate() {
                    if u < p {
                        choice = j;
                        break;
                    }
                    u -= p;
                }
                assigned.insert(step.axis, choice);
            }
            out.push(
                bank.axis_of
                    .iter()
                    .map(|ax| {
                        *assigned
                            .get(ax)
                            .expect("every copy axis was eliminated once") as u32
                    })
                    .collect(),
            );
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Moments, evidence variants, and prediction
// ---------------------------------------------------------------------------

/// How marginal copy weights are normalized before the moment average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentNormalizer {
    /// Divide by the weight sum from the same bank (softmax over the
    /// marginal); consistent as K grows, biased at finite K.
    SelfNormalized,
    /// Divide by a fixed log evidence computed elsewhere (an independent
    /// bank), which keeps the moment estimator unbiased.
    FixedLogEvidence(f64),
}

/// Per-latent moment estimates plus the evidence estimate they came from.
/// Feasibility of the estimates (as parameters of the proposal family) is
/// deliberately unchecked here; degenerate weight sets are the caller's to
/// detect when converting back to conventional parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    /// [latent][plate cell] expected sufficient statistics.
    pub moments: Vec<Vec<MeanParams>>,
    pub log_evidence: f64,
}

pub fn posterior_moments(
    model: &CompiledModel,
    bank: &SampleBank,
    elim: &mut Eliminator,
    normalizer: MomentNormalizer,
) -> Result<MomentEstimate, EngineError> {
    let log_evidence = elim.log_evidence()?;
    let ln_k = (bank.k as f64).ln();
    let mut moments = Vec::with_capacity(model.ir.latents.len());
    for (i, decl) in model.ir.latents.iter().enumerate() {
        let axis = bank.axis_of[i];
        let l = elim.marginal(axis)?;
        let lvals: Vec<f64> = l.iter().copied().collect();
        let weights: Vec<f64> = match normalizer {
            MomentNormalizer::SelfNormalized => {
                let m = lvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(EngineError::DegenerateWeights {
                        context: format!("normalizing marginal weights for `{}`", decl.name),
                    });
                }
                let exps: Vec<f64> = lvals.iter().map(|&x| (x - m).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.iter().map(|&e| e / total).collect()
            }
            MomentNormalizer::FixedLogEvidence(le_ref) => {
                let shift = elim.n_copy_axes as f64 * ln_k + le_ref;
                lvals.iter().map(|&x| (x - shift).exp()).collect()
            }
        };
        let value = &bank.values[i];
        let cells = model.ir.cell_count(&decl.plates);
        let slice = value.data().as_slice().expect("bank tensors are contiguous");
        let family = decl.proposal_family;
        let dim = family.stat_dim();
        let mut acc = vec![0.0f64; cells * dim];
        for (kk, &w) in weights.iter().enumerate() {
            for cell in 0..cells {
                let x = slice[kk * cells + cell];
                match family {
                    Family::Gaussian => {
                        acc[cell * 2] += w * x;
                        acc[cell * 2 + 1] += w * x * x;
                    }
                    Family::Bernoulli => acc[cell] += w * x,
                    Family::Beta => {
                        acc[cell * 2] += w * x.ln();
                        acc[cell * 2 + 1] += w * (1.0 - x).ln();
                    }
                    Family::Gamma => {
                        acc[cell * 2] += w * x;
                        acc[cell * 2 + 1] += w * x.ln();
                    }
                    Family::NegativeBinomialLik => {
                        unreachable!("rejected as a proposal family at validation")
                    }
                }
            }
        }
        let per_cell: Vec<MeanParams> = (0..cells)
            .map(|cell| {
                MeanParams::new_unchecked(family, acc[cell * dim..(cell + 1) * dim].to_vec())
                    .expect("stat dimension matches family")
            })
            .collect();
        moments.push(per_cell);
    }
    Ok(MomentEstimate { moments, log_evidence })
}

/// Evidence estimate from an independent bank derived from `seed`, for use
/// as the fixed normalizer in unbiased moment estimation.
pub fn fresh_denominator_evidence(
    model: &CompiledModel,
    data: &DataSet,
    q: &Proposals,
    seed: u64,
    k: usize,
    cfg: &EngineConfig,
) -> Result<f64, EngineError> {
    let fresh_seed = mix_key(&[seed, purpose::FRESH]);
    let bank = draw_sample_bank(model, q, fresh_seed, k)?;
    let fs = build_log_factors(model, data, &bank, q, cfg)?;
    Eliminator::new(&fs, cfg).log_evidence()
}

/// Joint importance sampling baseline: K full joint draws, one shared copy
/// axis, self-normalized moments. Identical code path to the per-latent
/// estimator, differing only in the bank's axis labeling.
pub fn global_iw(
    model: &CompiledModel,
    data: &DataSet,
    q: &Proposals,
    seed: u64,
    k: usize,
    cfg: &EngineConfig,
) -> Result<MomentEstimate, EngineError> {
    let bank = global_bank(model, q, seed, k)?;
    let fs = build_log_factors(model, data, &bank, q, cfg)?;
    let mut elim = Eliminator::new(&fs, cfg);
    posterior_moments(model, &bank, &mut elim, MomentNormalizer::SelfNormalized)
}

/// log of the average, over the supplied copy-index assignments, of the
/// likelihood of `test`'s observations at the assignment's latent values.
/// Covariates are taken from `test`, so held-out rows may rebind them.
pub fn predictive_log_likelihood(
    model: &CompiledModel,
    test: &DataSet,
    bank: &SampleBank,
    samples: &[Vec<u32>],
    cfg: &EngineConfig,
) -> Result<f64, EngineError> {
    assert!(!samples.is_empty(), "need at least one posterior sample");
    let covariates: Vec<Option<CovValue>> = test.covariates.iter().cloned().map(Some).collect();
    let mut lls = Vec::with_capacity(samples.len());
    for idx in samples {
        let latent_vals: Vec<Option<Tensor>> = bank
            .values
            .iter()
            .zip(&bank.axis_of)
            .zip(idx)
            .map(|((v, &ax), &kk)| Some(v.select(ax, kk as usize)))
            .collect();
        let ctx = EvalCtx { latents: &latent_vals, covariates: &covariates };
        let mut ll = 0.0;
        for (o, obs) in model.ir.observations.iter().enumerate() {
            let ps: Vec<Tensor> = obs
                .params
                .iter()
                .map(|e| eval_expr(&model.ir, e, &ctx))
                .collect::<Result<_, _>>()?;
            let t = log_density_sum(obs.family, &ps, &test.observations[o], &obs.name, cfg)?;
            ll += *t.data().iter().next().expect("no copy axes remain");
        }
        lls.push(ll);
    }
    let m = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(EngineError::DegenerateWeights {
            context: "averaging predictive likelihoods".to_string(),
        });
    }
    let sum: f64 = lls.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + (sum / lls.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        CovKind, Expr, LatentDecl, ModelIR, ObservationDecl, PlateDecl, PlateId,
    };

    fn gauss_init(mean: f64, var: f64) -> MeanParams {
        MeanParams::new(Family::Gaussian, vec![mean, var + mean * mean]).unwrap()
    }

    fn scalar_gauss(name: &str, mean: Expr, var: Expr) -> LatentDecl {
        LatentDecl {
            name: name.to_string(),
            plates: vec![],
            family: Family::Gaussian,
            prior_params: vec![mean, var],
            proposal_family: Family::Gaussian,
            proposal_init: gauss_init(0.0, 1.0),
        }
    }

    /// z ~ N(0,1); x_r ~ N(z, 1) over a three-reading plate.
    fn one_gauss() -> (CompiledModel, DataSet) {
        let ir = ModelIR {
            plates: vec![PlateDecl { name: "R".into(), size: 3 }],
            covariates: vec![],
            latents: vec![scalar_gauss("z", Expr::Const(0.0), Expr::Const(1.0))],
            observations: vec![ObservationDecl {
                name: "x".into(),
                plates: vec![PlateId(0)],
                family: Family::Gaussian,
                params: vec![Expr::Latent(LatentId(0)), Expr::Const(1.0)],
                binding: "x".into(),
            }],
        };
        let model = ir.compile().unwrap();
        let data = DataSet {
            covariates: vec![],
            observations: vec![Tensor::from_data(
                vec![AxisId::Plate(PlateId(0))],
                ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[3]), vec![0.5, -0.3, 0.2])
                    .unwrap(),
            )],
        };
        (model, data)
    }

    /// z1 ~ N(0,1); z2 ~ N(z1,1); scalar observation x ~ N(z2, 1).
    fn chain2() -> (CompiledModel, DataSet) {
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents: vec![
                scalar_gauss("z1", Expr::Const(0.0), Expr::Const(1.0)),
                scalar_gauss("z2", Expr::Latent(LatentId(0)), Expr::Const(1.0)),
            ],
            observations: vec![ObservationDecl {
                name: "x".into(),
                plates: vec![],
                family: Family::Gaussian,
                params: vec![Expr::Latent(LatentId(1)), Expr::Const(1.0)],
                binding: "x".into(),
            }],
        };
        let model = ir.compile().unwrap();
        let data = DataSet {
            covariates: vec![],
            observations: vec![Tensor::scalar(0.7)],
        };
        (model, data)
    }

    fn default_run(
        model: &CompiledModel,
        data: &DataSet,
        seed: u64,
        k: usize,
    ) -> (SampleBank, Eliminator) {
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(model).unwrap();
        let bank = draw_sample_bank(model, &q, seed, k).unwrap();
        let fs = build_log_factors(model, data, &bank, &q, &cfg).unwrap();
        let elim = Eliminator::new(&fs, &cfg);
        (bank, elim)
    }

    #[test]
    fn banks_and_evidence_are_deterministic() {
        let (model, data) = chain2();
        let (bank1, mut e1) = default_run(&model, &data, 42, 6);
        let (bank2, mut e2) = default_run(&model, &data, 42, 6);
        assert_eq!(bank1.values, bank2.values);
        assert_eq!(bank1.perms, bank2.perms);
        assert_eq!(
            e1.log_evidence().unwrap().to_bits(),
            e2.log_evidence().unwrap().to_bits()
        );
        let m1 = posterior_moments(&model, &bank1, &mut e1, MomentNormalizer::SelfNormalized)
            .unwrap();
        let m2 = posterior_moments(&model, &bank2, &mut e2, MomentNormalizer::SelfNormalized)
            .unwrap();
        assert_eq!(m1, m2);
        let (bank3, mut e3) = default_run(&model, &data, 43, 6);
        assert_ne!(bank1.values, bank3.values);
        assert_ne!(e1.log_evidence().unwrap(), e3.log_evidence().unwrap());
    }

    #[test]
    fn prior_equal_to_proposal_and_no_data_gives_zero_factors() {
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents: vec![
                scalar_gauss("a", Expr::Const(0.0), Expr::Const(1.0)),
                LatentDecl {
                    proposal_init: gauss_init(2.0, 4.0),
                    ..scalar_gauss("b", Expr::Const(2.0), Expr::Const(4.0))
                },
            ],
            observations: vec![],
        };
        let model = ir.compile().unwrap();
        let data = DataSet { covariates: vec![], observations: vec![] };
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 7, 5).unwrap();
        let fs = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap();
        for f in &fs.factors {
            assert!(f.iter().all(|&x| x == 0.0), "{f:?}");
        }
        let le = Eliminator::new(&fs, &cfg).log_evidence().unwrap();
        assert_eq!(le, 0.0);
    }

    fn manual_two_copy_setup() -> (CompiledModel, SampleBank, FactorSet) {
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents: vec![scalar_gauss("z", Expr::Const(0.0), Expr::Const(1.0))],
            observations: vec![],
        };
        let model = ir.compile().unwrap();
        let axis = AxisId::Copy(LatentId(0));
        let values = Tensor::from_data(
            vec![axis],
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[2]), vec![1.0, 3.0]).unwrap(),
        );
        let bank = SampleBank {
            k: 2,
            values: vec![values.clone()],
            xis: vec![values.clone()],
            axis_of: vec![axis],
            perms: BTreeMap::new(),
        };
        let factor = Tensor::from_data(
            vec![axis],
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[2]),
                vec![3.0f64.ln(), 1.0f64.ln()],
            )
            .unwrap(),
        );
        let fs = FactorSet { factors: vec![factor], k: 2, n_copy_axes: 1 };
        (model, bank, fs)
    }

    #[test]
    fn single_factor_evidence_and_moments_match_hand_arithmetic() {
        let (model, bank, fs) = manual_two_copy_setup();
        let cfg = EngineConfig::default();
        let mut elim = Eliminator::new(&fs, &cfg);
        // logsumexp(ln 3, ln 1) - ln 2 = ln(4/2) = ln 2.
        let le = elim.log_evidence().unwrap();
        assert!((le - 2.0f64.ln()).abs() < 1e-14);

        // Self-normalized weights (0.75, 0.25) over values (1, 3).
        let est =
            posterior_moments(&model, &bank, &mut elim, MomentNormalizer::SelfNormalized)
                .unwrap();
        let m = &est.moments[0][0];
        assert!((m.values[0] - 1.5).abs() < 1e-14);
        assert!((m.values[1] - 3.0).abs() < 1e-14);

        // Fixed normalizer log(1): weights (3/2, 1/2) are deliberately
        // unnormalized, so the plain weighted sums double.
        let est2 = posterior_moments(
            &model,
            &bank,
            &mut elim,
            MomentNormalizer::FixedLogEvidence(0.0),
        )
        .unwrap();
        let m2 = &est2.moments[0][0];
        assert!((m2.values[0] - 3.0).abs() < 1e-14);
        assert!((m2.values[1] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn resample_frequencies_track_the_weights() {
        let (_, bank, fs) = manual_two_copy_setup();
        let cfg = EngineConfig::default();
        let mut elim = Eliminator::new(&fs, &cfg);
        let n = 4000;
        let samples = elim.backward_resample(&bank, 99, n).unwrap();
        let zeros = samples.iter().filter(|s| s[0] == 0).count() as f64 / n as f64;
        assert!((zeros - 0.75).abs() < 0.03, "frequency of copy 0 was {zeros}");
    }

    #[test]
    fn chain_resampling_matches_the_exact_joint() {
        let (model, data) = chain2();
        let k = 3;
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 5, k).unwrap();
        let fs = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap();

        // Exact joint over the K x K copy grid from the raw factors.
        let mut joint = Tensor::scalar(0.0);
        for f in &fs.factors {
            joint = joint.zip_with(f, |a, b| a + b).unwrap();
        }
        let flat: Vec<f64> = joint.iter().copied().collect();
        let mx = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = flat.iter().map(|&x| (x - mx).exp()).sum();
        let probs: Vec<f64> = flat.iter().map(|&x| (x - mx).exp() / total).collect();

        let mut elim = Eliminator::new(&fs, &cfg);
        let n = 6000;
        let samples = elim.backward_resample(&bank, 11, n).unwrap();
        let mut counts = vec![0usize; k * k];
        for s in &samples {
            counts[s[0] as usize * k + s[1] as usize] += 1;
        }
        for (cell, &p) in probs.iter().enumerate() {
            let freq = counts[cell] as f64 / n as f64;
            assert!(
                (freq - p).abs() < 0.05,
                "grid cell {cell}: frequency {freq} vs probability {p}"
            );
        }
    }

    #[test]
    fn collapsed_one_latent_run_is_bit_identical_to_the_per_latent_run() {
        let (model, data) = one_gauss();
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let (bank, mut elim) = default_run(&model, &data, 17, 16);
        let per_latent =
            posterior_moments(&model, &bank, &mut elim, MomentNormalizer::SelfNormalized)
                .unwrap();
        let joint = global_iw(&model, &data, &q, 17, 16, &cfg).unwrap();
        assert_eq!(per_latent, joint);
        assert_eq!(
            per_latent.log_evidence.to_bits(),
            joint.log_evidence.to_bits()
        );
    }

    #[test]
    fn permutation_identity_at_k_one_and_validity_at_larger_k() {
        let (model, _) = chain2();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 3, 1).unwrap();
        assert_eq!(bank.perms[&(1, 0)], vec![0]);
        let bank = draw_sample_bank(&model, &q, 3, 5).unwrap();
        let mut p = bank.perms[&(1, 0)].clone();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn denominator_conventions_coincide_for_parent_free_proposals() {
        let (model, data) = chain2();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 9, 4).unwrap();
        let mut cfg = EngineConfig::default();
        cfg.denominator = QmpConvention::PermutationBound;
        let a = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap();
        cfg.denominator = QmpConvention::Mixture;
        let b = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap();
        assert_eq!(a.factors, b.factors);
    }

    #[test]
    fn elimination_plan_is_greedy_and_covers_each_axis_once() {
        let a = AxisId::Copy(LatentId(0));
        let b = AxisId::Copy(LatentId(1));
        let c = AxisId::Copy(LatentId(2));
        let factor_axes = vec![vec![a], vec![a, b], vec![b, c], vec![c]];
        let eliminate: BTreeSet<AxisId> = [a, b, c].into_iter().collect();
        let plan = plan_elimination(&factor_axes, &eliminate);
        let order: Vec<AxisId> = plan.steps.iter().map(|s| s.axis).collect();
        assert_eq!(order, vec![a, b, c]);
        let ranks: Vec<usize> = plan.steps.iter().map(|s| s.predicted_rank).collect();
        assert_eq!(ranks, vec![1, 1, 0]);
        assert_eq!(plan.peak_predicted, 1);
    }

    #[test]
    fn structural_bound_counts_parents_and_observation_references() {
        let (model, _) = one_gauss();
        assert_eq!(structural_peak_bound(&model), 1);
        let (model, _) = chain2();
        assert_eq!(structural_peak_bound(&model), 2);
    }

    #[test]
    fn executed_peak_rank_matches_the_chain_structure() {
        let (model, data) = chain2();
        let (bank, mut elim) = default_run(&model, &data, 21, 4);
        posterior_moments(&model, &bank, &mut elim, MomentNormalizer::SelfNormalized).unwrap();
        assert_eq!(elim.stats().peak_factor_rank, 2);
        assert_eq!(elim.stats().peak_factor_rank, structural_peak_bound(&model));
        assert!(elim.stats().memo_hits > 0, "marginal runs should reuse messages");
    }

    #[test]
    fn too_many_coupled_latents_hit_the_rank_cap() {
        let n = 5;
        let latents: Vec<LatentDecl> = (0..n)
            .map(|i| scalar_gauss(&format!("z{i}"), Expr::Const(0.0), Expr::Const(1.0)))
            .collect();
        let mut mean = Expr::Latent(LatentId(0));
        for i in 1..n {
            mean = Expr::Add(Box::new(mean), Box::new(Expr::Latent(LatentId(i))));
        }
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents,
            observations: vec![ObservationDecl {
                name: "x".into(),
                plates: vec![],
                family: Family::Gaussian,
                params: vec![mean, Expr::Const(1.0)],
                binding: "x".into(),
            }],
        };
        let model = ir.compile().unwrap();
        let data = DataSet { covariates: vec![], observations: vec![Tensor::scalar(0.0)] };
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 1, 2).unwrap();
        let err = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap_err();
        match err {
            EngineError::RankCap { rank, cap, .. } => {
                assert_eq!(rank, 5);
                assert_eq!(cap, 4);
            }
            other => panic!("expected a rank-cap error, got {other}"),
        }
    }

    #[test]
    fn impossible_data_reports_degenerate_weights() {
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents: vec![LatentDecl {
                name: "z".into(),
                plates: vec![],
                family: Family::Bernoulli,
                prior_params: vec![Expr::Const(0.5)],
                proposal_family: Family::Bernoulli,
                proposal_init: MeanParams::new(Family::Bernoulli, vec![0.5]).unwrap(),
            }],
            observations: vec![ObservationDecl {
                name: "y".into(),
                plates: vec![],
                family: Family::Bernoulli,
                params: vec![Expr::Const(0.0)],
                binding: "y".into(),
            }],
        };
        let model = ir.compile().unwrap();
        let data = DataSet { covariates: vec![], observations: vec![Tensor::scalar(1.0)] };
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 2, 3).unwrap();
        let fs = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap();
        let err = Eliminator::new(&fs, &cfg).log_evidence().unwrap_err();
        assert!(matches!(err, EngineError::DegenerateWeights { .. }));
    }

    #[test]
    fn invalid_parameter_tables_are_rejected_with_the_culprit_named() {
        let ir = ModelIR {
            plates: vec![],
            covariates: vec![],
            latents: vec![scalar_gauss("z", Expr::Const(0.0), Expr::Const(1.0))],
            observations: vec![ObservationDecl {
                name: "x".into(),
                plates: vec![],
                family: Family::Gaussian,
                params: vec![Expr::Latent(LatentId(0)), Expr::Const(-1.0)],
                binding: "x".into(),
            }],
        };
        let model = ir.compile().unwrap();
        let data = DataSet { covariates: vec![], observations: vec![Tensor::scalar(0.0)] };
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 2, 2).unwrap();
        let err = build_log_factors(&model, &data, &bank, &q, &cfg).unwrap_err();
        match err {
            EngineError::InvalidParams { what, .. } => assert_eq!(what, "x"),
            other => panic!("expected invalid parameters, got {other}"),
        }
    }

    #[test]
    fn separated_gaussian_path_agrees_with_the_generic_table() {
        // Mean varies over a copy axis and one plate; variance over the
        // other plate; target over both plates.
        let kz = AxisId::Copy(LatentId(0));
        let r = AxisId::Plate(PlateId(0));
        let s = AxisId::Plate(PlateId(1));
        let target = Tensor::from_data(
            vec![r, s],
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[4, 2]),
                vec![0.3, -1.2, 0.8, 0.1, -0.4, 2.0, 1.1, -0.6],
            )
            .unwrap(),
        );
        let m = Tensor::from_data(
            vec![kz, s],
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[3, 2]),
                vec![0.0, 0.5, -0.7, 1.0, 0.2, -0.1],
            )
            .unwrap(),
        );
        let v = Tensor::from_data(
            vec![r],
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), vec![0.5, 1.5, 2.0, 0.9])
                .unwrap(),
        );
        let cfg = EngineConfig::default();
        let sep = gaussian_separated_sum(&m, &v, &target, &cfg).unwrap().unwrap();
        let gen = generic_chunked_sum(Family::Gaussian, &[m, v], &target, &cfg).unwrap();
        assert_eq!(sep.axes(), gen.axes());
        for (a, b) in sep.iter().zip(gen.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn chunked_streaming_agrees_with_the_single_table() {
        let kz = AxisId::Copy(LatentId(0));
        let r = AxisId::Plate(PlateId(0));
        let target = Tensor::from_data(
            vec![r],
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[9]),
                (0..9).map(|i| 0.1 + 0.09 * i as f64).collect(),
            )
            .unwrap(),
        );
        let a = Tensor::from_data(
            vec![kz],
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[3]), vec![0.5, 1.0, 2.5]).unwrap(),
        );
        let b = Tensor::from_data(
            vec![r],
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[9]),
                (0..9).map(|i| 0.4 + 0.2 * i as f64).collect(),
            )
            .unwrap(),
        );
        let mut tiny = EngineConfig::default();
        tiny.chunk_entries = 4;
        let chunked =
            generic_chunked_sum(Family::Beta, &[a.clone(), b.clone()], &target, &tiny).unwrap();
        let whole = generic_chunked_sum(
            Family::Beta,
            &[a, b],
            &target,
            &EngineConfig::default(),
        )
        .unwrap();
        assert_eq!(chunked.axes(), whole.axes());
        for (x, y) in chunked.iter().zip(whole.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn predictive_score_at_one_sample_is_the_plain_log_likelihood() {
        let (model, data) = one_gauss();
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let bank = draw_sample_bank(&model, &q, 31, 1).unwrap();
        let ll =
            predictive_log_likelihood(&model, &data, &bank, &[vec![0]], &cfg).unwrap();
        let z = *bank.values[0].data().iter().next().unwrap();
        let want: f64 = [0.5, -0.3, 0.2]
            .iter()
            .map(|&x| dist::gaussian_ln_pdf(x, z, 1.0))
            .sum();
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn fresh_denominator_uses_an_independent_bank() {
        let (model, data) = one_gauss();
        let cfg = EngineConfig::default();
        let q = Proposals::from_init(&model).unwrap();
        let (_, mut elim) = default_run(&model, &data, 8, 32);
        let own = elim.log_evidence().unwrap();
        let fresh = fresh_denominator_evidence(&model, &data, &q, 8, 32, &cfg).unwrap();
        assert_ne!(own, fresh);
        let fresh2 = fresh_denominator_evidence(&model, &data, &q, 8, 32, &cfg).unwrap();
        assert_eq!(fresh.to_bits(), fresh2.to_bits());
    }
}
