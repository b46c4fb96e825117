//! Slow-but-sure references at desk scale: brute-force enumeration over all
//! copy-index combinations, exact linear-Gaussian posteriors, exact
//! discrete-plus-quadrature posteriors, synthetic data generation, random
//! small-model generation, and the built-in example models.
//!
//! Everything here trades speed for directness, so the fast engine can be
//! checked against code with no shared estimator logic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dist::{
    self, ConventionalParams, DistError, Family, MeanParams,
};
use crate::dsl::DataSet;
use crate::engine::{MomentEstimate, Proposals, SampleBank};
use crate::graph::{
    eval_expr, CompiledModel, CovKind, CovValue, CovariateDecl, CovariateId, EvalCtx, EvalError,
    Expr, LatentDecl, LatentId, ModelIR, ObservationDecl, PlateDecl, PlateId, TableRef,
};
use crate::quad::gauss_legendre;
use crate::rng::{mix_key, purpose, Stream};
use crate::special::LN_2PI;
use crate::tensor::{AxisId, IntTensor, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state space too large: {states:.3e} exceeds {limit:.1e}")]
    TooLarge { states: f64, limit: f64 },
    #[error("model outside this oracle's reach: {0}")]
    Unsupported(String),
    #[error("dataset i/o failed for {path}: {detail}")]
    Io { path: String, detail: String },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Exact (or quadrature-exact) posterior summary: per-latent, per-cell mean
/// parameters and the log evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosterior {
    pub moments: Vec<Vec<MeanParams>>,
    pub log_evidence: f64,
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_pdf_scalar(family: Family, x: f64, p: &[f64]) -> f64 {
    match family {
        Family::Gaussian => dist::gaussian_ln_pdf(x, p[0], p[1]),
        Family::Bernoulli => dist::bernoulli_ln_pmf(x, p[0]),
        Family::Beta => dist::beta_ln_pdf(x, p[0], p[1]),
        Family::Gamma => dist::gamma_ln_pdf(x, p[0], p[1]),
        Family::NegativeBinomialLik => dist::negative_binomial_ln_pmf(x, p[0], p[1]),
    }
}

/// Values of `t` replicated out to the full cell grid of `axes`/`sizes`, in
/// row-major order.
fn cells_on(t: &Tensor, axes: &[AxisId], sizes: &[usize]) -> Vec<f64> {
    t.broadcast_to(axes, sizes).iter().copied().collect()
}

fn plate_layout(ir: &ModelIR, plates: &[PlateId]) -> (Vec<AxisId>, Vec<usize>) {
    (ir.plate_axes(plates), ir.plate_sizes_sorted(plates))
}

// ---------------------------------------------------------------------------
// Brute-force enumeration over copy-index combinations
// ---------------------------------------------------------------------------

const ENUM_LIMIT: f64 = 1e6;

/// Log importance ratio of every copy-index combination, in row-major order
/// with the last latent's index varying fastest. Each ratio is evaluated by
/// direct per-cell density arithmetic with no factor or elimination
/// machinery involved.
pub fn enumerate_log_weights(
    model: &CompiledModel,
    data: &DataSet,
    bank: &SampleBank,
    q: &Proposals,
) -> Result<Vec<f64>, OracleError> {
    let n = model.n_latents();
    let k = bank.k;
    let states = (k as f64).powi(n as i32);
    if states > ENUM_LIMIT {
        return Err(OracleError::TooLarge { states, limit: ENUM_LIMIT });
    }
    for (i, &ax) in bank.axis_of.iter().enumerate() {
        if ax != model.copy_axis(LatentId(i)) {
            return Err(OracleError::Unsupported(
                "enumeration expects one copy axis per latent".into(),
            ));
        }
    }
    let covariates: Vec<Option<CovValue>> = data.covariates.iter().cloned().map(Some).collect();
    let mut combo = vec![0usize; n];
    let mut out = Vec::with_capacity(states as usize);
    loop {
        let latent_vals: Vec<Option<Tensor>> = bank
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| Some(v.select(bank.axis_of[i], combo[i])))
            .collect();
        let ctx = EvalCtx { latents: &latent_vals, covariates: &covariates };
        let mut lr = 0.0;
        for (i, decl) in model.ir.latents.iter().enumerate() {
            let target = latent_vals[i].as_ref().unwrap();
            let (axes, sizes) = plate_layout(&model.ir, &decl.plates);
            let ps: Vec<Vec<f64>> = decl
                .prior_params
                .iter()
                .map(|e| Ok(cells_on(&eval_expr(&model.ir, e, &ctx)?, &axes, &sizes)))
                .collect::<Result<_, OracleError>>()?;
            for (c, &x) in target.iter().enumerate() {
                let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
                lr += ln_pdf_scalar(decl.family, x, &p);
                lr -= dist::log_prob(&q.params[i][c], x)?;
            }
        }
        for (o, obs) in model.ir.observations.iter().enumerate() {
            let target = &data.observations[o];
            let (axes, sizes) = plate_layout(&model.ir, &obs.plates);
            let ps: Vec<Vec<f64>> = obs
                .params
                .iter()
                .map(|e| Ok(cells_on(&eval_expr(&model.ir, e, &ctx)?, &axes, &sizes)))
                .collect::<Result<_, OracleError>>()?;
            for (c, &x) in target.iter().enumerate() {
                let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
                lr += ln_pdf_scalar(obs.family, x, &p);
            }
        }
        out.push(lr);
        // Odometer: last latent fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            combo[pos] += 1;
            if combo[pos] < k {
                break;
            }
            combo[pos] = 0;
        }
    }
}

/// log of the evidence estimate the bank defines: the average importance
/// ratio over all K^n combinations.
pub fn enumerate_log_evidence(
    model: &CompiledModel,
    data: &DataSet,
    bank: &SampleBank,
    q: &Proposals,
) -> Result<f64, OracleError> {
    let lw = enumerate_log_weights(model, data, bank, q)?;
    Ok(logsumexp(&lw) - model.n_latents() as f64 * (bank.k as f64).ln())
}

/// Self-normalized moment estimates the bank defines, by explicit marginal
/// sums over all combinations.
pub fn enumerate_moments(
    model: &CompiledModel,
    data: &DataSet,
    bank: &SampleBank,
    q: &Proposals,
) -> Result<MomentEstimate, OracleError> {
    let lw = enumerate_log_weights(model, data, bank, q)?;
    let n = model.n_latents();
    let k = bank.k;
    let log_evidence = logsumexp(&lw) - n as f64 * (k as f64).ln();

    let mut moments = Vec::with_capacity(n);
    for (i, decl) in model.ir.latents.iter().enumerate() {
        // Marginal log-weight of each copy of latent i.
        let stride = k.pow((n - 1 - i) as u32);
        let mut lm = vec![f64::NEG_INFINITY; k];
        for (t, &w) in lw.iter().enumerate() {
            let j = (t / stride) % k;
            lm[j] = logaddexp(lm[j], w);
        }
        let total = logsumexp(&lm);
        if total == f64::NEG_INFINITY {
            return Err(OracleError::Unsupported(format!(
                "all weights vanished for `{}`",
                decl.name
            )));
        }
        let weights: Vec<f64> = lm.iter().map(|&x| (x - total).exp()).collect();

        let cells = model.ir.cell_count(&decl.plates);
        let dim = decl.proposal_family.stat_dim();
        let mut acc = vec![0.0f64; cells * dim];
        let vals = bank.values[i].data().as_slice().expect("contiguous");
        for (j, &w) in weights.iter().enumerate() {
            for c in 0..cells {
                let stats = dist::sufficient_stats(decl.proposal_family, vals[j * cells + c])?;
                for (d, &s) in stats.iter().enumerate() {
                    acc[c * dim + d] += w * s;
                }
            }
        }
        moments.push(
            (0..cells)
                .map(|c| {
                    MeanParams::new_unchecked(
                        decl.proposal_family,
                        acc[c * dim..(c + 1) * dim].to_vec(),
                    )
                    .expect("stat dimension matches family")
                })
                .collect(),
        );
    }
    Ok(MomentEstimate { moments, log_evidence })
}

// ---------------------------------------------------------------------------
// Exact linear-Gaussian posterior
// ---------------------------------------------------------------------------

fn expr_refs_latents(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |sub| match sub {
        Expr::Latent(_) => found = true,
        Expr::Gather { table: TableRef::Latent(_), .. } => found = true,
        _ => {}
    });
    found
}

fn expr_is_affine(e: &Expr) -> bool {
    match e {
        Expr::Const(_) | Expr::Covariate(_) | Expr::Latent(_) | Expr::Gather { .. } => true,
        Expr::Add(a, b) | Expr::Sub(a, b) => expr_is_affine(a) && expr_is_affine(b),
        Expr::Neg(a) => expr_is_affine(a),
        Expr::Mul(a, b) => {
            (!expr_refs_latents(a) && expr_is_affine(b))
                || (expr_is_affine(a) && !expr_refs_latents(b))
        }
        Expr::Div(a, b) => expr_is_affine(a) && !expr_refs_latents(b),
        Expr::Exp(a) | Expr::Sigmoid(a) => !expr_refs_latents(a),
    }
}

/// Exact posterior for models where every prior and likelihood is Gaussian,
/// every mean is affine in the latents, and every variance is free of them.
/// Plate cells become scalar coordinates; the affine coefficients are read
/// off by probing the mean expressions with indicator values, the joint
/// log density is assembled as a quadratic form, and the posterior follows
/// from one Cholesky factorization of the precision matrix.
pub fn linear_gaussian_posterior(
    model: &CompiledModel,
    data: &DataSet,
) -> Result<ExactPosterior, OracleError> {
    let ir = &model.ir;
    for decl in &ir.latents {
        if decl.family != Family::Gaussian {
            return Err(OracleError::Unsupported(format!(
                "latent `{}` is not Gaussian",
                decl.name
            )));
        }
        if !expr_is_affine(&decl.prior_params[0]) || expr_refs_latents(&decl.prior_params[1]) {
            return Err(OracleError::Unsupported(format!(
                "latent `{}` has a nonlinear mean or latent-dependent variance",
                decl.name
            )));
        }
    }
    for obs in &ir.observations {
        if obs.family != Family::Gaussian {
            return Err(OracleError::Unsupported(format!(
                "observation `{}` is not Gaussian",
                obs.name
            )));
        }
        if !expr_is_affine(&obs.params[0]) || expr_refs_latents(&obs.params[1]) {
            return Err(OracleError::Unsupported(format!(
                "observation `{}` has a nonlinear mean or latent-dependent variance",
                obs.name
            )));
        }
    }

    // Scalar coordinate layout: latent i's cells occupy
    // offsets[i] .. offsets[i] + cells(i).
    let n = ir.latents.len();
    let mut offsets = Vec::with_capacity(n);
    let mut d_total = 0usize;
    for decl in &ir.latents {
        offsets.push(d_total);
        d_total += ir.cell_count(&decl.plates);
    }

    let covariates: Vec<Option<CovValue>> = data.covariates.iter().cloned().map(Some).collect();
    let zero_bindings: Vec<Tensor> = ir
        .latents
        .iter()
        .map(|decl| {
            let (axes, sizes) = plate_layout(ir, &decl.plates);
            Tensor::from_data(
                axes,
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&sizes), 0.0),
            )
        })
        .collect();

    // Evaluate `e` to per-cell values of the factor's plate grid, with one
    // latent cell optionally set to 1 and all others 0.
    let eval_cells = |e: &Expr,
                      probe: Option<(usize, usize)>,
                      axes: &[AxisId],
                      sizes: &[usize]|
     -> Result<Vec<f64>, OracleError> {
        let mut bindings: Vec<Option<Tensor>> =
            zero_bindings.iter().cloned().map(Some).collect();
        if let Some((j, cell)) = probe {
            let decl = &ir.latents[j];
            let (jaxes, jsizes) = plate_layout(ir, &decl.plates);
            let mut vals = vec![0.0; ir.cell_count(&decl.plates)];
            vals[cell] = 1.0;
            bindings[j] = Some(Tensor::from_data(
                jaxes,
                ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&jsizes), vals).unwrap(),
            ));
        }
        let ctx = EvalCtx { latents: &bindings, covariates: &covariates };
        Ok(cells_on(&eval_expr(ir, e, &ctx)?, axes, sizes))
    };

    let mut lam = DMatrix::<f64>::zeros(d_total, d_total);
    let mut h = DVector::<f64>::zeros(d_total);
    let mut g = 0.0f64;

    // Each Gaussian factor contributes -(u.z + t0)^2 / (2v) - ln(2 pi v)/2
    // per cell; accumulate the quadratic form.
    let mut add_factor = |u: &DVector<f64>, t0: f64, v: f64| {
        lam.ger(1.0 / v, u, u, 1.0);
        h.axpy(-t0 / v, u, 1.0);
        g += -t0 * t0 / (2.0 * v) - 0.5 * (LN_2PI + v.ln());
    };

    // Coefficient extraction shared by priors and likelihoods: mean(z) per
    // cell equals base[c] + sum_d coeff[c][d] z_d.
    let probe_affine = |mean: &Expr,
                        axes: &[AxisId],
                        sizes: &[usize]|
     -> Result<(Vec<f64>, Vec<Vec<f64>>), OracleError> {
        let base = eval_cells(mean, None, axes, sizes)?;
        let m = base.len();
        let mut coeff = vec![vec![0.0; d_total]; m];
        for (j, decl) in ir.latents.iter().enumerate() {
            for cell in 0..ir.cell_count(&decl.plates) {
                let probed = eval_cells(mean, Some((j, cell)), axes, sizes)?;
                for c in 0..m {
                    let a = probed[c] - base[c];
                    if a != 0.0 {
                        coeff[c][offsets[j] + cell] = a;
                    }
                }
            }
        }
        Ok((base, coeff))
    };

    for (i, decl) in ir.latents.iter().enumerate() {
        let (axes, sizes) = plate_layout(ir, &decl.plates);
        let (base, coeff) = probe_affine(&decl.prior_params[0], &axes, &sizes)?;
        let vars = eval_cells(&decl.prior_params[1], None, &axes, &sizes)?;
        for c in 0..base.len() {
            if !(vars[c].is_finite() && vars[c] > 0.0) {
                return Err(OracleError::Unsupported(format!(
                    "latent `{}` has non-positive variance",
                    decl.name
                )));
            }
            let mut u = DVector::from_vec(coeff[c].iter().map(|a| -a).collect());
            u[offsets[i] + c] += 1.0;
            add_factor(&u, -base[c], vars[c]);
        }
    }
    for (o, obs) in ir.observations.iter().enumerate() {
        let (axes, sizes) = plate_layout(ir, &obs.plates);
        let (base, coeff) = probe_affine(&obs.params[0], &axes, &sizes)?;
        let vars = eval_cells(&obs.params[1], None, &axes, &sizes)?;
        let xs: Vec<f64> = data.observations[o]
            .broadcast_to(&axes, &sizes)
            .iter()
            .copied()
            .collect();
        for c in 0..base.len() {
            if !(vars[c].is_finite() && vars[c] > 0.0) {
                return Err(OracleError::Unsupported(format!(
                    "observation `{}` has non-positive variance",
                    obs.name
                )));
            }
            let u = DVector::from_vec(coeff[c].clone());
            add_factor(&u, base[c] - xs[c], vars[c]);
        }
    }

    let chol = nalgebra::Cholesky::new(lam)
        .ok_or_else(|| OracleError::Unsupported("precision matrix is not positive definite".into()))?;
    let mu = chol.solve(&h);
    let cov = chol.inverse();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_evidence =
        g + 0.5 * h.dot(&mu) + 0.5 * d_total as f64 * LN_2PI - 0.5 * log_det;

    let moments = ir
        .latents
        .iter()
        .enumerate()
        .map(|(i, decl)| {
            (0..ir.cell_count(&decl.plates))
                .map(|c| {
                    let d = offsets[i] + c;
                    MeanParams::new_unchecked(
                        Family::Gaussian,
                        vec![mu[d], mu[d] * mu[d] + cov[(d, d)]],
                    )
                    .expect("two Gaussian mean parameters")
                })
                .collect()
        })
        .collect();
    Ok(ExactPosterior { moments, log_evidence })
}

// ---------------------------------------------------------------------------
// Exact discrete (plus low-dimensional quadrature) posterior
// ---------------------------------------------------------------------------

fn latent_refs(e: &Expr) -> BTreeSet<usize> {
    let mut refs = BTreeSet::new();
    e.walk(&mut |sub| match sub {
        Expr::Latent(LatentId(i)) => {
            refs.insert(*i);
        }
        Expr::Gather { table: TableRef::Latent(LatentId(i)), .. } => {
            refs.insert(*i);
        }
        _ => {}
    });
    refs
}

/// Exact posterior for models whose latents are Bernoulli cells plus at most
/// two scalar Gaussians with constant priors. The Gaussians are integrated
/// on a fixed quadrature grid; given their values the Bernoulli cells
/// decouple, so each is summed out exactly. Observations may reference the
/// Gaussians freely and at most one Bernoulli latent, cellwise.
pub fn discrete_posterior(
    model: &CompiledModel,
    data: &DataSet,
    n_quad: usize,
) -> Result<ExactPosterior, OracleError> {
    let ir = &model.ir;
    let mut cont: Vec<usize> = Vec::new();
    let mut disc: Vec<usize> = Vec::new();
    for (i, decl) in ir.latents.iter().enumerate() {
        match decl.family {
            Family::Gaussian => {
                if !decl.plates.is_empty() {
                    return Err(OracleError::Unsupported(format!(
                        "Gaussian latent `{}` is plated; only scalars can be integrated",
                        decl.name
                    )));
                }
                if decl.prior_params.iter().any(expr_refs_latents) {
                    return Err(OracleError::Unsupported(format!(
                        "Gaussian latent `{}` has a latent-dependent prior",
                        decl.name
                    )));
                }
                cont.push(i);
            }
            Family::Bernoulli => disc.push(i),
            other => {
                return Err(OracleError::Unsupported(format!(
                    "latent `{}` has family {other}",
                    decl.name
                )))
            }
        }
    }
    if cont.len() > 2 {
        return Err(OracleError::Unsupported(format!(
            "{} Gaussian latents; quadrature handles at most 2",
            cont.len()
        )));
    }
    let cont_set: BTreeSet<usize> = cont.iter().copied().collect();
    for &i in &disc {
        let decl = &ir.latents[i];
        if !latent_refs(&decl.prior_params[0]).is_subset(&cont_set) {
            return Err(OracleError::Unsupported(format!(
                "Bernoulli latent `{}` depends on another Bernoulli latent",
                decl.name
            )));
        }
    }
    // Observations: any continuous references, at most one discrete, no
    // gathers of a discrete table (those would break cell alignment).
    let mut obs_disc: Vec<Option<usize>> = Vec::with_capacity(ir.observations.len());
    for obs in &ir.observations {
        let mut disc_refs = BTreeSet::new();
        for e in &obs.params {
            for r in latent_refs(e) {
                if !cont_set.contains(&r) {
                    disc_refs.insert(r);
                }
            }
            let mut gathered_disc = false;
            e.walk(&mut |sub| {
                if let Expr::Gather { table: TableRef::Latent(LatentId(i)), .. } = sub {
                    if !cont_set.contains(i) {
                        gathered_disc = true;
                    }
                }
            });
            if gathered_disc {
                return Err(OracleError::Unsupported(format!(
                    "observation `{}` gathers a Bernoulli latent",
                    obs.name
                )));
            }
        }
        if disc_refs.len() > 1 {
            return Err(OracleError::Unsupported(format!(
                "observation `{}` references {} Bernoulli latents",
                obs.name,
                disc_refs.len()
            )));
        }
        obs_disc.push(disc_refs.into_iter().next());
    }

    // Quadrature grid over the continuous latents, spanning +/- 9 prior
    // standard deviations.
    let covariates: Vec<Option<CovValue>> = data.covariates.iter().cloned().map(Some).collect();
    let empty: Vec<Option<Tensor>> = vec![None; ir.latents.len()];
    let base_ctx = EvalCtx { latents: &empty, covariates: &covariates };
    let mut grids: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = Vec::new(); // nodes, wts, mu0, v0
    for &i in &cont {
        let mu0 = *eval_expr(ir, &ir.latents[i].prior_params[0], &base_ctx)?
            .data()
            .iter()
            .next()
            .unwrap();
        let v0 = *eval_expr(ir, &ir.latents[i].prior_params[1], &base_ctx)?
            .data()
            .iter()
            .next()
            .unwrap();
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(OracleError::Unsupported(format!(
                "latent `{}` has non-positive prior variance",
                ir.latents[i].name
            )));
        }
        let (nodes, wts) = gauss_legendre(n_quad);
        let half = 9.0 * v0.sqrt();
        let scaled: Vec<f64> = nodes.iter().map(|&x| mu0 + half * x).collect();
        let ln_wts: Vec<f64> = wts.iter().map(|&w| (w * half).ln()).collect();
        grids.push((scaled, ln_wts, mu0, v0));
    }
    let n_points: usize = grids.iter().map(|g| g.0.len()).product::<usize>().max(1);

    struct PointRecord {
        log_term: f64,
        cont_vals: Vec<f64>,
        disc_p1: Vec<Vec<f64>>, // per discrete latent, per cell
    }
    let mut points: Vec<PointRecord> = Vec::with_capacity(n_points);

    let mut grid_idx = vec![0usize; grids.len()];
    loop {
        let cont_vals: Vec<f64> = grids
            .iter()
            .zip(&grid_idx)
            .map(|((nodes, _, _, _), &gi)| nodes[gi])
            .collect();
        let mut log_term: f64 = grids
            .iter()
            .zip(&grid_idx)
            .map(|((nodes, ln_wts, mu0, v0), &gi)| {
                ln_wts[gi] + dist::gaussian_ln_pdf(nodes[gi], *mu0, *v0)
            })
            .sum();

        let mut bindings: Vec<Option<Tensor>> = vec![None; ir.latents.len()];
        for (ci, &i) in cont.iter().enumerate() {
            bindings[i] = Some(Tensor::scalar(cont_vals[ci]));
        }

        // Cellwise log likelihood of every observation tied to discrete
        // latent `di`, under the all-zeros / all-ones binding.
        let obs_ll_given = |bindings: &Vec<Option<Tensor>>,
                            di: usize,
                            value: f64|
         -> Result<Vec<f64>, OracleError> {
            let mut b = bindings.clone();
            b[di] = Some(Tensor::scalar(value));
            let ctx = EvalCtx { latents: &b, covariates: &covariates };
            let (daxes, dsizes) = plate_layout(ir, &ir.latents[di].plates);
            let mut total = vec![0.0f64; ir.cell_count(&ir.latents[di].plates)];
            for (o, obs) in ir.observations.iter().enumerate() {
                if obs_disc[o] != Some(di) {
                    continue;
                }
                let (oaxes, osizes) = plate_layout(ir, &obs.plates);
                let ps: Vec<Vec<f64>> = obs
                    .params
                    .iter()
                    .map(|e| Ok(cells_on(&eval_expr(ir, e, &ctx)?, &oaxes, &osizes)))
                    .collect::<Result<_, OracleError>>()?;
                let xs: Vec<f64> = data.observations[o]
                    .broadcast_to(&oaxes, &osizes)
                    .iter()
                    .copied()
                    .collect();
                let mut lp = vec![0.0f64; xs.len()];
                for (c, &x) in xs.iter().enumerate() {
                    let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
                    lp[c] = ln_pdf_scalar(obs.family, x, &p);
                }
                // Reduce observation cells onto the latent's cell grid.
                let t = Tensor::from_data(
                    oaxes.clone(),
                    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&osizes), lp).unwrap(),
                );
                let mut red = t;
                for ax in red.axes().to_vec() {
                    if !daxes.contains(&ax) {
                        red = red.sum_over(ax);
                    }
                }
                for (c, v) in cells_on(&red, &daxes, &dsizes).iter().enumerate() {
                    total[c] += v;
                }
            }
            Ok(total)
        };

        let mut disc_p1: Vec<Vec<f64>> = Vec::with_capacity(disc.len());
        for &di in &disc {
            let decl = &ir.latents[di];
            let (daxes, dsizes) = plate_layout(ir, &decl.plates);
            let ctx = EvalCtx { latents: &bindings, covariates: &covariates };
            let p1 = cells_on(
                &eval_expr(ir, &decl.prior_params[0], &ctx)?,
                &daxes,
                &dsizes,
            );
            let ll0 = obs_ll_given(&bindings, di, 0.0)?;
            let ll1 = obs_ll_given(&bindings, di, 1.0)?;
            let mut post = Vec::with_capacity(p1.len());
            for c in 0..p1.len() {
                let l1 = p1[c].ln() + ll1[c];
                let l0 = (1.0 - p1[c]).ln() + ll0[c];
                let lm = logaddexp(l0, l1);
                log_term += lm;
                post.push(if lm == f64::NEG_INFINITY { 0.0 } else { (l1 - lm).exp() });
            }
            disc_p1.push(post);
        }

        // Observations free of discrete latents contribute directly.
        let ctx = EvalCtx { latents: &bindings, covariates: &covariates };
        for (o, obs) in ir.observations.iter().enumerate() {
            if obs_disc[o].is_some() {
                continue;
            }
            let (oaxes, osizes) = plate_layout(ir, &obs.plates);
            let ps: Vec<Vec<f64>> = obs
                .params
                .iter()
                .map(|e| Ok(cells_on(&eval_expr(ir, e, &ctx)?, &oaxes, &osizes)))
                .collect::<Result<_, OracleError>>()?;
            let xs: Vec<f64> = data.observations[o]
                .broadcast_to(&oaxes, &osizes)
                .iter()
                .copied()
                .collect();
            for (c, &x) in xs.iter().enumerate() {
                let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
                log_term += ln_pdf_scalar(obs.family, x, &p);
            }
        }

        points.push(PointRecord { log_term, cont_vals, disc_p1 });

        let mut pos = grids.len();
        loop {
            if pos == 0 {
                // Grid exhausted (or empty): finish.
                let log_evidence = logsumexp(
                    &points.iter().map(|p| p.log_term).collect::<Vec<f64>>(),
                );
                if log_evidence == f64::NEG_INFINITY || log_evidence.is_nan() {
                    return Err(OracleError::Unsupported(
                        "posterior mass vanished everywhere on the grid".into(),
                    ));
                }
                let mut moments: Vec<Vec<MeanParams>> = Vec::with_capacity(ir.latents.len());
                for decl in &ir.latents {
                    let cells = ir.cell_count(&decl.plates);
                    let dim = decl.proposal_family.stat_dim();
                    moments.push(vec![
                        MeanParams::new_unchecked(decl.proposal_family, vec![0.0; dim])
                            .expect("stat dims");
                        cells
                    ]);
                }
                for p in &points {
                    let w = (p.log_term - log_evidence).exp();
                    for (ci, &i) in cont.iter().enumerate() {
                        let th = p.cont_vals[ci];
                        moments[i][0].values[0] += w * th;
                        moments[i][0].values[1] += w * th * th;
                    }
                    for (dj, &i) in disc.iter().enumerate() {
                        for (c, &p1) in p.disc_p1[dj].iter().enumerate() {
                            moments[i][c].values[0] += w * p1;
                        }
                    }
                }
                return Ok(ExactPosterior { moments, log_evidence });
            }
            pos -= 1;
            grid_idx[pos] += 1;
            if grid_idx[pos] < grids[pos].0.len() {
                break;
            }
            grid_idx[pos] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// A dataset drawn from the model's own prior, with the latent draws kept
/// for moment-error evaluation.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub data: DataSet,
    pub latent_values: Vec<Tensor>,
}

/// Ancestral simulation: draw each latent from its prior in dependency
/// order (or pin it to an override), then each observation from its
/// likelihood. All randomness is keyed by (seed, draw purpose, node index).
pub fn synth_data(
    model: &CompiledModel,
    covariates: &[CovValue],
    seed: u64,
    overrides: &BTreeMap<String, f64>,
) -> Result<SynthData, OracleError> {
    let ir = &model.ir;
    for name in overrides.keys() {
        if ir.latent_id(name).is_none() {
            return Err(OracleError::Unsupported(format!(
                "override names unknown latent `{name}`"
            )));
        }
    }
    let cov_opts: Vec<Option<CovValue>> = covariates.iter().cloned().map(Some).collect();
    let mut latent_vals: Vec<Option<Tensor>> = vec![None; ir.latents.len()];
    for &LatentId(i) in &model.topo.order {
        let decl = &ir.latents[i];
        let (axes, sizes) = plate_layout(ir, &decl.plates);
        let cells = ir.cell_count(&decl.plates);
        let vals = if let Some(&v) = overrides.get(&decl.name) {
            vec![v; cells]
        } else {
            let ctx = EvalCtx { latents: &latent_vals, covariates: &cov_opts };
            let ps: Vec<Vec<f64>> = decl
                .prior_params
                .iter()
                .map(|e| Ok(cells_on(&eval_expr(ir, e, &ctx)?, &axes, &sizes)))
                .collect::<Result<_, OracleError>>()?;
            let mut stream = Stream::from_parts(&[seed, purpose::SYNTH, i as u64]);
            let mut vals = Vec::with_capacity(cells);
            for c in 0..cells {
                let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
                let params = ConventionalParams::new(decl.family, p)?;
                vals.push(dist::sample_it(&params, stream.next_open01())?);
            }
            vals
        };
        latent_vals[i] = Some(Tensor::from_data(
            axes,
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&sizes), vals).unwrap(),
        ));
    }
    let ctx = EvalCtx { latents: &latent_vals, covariates: &cov_opts };
    let mut observations = Vec::with_capacity(ir.observations.len());
    for (o, obs) in ir.observations.iter().enumerate() {
        let (axes, sizes) = plate_layout(ir, &obs.plates);
        let cells = ir.cell_count(&obs.plates);
        let ps: Vec<Vec<f64>> = obs
            .params
            .iter()
            .map(|e| Ok(cells_on(&eval_expr(ir, e, &ctx)?, &axes, &sizes)))
            .collect::<Result<_, OracleError>>()?;
        let mut stream =
            Stream::from_parts(&[seed, purpose::SYNTH, (ir.latents.len() + o) as u64]);
        let mut vals = Vec::with_capacity(cells);
        for c in 0..cells {
            let p: Vec<f64> = ps.iter().map(|col| col[c]).collect();
            let params = ConventionalParams::new(obs.family, p)?;
            vals.push(dist::sample_it(&params, stream.next_open01())?);
        }
        observations.push(Tensor::from_data(
            axes,
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&sizes), vals).unwrap(),
        ));
    }
    Ok(SynthData {
        data: DataSet { covariates: covariates.to_vec(), observations },
        latent_values: latent_vals.into_iter().map(Option::unwrap).collect(),
    })
}

/// Writes a dataset as CSV files, one per distinct plate signature, in the
/// same column layout `load_dataset` reads (row-major cells over sorted
/// plate axes). Returns the paths written.
pub fn write_dataset_files(
    ir: &ModelIR,
    data: &DataSet,
    dir: &Path,
) -> Result<Vec<PathBuf>, OracleError> {
    enum Col<'a> {
        Real(&'a str, Vec<f64>),
        Int(&'a str, Vec<i64>),
    }
    let mut groups: BTreeMap<Vec<PlateId>, Vec<Col>> = BTreeMap::new();
    let sorted = |plates: &[PlateId]| -> Vec<PlateId> {
        let mut p = plates.to_vec();
        p.sort_unstable();
        p
    };
    for (i, decl) in ir.covariates.iter().enumerate() {
        let col = match &data.covariates[i] {
            CovValue::Real(t) => Col::Real(&decl.name, t.iter().copied().collect()),
            CovValue::Int(t) => Col::Int(&decl.name, t.data().iter().copied().collect()),
        };
        groups.entry(sorted(&decl.plates)).or_default().push(col);
    }
    for (o, obs) in ir.observations.iter().enumerate() {
        groups
            .entry(sorted(&obs.plates))
            .or_default()
            .push(Col::Real(&obs.binding, data.observations[o].iter().copied().collect()));
    }

    let io_err = |path: &Path, e: &dyn std::fmt::Display| OracleError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let mut paths = Vec::new();
    for (plates, cols) in &groups {
        let stem = if plates.is_empty() {
            "cells_scalar".to_string()
        } else {
            let names: Vec<&str> =
                plates.iter().map(|&p| ir.plate(p).name.as_str()).collect();
            format!("cells_{}", names.join("_"))
        };
        let path = dir.join(format!("{stem}.csv"));
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| io_err(&path, &e))?;
        let headers: Vec<&str> = cols
            .iter()
            .map(|c| match c {
                Col::Real(n, _) => *n,
                Col::Int(n, _) => *n,
            })
            .collect();
        writer.write_record(&headers).map_err(|e| io_err(&path, &e))?;
        let rows = match cols.first() {
            Some(Col::Real(_, v)) => v.len(),
            Some(Col::Int(_, v)) => v.len(),
            None => 0,
        };
        for r in 0..rows {
            let row: Vec<String> = cols
                .iter()
                .map(|c| match c {
                    Col::Real(_, v) => v[r].to_string(),
                    Col::Int(_, v) => v[r].to_string(),
                })
                .collect();
            writer.write_record(&row).map_err(|e| io_err(&path, &e))?;
        }
        writer.flush().map_err(|e| io_err(&path, &e))?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Random small models
// ---------------------------------------------------------------------------

/// A random valid small model (at most 4 latents, small plates, mixed
/// families) with a dataset drawn from its own prior: fodder for
/// engine-vs-enumeration comparisons. Every choice is driven by `seed`.
pub fn random_model(seed: u64) -> Result<(CompiledModel, DataSet), OracleError> {
    let mut s = Stream::from_parts(&[seed, purpose::SYNTH, u64::MAX]);
    let n_plates = s.next_below(3);
    let plates: Vec<PlateDecl> = (0..n_plates)
        .map(|p| PlateDecl {
            name: format!("P{p}"),
            size: 1 + s.next_below(3),
        })
        .collect();
    let n_latents = 1 + s.next_below(4);

    let pick_plates = |s: &mut Stream| -> Vec<PlateId> {
        (0..n_plates)
            .filter(|_| s.next_below(3) == 0)
            .map(PlateId)
            .collect()
    };
    let uniform = |s: &mut Stream, lo: f64, hi: f64| lo + (hi - lo) * s.next_open01();

    let mut latents: Vec<LatentDecl> = Vec::with_capacity(n_latents);
    for i in 0..n_latents {
        // At most two parents keeps every factor under the engine's default
        // copy-rank cap.
        let mut parents: Vec<usize> = Vec::new();
        for j in 0..i {
            if parents.len() < 2 && s.next_below(5) < 2 {
                parents.push(j);
            }
        }
        let parent_term = |s: &mut Stream, parents: &[usize], scale: f64| -> Expr {
            let mut e = Expr::Const(uniform(s, -0.5, 0.5));
            for &j in parents {
                e = Expr::Add(
                    Box::new(e),
                    Box::new(Expr::Mul(
                        Box::new(Expr::Const(uniform(s, -scale, scale))),
                        Box::new(Expr::Latent(LatentId(j))),
                    )),
                );
            }
            e
        };
        let family = match s.next_below(5) {
            0 | 1 => Family::Gaussian,
            2 => Family::Beta,
            3 => Family::Gamma,
            _ => Family::Bernoulli,
        };
        let (prior_params, proposal_init) = match family {
            Family::Gaussian => {
                let mean = parent_term(&mut s, &parents, 1.0);
                let var = if !parents.is_empty() && s.next_below(2) == 0 {
                    Expr::Exp(Box::new(parent_term(&mut s, &parents[..1], 0.3)))
                } else {
                    Expr::Const(uniform(&mut s, 0.5, 2.0))
                };
                (
                    vec![mean, var],
                    MeanParams::new(Family::Gaussian, vec![0.0, 2.25]).unwrap(),
                )
            }
            Family::Beta => {
                let a = Expr::Exp(Box::new(parent_term(&mut s, &parents, 0.2)));
                let b = Expr::Exp(Box::new(parent_term(&mut s, &parents, 0.2)));
                (
                    vec![a, b],
                    // Uniform proposal on (0,1): E[ln x] = E[ln(1-x)] = -1.
                    MeanParams::new(Family::Beta, vec![-1.0, -1.0]).unwrap(),
                )
            }
            Family::Gamma => {
                let shape = Expr::Const(uniform(&mut s, 1.0, 3.0));
                let rate = Expr::Exp(Box::new(parent_term(&mut s, &parents, 0.3)));
                (
                    vec![shape, rate],
                    // Shape 1.5, rate 1: E[x] = 1.5, E[ln x] = digamma(1.5).
                    MeanParams::new(Family::Gamma, vec![1.5, 0.03648997397857652]).unwrap(),
                )
            }
            Family::Bernoulli => {
                let p = if parents.is_empty() {
                    Expr::Const(uniform(&mut s, 0.25, 0.75))
                } else {
                    Expr::Sigmoid(Box::new(parent_term(&mut s, &parents, 0.8)))
                };
                (
                    vec![p],
                    MeanParams::new(Family::Bernoulli, vec![0.5]).unwrap(),
                )
            }
            Family::NegativeBinomialLik => unreachable!("not drawn as a latent family"),
        };
        // A child must range over every plate its parents use.
        let mut plate_set: BTreeSet<PlateId> = pick_plates(&mut s).into_iter().collect();
        for &j in &parents {
            plate_set.extend(latents[j].plates.iter().copied());
        }
        latents.push(LatentDecl {
            name: format!("z{i}"),
            plates: plate_set.into_iter().collect(),
            family,
            prior_params,
            proposal_family: family,
            proposal_init,
        });
    }

    let n_obs = 1 + s.next_below(2);
    let mut observations = Vec::with_capacity(n_obs);
    for o in 0..n_obs {
        let n_refs = 1 + s.next_below(3.min(n_latents));
        let mut refs: Vec<usize> = Vec::new();
        while refs.len() < n_refs {
            let j = s.next_below(n_latents);
            if !refs.contains(&j) {
                refs.push(j);
            }
        }
        // The observation must range over every plate its references use.
        let mut oplates: BTreeSet<PlateId> = Vec::from_iter(pick_plates(&mut s)).into_iter().collect();
        for &j in &refs {
            oplates.extend(latents[j].plates.iter().copied());
        }
        let mut mean = Expr::Const(uniform(&mut s, -0.3, 0.3));
        for &j in &refs {
            mean = Expr::Add(
                Box::new(mean),
                Box::new(Expr::Mul(
                    Box::new(Expr::Const(uniform(&mut s, -1.0, 1.0))),
                    Box::new(Expr::Latent(LatentId(j))),
                )),
            );
        }
        let (family, params) = if s.next_below(2) == 0 {
            (
                Family::Gaussian,
                vec![mean, Expr::Const(uniform(&mut s, 0.5, 2.0))],
            )
        } else {
            (Family::Bernoulli, vec![Expr::Sigmoid(Box::new(mean))])
        };
        observations.push(ObservationDecl {
            name: format!("x{o}"),
            plates: oplates.into_iter().collect(),
            family,
            params,
            binding: format!("x{o}"),
        });
    }

    let ir = ModelIR { plates, covariates: vec![], latents, observations };
    let model = ir
        .compile()
        .map_err(|report| OracleError::Unsupported(format!("random model invalid: {report}")))?;
    let synth = synth_data(&model, &[], mix_key(&[seed, 1]), &BTreeMap::new())?;
    Ok((model, synth.data))
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

/// A built-in example model: compiled IR, fixed covariate values, and the
/// latent a rescaled variant divides by its scale factor.
#[derive(Clone, Debug)]
pub struct Builtin {
    pub name: String,
    pub model: CompiledModel,
    pub covariates: Vec<CovValue>,
    pub scaled_latent: Option<String>,
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}
fn lat(i: usize) -> Expr {
    Expr::Latent(LatentId(i))
}
fn cov(i: usize) -> Expr {
    Expr::Covariate(CovariateId(i))
}
fn add(a: Expr, b: Expr) -> Expr {
    Expr::Add(Box::new(a), Box::new(b))
}
fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Mul(Box::new(a), Box::new(b))
}
fn sub(a: Expr, b: Expr) -> Expr {
    Expr::Sub(Box::new(a), Box::new(b))
}
fn exp(a: Expr) -> Expr {
    Expr::Exp(Box::new(a))
}
fn sigmoid(a: Expr) -> Expr {
    Expr::Sigmoid(Box::new(a))
}

fn std_normal_latent(name: &str, plates: Vec<PlateId>) -> LatentDecl {
    gauss_latent(name, plates, c(0.0), c(1.0))
}

fn gauss_latent(name: &str, plates: Vec<PlateId>, mean: Expr, var: Expr) -> LatentDecl {
    LatentDecl {
        name: name.to_string(),
        plates,
        family: Family::Gaussian,
        prior_params: vec![mean, var],
        proposal_family: Family::Gaussian,
        proposal_init: MeanParams::new(Family::Gaussian, vec![0.0, 1.0]).unwrap(),
    }
}

fn real_cov(vals: Vec<f64>, axes: Vec<AxisId>, sizes: &[usize]) -> CovValue {
    CovValue::Real(Tensor::from_data(
        axes,
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(sizes), vals).unwrap(),
    ))
}

fn int_cov(vals: Vec<i64>, axes: Vec<AxisId>, sizes: &[usize]) -> CovValue {
    CovValue::Int(IntTensor::from_data(
        axes,
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(sizes), vals).unwrap(),
    ))
}

/// A depth-d Gaussian location chain: z1 ~ N(0,1), z_i ~ N(z_{i-1}, 1), and
/// `readings` observations x_r ~ N(z_d, 1).
pub fn conjugate_chain(depth: usize, readings: usize) -> Builtin {
    assert!(depth >= 1);
    let mut latents = vec![std_normal_latent("z1", vec![])];
    for i in 1..depth {
        latents.push(gauss_latent(&format!("z{}", i + 1), vec![], lat(i - 1), c(1.0)));
    }
    let ir = ModelIR {
        plates: vec![PlateDecl { name: "readings".into(), size: readings }],
        covariates: vec![],
        latents,
        observations: vec![ObservationDecl {
            name: "x".into(),
            plates: vec![PlateId(0)],
            family: Family::Gaussian,
            params: vec![lat(depth - 1), c(1.0)],
            binding: "x".into(),
        }],
    };
    Builtin {
        name: format!("conjugate_chain{depth}"),
        model: ir.compile().expect("chain model is valid"),
        covariates: vec![],
        scaled_latent: None,
    }
}

const RADON_S: usize = 4;
const RADON_R: usize = 20;

fn radon_covariates() -> (Vec<CovariateDecl>, Vec<CovValue>) {
    let s_axis = AxisId::Plate(PlateId(0));
    let r_axis = AxisId::Plate(PlateId(1));
    let uranium = vec![-0.6, 0.2, 0.9, -0.1];
    let basement: Vec<f64> = (0..RADON_S * RADON_R)
        .map(|idx| ((idx / RADON_R + idx % RADON_R) % 2) as f64)
        .collect();
    (
        vec![
            CovariateDecl {
                name: "uranium".into(),
                plates: vec![PlateId(0)],
                kind: CovKind::Real,
            },
            CovariateDecl {
                name: "basement".into(),
                plates: vec![PlateId(0), PlateId(1)],
                kind: CovKind::Real,
            },
        ],
        vec![
            real_cov(uranium, vec![s_axis], &[RADON_S]),
            real_cov(basement, vec![s_axis, r_axis], &[RADON_S, RADON_R]),
        ],
    )
}

/// Radon-style hierarchy: a global mean and log-variance over per-state
/// means, per-state log-variances, and per-state uranium/basement weights,
/// with Gaussian readings per (state, reading).
pub fn radon_full() -> Builtin {
    let s = PlateId(0);
    let (cov_decls, cov_vals) = radon_covariates();
    // Latent indices: 0 GlobalMean, 1 GlobalVariance, 2 StateMean,
    // 3 StateVariance, 4 UraniumWeight, 5 BasementWeight.
    let ir = ModelIR {
        plates: vec![
            PlateDecl { name: "states".into(), size: RADON_S },
            PlateDecl { name: "readings".into(), size: RADON_R },
        ],
        covariates: cov_decls,
        latents: vec![
            std_normal_latent("GlobalMean", vec![]),
            std_normal_latent("GlobalVariance", vec![]),
            gauss_latent("StateMean", vec![s], lat(0), exp(lat(1))),
            std_normal_latent("StateVariance", vec![s]),
            std_normal_latent("UraniumWeight", vec![s]),
            std_normal_latent("BasementWeight", vec![s]),
        ],
        observations: vec![ObservationDecl {
            name: "radon".into(),
            plates: vec![PlateId(0), PlateId(1)],
            family: Family::Gaussian,
            params: vec![
                add(add(lat(2), mul(lat(4), cov(0))), mul(lat(5), cov(1))),
                exp(lat(3)),
            ],
            binding: "radon".into(),
        }],
    };
    Builtin {
        name: "radon_full".into(),
        model: ir.compile().expect("radon model is valid"),
        covariates: cov_vals,
        scaled_latent: Some("StateMean".into()),
    }
}

/// The radon hierarchy with both log-variance latents replaced by fixed
/// unit variances, so the model is jointly Gaussian and admits the exact
/// linear-Gaussian posterior.
pub fn radon_linear() -> Builtin {
    let s = PlateId(0);
    let (cov_decls, cov_vals) = radon_covariates();
    // Latent indices: 0 GlobalMean, 1 StateMean, 2 UraniumWeight,
    // 3 BasementWeight.
    let ir = ModelIR {
        plates: vec![
            PlateDecl { name: "states".into(), size: RADON_S },
            PlateDecl { name: "readings".into(), size: RADON_R },
        ],
        covariates: cov_decls,
        latents: vec![
            std_normal_latent("GlobalMean", vec![]),
            gauss_latent("StateMean", vec![s], lat(0), c(1.0)),
            std_normal_latent("UraniumWeight", vec![s]),
            std_normal_latent("BasementWeight", vec![s]),
        ],
        observations: vec![ObservationDecl {
            name: "radon".into(),
            plates: vec![PlateId(0), PlateId(1)],
            family: Family::Gaussian,
            params: vec![
                add(add(lat(1), mul(lat(2), cov(0))), mul(lat(3), cov(1))),
                c(1.0),
            ],
            binding: "radon".into(),
        }],
    };
    Builtin {
        name: "radon_linear".into(),
        model: ir.compile().expect("radon_linear model is valid"),
        covariates: cov_vals,
        scaled_latent: Some("StateMean".into()),
    }
}

const BUS_Y: usize = 2;
const BUS_B: usize = 2;
const BUS_I: usize = 30;
const BUS_C: usize = 4;
const BUS_J: usize = 3;

/// Bus-delay hierarchy: per-year means under a global mean/log-variance,
/// per-borough log-variances, per-(year, borough) weights, plus company and
/// journey-type effect tables indexed per ride, with Bernoulli delays.
pub fn bus_mini() -> Builtin {
    let years = PlateId(0);
    let boroughs = PlateId(1);
    let rides = PlateId(2);
    let companies = PlateId(3);
    let journey_types = PlateId(4);
    let ride_axes = vec![
        AxisId::Plate(years),
        AxisId::Plate(boroughs),
        AxisId::Plate(rides),
    ];
    let ride_sizes = [BUS_Y, BUS_B, BUS_I];
    let n_rides = BUS_Y * BUS_B * BUS_I;
    let company_id: Vec<i64> = (0..n_rides).map(|t| ((t % BUS_I) + t / BUS_I) as i64 % BUS_C as i64).collect();
    let journey_id: Vec<i64> = (0..n_rides).map(|t| ((t % BUS_I) + 2 * (t / BUS_I)) as i64 % BUS_J as i64).collect();

    // Latent indices: 0 GlobalVariance, 1 GlobalMean, 2 YearMean,
    // 3 YearVariance, 4 YearBoroughWeight, 5 CompanyWeight,
    // 6 JourneyTypeWeight.
    let ir = ModelIR {
        plates: vec![
            PlateDecl { name: "years".into(), size: BUS_Y },
            PlateDecl { name: "boroughs".into(), size: BUS_B },
            PlateDecl { name: "rides".into(), size: BUS_I },
            PlateDecl { name: "companies".into(), size: BUS_C },
            PlateDecl { name: "journey_types".into(), size: BUS_J },
        ],
        covariates: vec![
            CovariateDecl {
                name: "company_id".into(),
                plates: vec![years, boroughs, rides],
                kind: CovKind::Int,
            },
            CovariateDecl {
                name: "journey_id".into(),
                plates: vec![years, boroughs, rides],
                kind: CovKind::Int,
            },
        ],
        latents: vec![
            std_normal_latent("GlobalVariance", vec![]),
            std_normal_latent("GlobalMean", vec![]),
            gauss_latent("YearMean", vec![years], lat(1), exp(lat(0))),
            std_normal_latent("YearVariance", vec![boroughs]),
            gauss_latent(
                "YearBoroughWeight",
                vec![years, boroughs],
                lat(2),
                exp(lat(3)),
            ),
            std_normal_latent("CompanyWeight", vec![companies]),
            std_normal_latent("JourneyTypeWeight", vec![journey_types]),
        ],
        observations: vec![ObservationDecl {
            name: "delay".into(),
            plates: vec![years, boroughs, rides],
            family: Family::Bernoulli,
            params: vec![sigmoid(add(
                add(
                    lat(4),
                    Expr::Gather {
                        table: TableRef::Latent(LatentId(5)),
                        index: CovariateId(0),
                    },
                ),
                Expr::Gather {
                    table: TableRef::Latent(LatentId(6)),
                    index: CovariateId(1),
                },
            ))],
            binding: "delay".into(),
        }],
    };
    Builtin {
        name: "bus_mini".into(),
        model: ir.compile().expect("bus model is valid"),
        covariates: vec![
            int_cov(company_id, ride_axes.clone(), &ride_sizes),
            int_cov(journey_id, ride_axes, &ride_sizes),
        ],
        scaled_latent: Some("YearBoroughWeight".into()),
    }
}

const OCC_J: usize = 2;
const OCC_M: usize = 1;
const OCC_I: usize = 3;
const OCC_R: usize = 2;

/// Occupancy-style detection model, reduced to two scalar weight latents so
/// the exact discrete oracle applies: a weather weight drives per-site
/// Bernoulli occupancy states, and detections mix a quality-weighted logit
/// (site occupied) with a large negative false-positive logit (site empty).
pub fn occupancy_mini() -> Builtin {
    let species = PlateId(0);
    let years = PlateId(1);
    let sites = PlateId(2);
    let repeats = PlateId(3);
    let z_plates = vec![species, years, sites];
    let y_plates = vec![species, years, sites, repeats];
    let z_axes: Vec<AxisId> = z_plates.iter().map(|&p| AxisId::Plate(p)).collect();
    let y_axes: Vec<AxisId> = y_plates.iter().map(|&p| AxisId::Plate(p)).collect();
    let weather = vec![0.8, -0.5, 1.2, -1.0, 0.4, 1.5];
    let quality = vec![1.2, 0.7, -0.3, 1.5, 0.9, 0.2, 1.1, -0.6, 0.8, 1.4, 0.1, 0.6];

    // Latent indices: 0 WeatherWeight, 1 QualityWeight, 2 z (occupancy).
    let ir = ModelIR {
        plates: vec![
            PlateDecl { name: "species".into(), size: OCC_J },
            PlateDecl { name: "years".into(), size: OCC_M },
            PlateDecl { name: "sites".into(), size: OCC_I },
            PlateDecl { name: "repeats".into(), size: OCC_R },
        ],
        covariates: vec![
            CovariateDecl { name: "weather".into(), plates: z_plates.clone(), kind: CovKind::Real },
            CovariateDecl { name: "quality".into(), plates: y_plates.clone(), kind: CovKind::Real },
        ],
        latents: vec![
            std_normal_latent("WeatherWeight", vec![]),
            std_normal_latent("QualityWeight", vec![]),
            LatentDecl {
                name: "z".into(),
                plates: z_plates,
                family: Family::Bernoulli,
                prior_params: vec![sigmoid(mul(lat(0), cov(0)))],
                proposal_family: Family::Bernoulli,
                proposal_init: MeanParams::new(Family::Bernoulli, vec![0.5]).unwrap(),
            },
        ],
        observations: vec![ObservationDecl {
            name: "detected".into(),
            plates: y_plates,
            family: Family::Bernoulli,
            params: vec![sigmoid(add(
                mul(mul(lat(2), lat(1)), cov(1)),
                mul(sub(c(1.0), lat(2)), c(-10.0)),
            ))],
            binding: "detected".into(),
        }],
    };
    Builtin {
        name: "occupancy_mini".into(),
        model: ir.compile().expect("occupancy model is valid"),
        covariates: vec![
            real_cov(weather, z_axes, &[OCC_J, OCC_M, OCC_I]),
            real_cov(quality, y_axes, &[OCC_J, OCC_M, OCC_I, OCC_R]),
        ],
        scaled_latent: Some("WeatherWeight".into()),
    }
}

pub fn builtin_by_name(name: &str) -> Option<Builtin> {
    // "conjugate_chain" and depth-suffixed forms like "conjugate_chain8".
    if let Some(rest) = name.strip_prefix("conjugate_chain") {
        let depth = if rest.is_empty() {
            4
        } else {
            rest.parse::<usize>().ok().filter(|d| (1..=16).contains(d))?
        };
        return Some(conjugate_chain(depth, 5));
    }
    match name {
        "radon_full" => Some(radon_full()),
        "radon_linear" => Some(radon_linear()),
        "bus_mini" => Some(bus_mini()),
        "occupancy_mini" => Some(occupancy_mini()),
        _ => None,
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &["conjugate_chain", "radon_full", "radon_linear", "bus_mini", "occupancy_mini"]
}

// ---------------------------------------------------------------------------
// Rescaled variants
// ---------------------------------------------------------------------------

fn rewrite_scaled_uses(e: &Expr, target: LatentId, alpha: f64) -> Expr {
    match e {
        Expr::Latent(id) if *id == target => {
            mul(c(alpha), Expr::Latent(*id))
        }
        Expr::Gather { table: TableRef::Latent(id), index } if *id == target => mul(
            c(alpha),
            Expr::Gather { table: TableRef::Latent(*id), index: *index },
        ),
        Expr::Const(_) | Expr::Covariate(_) | Expr::Latent(_) | Expr::Gather { .. } => e.clone(),
        Expr::Add(a, b) => add(
            rewrite_scaled_uses(a, target, alpha),
            rewrite_scaled_uses(b, target, alpha),
        ),
        Expr::Sub(a, b) => sub(
            rewrite_scaled_uses(a, target, alpha),
            rewrite_scaled_uses(b, target, alpha),
        ),
        Expr::Mul(a, b) => mul(
            rewrite_scaled_uses(a, target, alpha),
            rewrite_scaled_uses(b, target, alpha),
        ),
        Expr::Div(a, b) => Expr::Div(
            Box::new(rewrite_scaled_uses(a, target, alpha)),
            Box::new(rewrite_scaled_uses(b, target, alpha)),
        ),
        Expr::Neg(a) => Expr::Neg(Box::new(rewrite_scaled_uses(a, target, alpha))),
        Expr::Exp(a) => exp(rewrite_scaled_uses(a, target, alpha)),
        Expr::Sigmoid(a) => sigmoid(rewrite_scaled_uses(a, target, alpha)),
    }
}

/// The same posterior in different coordinates: the designated latent is
/// replaced by itself divided by `alpha`. Its prior parameters absorb the
/// substitution exactly (Gaussian mean and standard deviation shrink by
/// alpha; Gamma rate grows by alpha), every use site multiplies the latent
/// back by alpha, and the proposal initialization shrinks to match. With
/// shared draw seeds, a fit of the variant tracks a fit of the original
/// with every latent copy divided by alpha.
pub fn scaled_variant(builtin: &Builtin, alpha: f64) -> Result<Builtin, OracleError> {
    assert!(alpha.is_finite() && alpha > 0.0, "scale must be positive");
    let name = builtin.scaled_latent.clone().ok_or_else(|| {
        OracleError::Unsupported(format!("builtin `{}` has no rescalable latent", builtin.name))
    })?;
    let mut ir = builtin.model.ir.clone();
    let target = ir
        .latent_id(&name)
        .ok_or_else(|| OracleError::Unsupported(format!("no latent named `{name}`")))?;

    for (i, decl) in ir.latents.iter_mut().enumerate() {
        if LatentId(i) == target {
            match decl.family {
                Family::Gaussian => {
                    let mean = decl.prior_params[0].clone();
                    let var = decl.prior_params[1].clone();
                    decl.prior_params = vec![
                        Expr::Div(Box::new(mean), Box::new(c(alpha))),
                        Expr::Div(Box::new(var), Box::new(c(alpha * alpha))),
                    ];
                }
                Family::Gamma => {
                    let rate = decl.prior_params[1].clone();
                    decl.prior_params[1] = mul(rate, c(alpha));
                }
                other => {
                    return Err(OracleError::Unsupported(format!(
                        "family {other} is not closed under rescaling"
                    )))
                }
            }
            decl.proposal_init = dist::scale_mean_params(&decl.proposal_init, 1.0 / alpha)?;
        } else {
            for p in decl.prior_params.iter_mut() {
                *p = rewrite_scaled_uses(p, target, alpha);
            }
        }
    }
    for obs in ir.observations.iter_mut() {
        for p in obs.params.iter_mut() {
            *p = rewrite_scaled_uses(p, target, alpha);
        }
    }
    let model = ir
        .compile()
        .map_err(|report| OracleError::Unsupported(format!("rescaled model invalid: {report}")))?;
    Ok(Builtin {
        name: format!("{}_scaled", builtin.name),
        model,
        covariates: builtin.covariates.clone(),
        scaled_latent: Some(name),
    })
}
