//! Acceptance suite: one end-to-end check per shipped guarantee, executed
//! serially with pinned tolerances and a wall-clock budget per check. The
//! run prints one `[PASS]`/`[FAIL]` line per check and the test fails if
//! any check does.

use std::collections::BTreeMap;
use std::fs;
use std::panic::catch_unwind;
use std::time::{Duration, Instant};

use qem::dist::{
    conventional_to_mean, mean_to_conventional, scale_mean_params, ConventionalParams, Family,
    MeanParams,
};
use qem::engine::{
    build_log_factors, draw_sample_bank, posterior_moments, structural_peak_bound, Eliminator,
    EngineConfig, MomentNormalizer, Proposals,
};
use qem::graph::CompiledModel;
use qem::oracles::{
    builtin_by_name, bus_mini, conjugate_chain, discrete_posterior, enumerate_log_evidence,
    enumerate_moments, linear_gaussian_posterior, occupancy_mini, radon_full, radon_linear,
    random_model, scaled_variant, synth_data, Builtin,
};
use qem::qem::{ema_update, lambda_of, run_qem, EmaConfig, Estimator, QemConfig};
use qem::rng::Stream;
use qem_cli::config::{run_spec, sweep_spec};
use qem_cli::outputs::{first_moments, moment_mse, read_trace_csv};
use qem_cli::problem::resolve;
use qem_cli::runner::run_to_dir;
use qem_cli::sweep::execute_sweep;

/// Ok carries a one-line detail for the `[PASS]` report, Err the reason for
/// the `[FAIL]` one.
type CheckResult = Result<String, String>;

struct Check {
    name: &'static str,
    budget: Duration,
    run: fn() -> CheckResult,
}

fn builtin_data(b: &Builtin, synth_seed: u64) -> qem::dsl::DataSet {
    synth_data(&b.model, &b.covariates, synth_seed, &BTreeMap::new())
        .expect("synthesis succeeds")
        .data
}

/// |actual − expected| relative to max(|expected|, 1): the convention every
/// oracle comparison in this workspace uses for values that may sit near 0.
fn rel_gap(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1.0)
}

/// Mean squared gap between estimated and exact first moments over all
/// latent cells.
fn final_first_moment_mse(
    trace: &qem::qem::Trace,
    exact: &qem::oracles::ExactPosterior,
) -> f64 {
    moment_mse(trace.final_moments(), exact)
}

// ---------------------------------------------------------------------------
// 1. The fast engine reproduces exhaustive enumeration.
// ---------------------------------------------------------------------------

fn enumeration_equivalence() -> CheckResult {
    const MODELS: u64 = 50;
    const TOL: f64 = 1e-10;
    let ecfg = EngineConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..MODELS {
        let (model, data) = random_model(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let q = Proposals::from_init(&model).map_err(|e| format!("seed {seed}: {e}"))?;
        let k = 1 + (seed % 4) as usize;
        let bank = draw_sample_bank(&model, &q, seed ^ 0xACCE97, k)
            .map_err(|e| format!("seed {seed}: {e}"))?;

        let le = enumerate_log_evidence(&model, &data, &bank, &q)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let mom = enumerate_moments(&model, &data, &bank, &q)
            .map_err(|e| format!("seed {seed}: {e}"))?;

        let fs = build_log_factors(&model, &data, &bank, &q, &ecfg)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let mut elim = Eliminator::new(&fs, &ecfg);
        let engine = posterior_moments(&model, &bank, &mut elim, MomentNormalizer::SelfNormalized)
            .map_err(|e| format!("seed {seed}: {e}"))?;

        worst = worst.max(rel_gap(engine.log_evidence, le));
        for (i, lat) in engine.moments.iter().enumerate() {
            for (c, m) in lat.iter().enumerate() {
                for (d, &v) in m.values.iter().enumerate() {
                    worst = worst.max(rel_gap(v, mom.moments[i][c].values[d]));
                }
            }
        }
        if worst > TOL {
            return Err(format!(
                "seed {seed} (K={k}): engine strays {worst:.3e} from enumeration (tolerance {TOL:e})"
            ));
        }
    }
    Ok(format!("{MODELS} random models, K ∈ 1..=4, worst relative gap {worst:.2e} ≤ {TOL:e}"))
}

// ---------------------------------------------------------------------------
// 2. The evidence estimate is unbiased on the evidence scale.
// ---------------------------------------------------------------------------

fn evidence_unbiasedness() -> CheckResult {
    const REPLICAS: u64 = 10_000;
    const K: usize = 5;
    const SE_LIMIT: f64 = 4.0;
    let chain = conjugate_chain(2, 5);
    let data = builtin_data(&chain, 0);
    let exact = linear_gaussian_posterior(&chain.model, &data).map_err(|e| e.to_string())?;
    let q = Proposals::from_init(&chain.model).map_err(|e| e.to_string())?;
    let ecfg = EngineConfig::default();

    // Each replica's exp(log_evidence) is divided by the exact evidence, so
    // the target mean is 1 regardless of the dataset's scale.
    let mut ratios = Vec::with_capacity(REPLICAS as usize);
    for seed in 0..REPLICAS {
        let bank = draw_sample_bank(&chain.model, &q, seed, K).map_err(|e| e.to_string())?;
        let fs = build_log_factors(&chain.model, &data, &bank, &q, &ecfg)
            .map_err(|e| e.to_string())?;
        let mut elim = Eliminator::new(&fs, &ecfg);
        let le = elim.log_evidence().map_err(|e| e.to_string())?;
        ratios.push((le - exact.log_evidence).exp());
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let pull = (mean - 1.0).abs() / se;
    if pull > SE_LIMIT {
        return Err(format!(
            "mean evidence ratio {mean:.6} sits {pull:.2} standard errors from 1 (limit {SE_LIMIT})"
        ));
    }
    Ok(format!(
        "mean evidence ratio {mean:.4} over {REPLICAS} replicas, {pull:.2} standard errors from 1 (limit {SE_LIMIT})"
    ))
}

// ---------------------------------------------------------------------------
// 3. The moving average follows its closed form, and the schedule's growing
//    history weight contracts replica variance.
// ---------------------------------------------------------------------------

fn averaging_closed_form_and_variance_contraction() -> CheckResult {
    // (a) Constant history weight λ and a constant incoming estimate c from
    // a zero start give m_t = (1 − λ^t)·c exactly.
    const LAMBDA: f64 = 0.8;
    const CLOSED_FORM_TOL: f64 = 1e-12;
    let ema = EmaConfig::Fixed { new_weight: 1.0 - LAMBDA };
    let c = MeanParams::new_unchecked(Family::Gaussian, vec![0.7, 1.79]).unwrap();
    let mut m = MeanParams::new_unchecked(Family::Gaussian, vec![0.0, 0.0]).unwrap();
    let mut worst_a = 0.0f64;
    for t in 1..=20usize {
        m = ema_update(&m, &c, lambda_of(t, &ema)).map_err(|e| e.to_string())?;
        let shrink = 1.0 - LAMBDA.powi(t as i32);
        for (got, want) in m.values.iter().zip(c.values.iter().map(|v| shrink * v)) {
            let gap = (got - want).abs() / want.abs();
            worst_a = worst_a.max(gap);
            if gap > CLOSED_FORM_TOL {
                return Err(format!(
                    "closed form violated at t={t}: {got} vs {want} (gap {gap:.2e})"
                ));
            }
        }
    }

    // (b) Feeding i.i.d. noise through the λ(t) = 1 − t^(−1/2) schedule: the
    // spread of m_t across replicas must shrink as t grows.
    const REPLICAS: u64 = 1000;
    let checkpoints = [10usize, 100, 1000];
    let ema = EmaConfig::Scheduled { p: 0.5 };
    let mut at: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
    for rep in 0..REPLICAS {
        let mut s = Stream::from_parts(&[rep, 999]);
        let mut m = MeanParams::new_unchecked(Family::Gaussian, vec![0.0, 0.0]).unwrap();
        for t in 1..=*checkpoints.last().unwrap() {
            let x = s.next_std_normal();
            let noisy = MeanParams::new_unchecked(Family::Gaussian, vec![x, x * x]).unwrap();
            m = ema_update(&m, &noisy, lambda_of(t, &ema)).map_err(|e| e.to_string())?;
            if let Some(i) = checkpoints.iter().position(|&cp| cp == t) {
                at[i].push(m.values[0]);
            }
        }
    }
    let variance = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let vars: Vec<f64> = at.iter().map(|v| variance(v)).collect();
    if !(vars[0] > vars[1] && vars[1] > vars[2]) {
        return Err(format!(
            "replica variance fails to contract: {:.4} → {:.4} → {:.4} at t = 10, 100, 1000",
            vars[0], vars[1], vars[2]
        ));
    }
    Ok(format!(
        "closed-form gap {worst_a:.1e} ≤ {CLOSED_FORM_TOL:e}; replica variance {:.3} → {:.3} → {:.3} at t = 10, 100, 1000",
        vars[0], vars[1], vars[2]
    ))
}

// ---------------------------------------------------------------------------
// 4. With many copies, a single-latent conjugate posterior is recovered to a
//    few percent after one iteration and tightens with further averaging.
// ---------------------------------------------------------------------------

fn one_latent_recovery() -> CheckResult {
    const K: usize = 128;
    const AFTER_ONE: f64 = 0.05;
    const AFTER_TEN: f64 = 0.02;
    let chain = conjugate_chain(1, 5);
    // Synthesis seed 1 draws a dataset whose posterior mean is well away
    // from 0, so relative error is meaningful.
    let data = builtin_data(&chain, 1);
    let exact = linear_gaussian_posterior(&chain.model, &data).map_err(|e| e.to_string())?;
    let target = exact.moments[0][0].values[0];

    let cfg = QemConfig { k: K, iterations: 10, seed: 0, ..QemConfig::default() };
    let trace = run_qem(&chain.model, &data, None, &cfg).map_err(|e| e.to_string())?;
    let rel = |row: usize| {
        (trace.rows[row].moments[0][0].values[0] - target).abs() / target.abs()
    };
    let (e1, e10) = (rel(0), rel(9));
    if e1 > AFTER_ONE {
        return Err(format!(
            "after iteration 1 the mean is off by {e1:.4} relative (limit {AFTER_ONE})"
        ));
    }
    if e10 > AFTER_TEN {
        return Err(format!(
            "after iteration 10 the mean is off by {e10:.4} relative (limit {AFTER_TEN})"
        ));
    }
    Ok(format!(
        "posterior mean off by {e1:.4} after iteration 1 (limit {AFTER_ONE}) and {e10:.4} after 10 (limit {AFTER_TEN}), K={K}"
    ))
}

// ---------------------------------------------------------------------------
// 5. Rescaling a Gaussian latent by α leaves the whole trajectory invariant
//    once parameters are mapped back through the scale.
// ---------------------------------------------------------------------------

fn rescaling_invariance() -> CheckResult {
    const TOL: f64 = 1e-6;
    const ITERATIONS: usize = 50;
    let mut worst = 0.0f64;
    for b in [radon_linear(), bus_mini(), occupancy_mini()] {
        let data = builtin_data(&b, 5);
        // The floor is effectively disabled: clamping at different scales
        // would otherwise break the exact correspondence.
        let cfg = QemConfig {
            k: 8,
            iterations: ITERATIONS,
            seed: 17,
            variance_floor: 1e-300,
            ..QemConfig::default()
        };
        let plain = run_qem(&b.model, &data, None, &cfg).map_err(|e| e.to_string())?;
        let scaled_name = b.scaled_latent.as_deref().expect("builtin declares a scaled latent");
        let target = b.model.ir.latent_id(scaled_name).unwrap().0;
        for alpha in [1e-2, 1e-3, 1e-4] {
            let variant = scaled_variant(&b, alpha).map_err(|e| e.to_string())?;
            let scaled = run_qem(&variant.model, &data, None, &cfg).map_err(|e| e.to_string())?;
            for (rp, rs) in plain.rows.iter().zip(&scaled.rows) {
                for (i, (cells_p, cells_s)) in rp.moments.iter().zip(&rs.moments).enumerate() {
                    for (mp, ms) in cells_p.iter().zip(cells_s) {
                        let mapped = if i == target {
                            scale_mean_params(ms, alpha).map_err(|e| e.to_string())?
                        } else {
                            ms.clone()
                        };
                        for (a, v) in mp.values.iter().zip(&mapped.values) {
                            let dev = (a - v).abs() / a.abs().max(v.abs()).max(1e-12);
                            worst = worst.max(dev);
                            if dev > TOL {
                                return Err(format!(
                                    "{} at α={alpha:e}, iteration {}: {a} vs mapped {v} (gap {dev:.2e})",
                                    b.name, rp.iter
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "3 models × α ∈ {{1e-2, 1e-3, 1e-4}} × {ITERATIONS} iterations, worst mapped gap {worst:.2e} ≤ {TOL:e}"
    ))
}

// ---------------------------------------------------------------------------
// 6. On the hierarchical random-effects model the evidence climbs over the
//    run, and against the exact oracle of its linear variant the moment
//    error collapses.
// ---------------------------------------------------------------------------

fn hierarchical_convergence_trend() -> CheckResult {
    const K: usize = 30;
    const T: usize = 250;
    const MSE_DROP: f64 = 10.0;
    let cfg = QemConfig { k: K, iterations: T, ..QemConfig::default() };

    let rf = radon_full();
    let data = builtin_data(&rf, 0);
    let trace = run_qem(&rf.model, &data, None, &cfg).map_err(|e| e.to_string())?;
    let mean_le = |lo: usize, hi: usize| {
        trace.rows[lo..hi].iter().map(|r| r.log_evidence).sum::<f64>() / (hi - lo) as f64
    };
    let (first, last) = (mean_le(0, 10), mean_le(T - 10, T));
    if last <= first {
        return Err(format!(
            "mean log evidence failed to climb: first 10 iterations {first:.3}, last 10 {last:.3}"
        ));
    }

    let rl = radon_linear();
    let data = builtin_data(&rl, 0);
    let exact = linear_gaussian_posterior(&rl.model, &data).map_err(|e| e.to_string())?;
    let trace = run_qem(&rl.model, &data, None, &cfg).map_err(|e| e.to_string())?;
    let mse_at = |row: usize| moment_mse(&trace.rows[row].moments, &exact);
    let (mse1, mse_t) = (mse_at(0), mse_at(T - 1));
    if mse1 < MSE_DROP * mse_t {
        return Err(format!(
            "moment error only fell {:.1}× (from {mse1:.3e} to {mse_t:.3e}); needs ≥ {MSE_DROP}×",
            mse1 / mse_t
        ));
    }
    Ok(format!(
        "log evidence {first:.2} → {last:.2} (first vs last 10 of {T}); linear-variant moment error {mse1:.2e} → {mse_t:.2e} ({:.0}× ≥ {MSE_DROP}×)",
        mse1 / mse_t
    ))
}

// ---------------------------------------------------------------------------
// 7. Per-latent copy axes beat one shared copy axis on a deep chain, via the
//    sweep front end.
// ---------------------------------------------------------------------------

fn per_latent_copies_beat_shared_copies() -> CheckResult {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("sweep");
    let text = format!(
        "model = conjugate_chain8\n\
         synth_seed = 3\n\
         method = qem, global_iw\n\
         k = 8\n\
         seed = 0..20\n\
         iterations = 50\n\
         metrics = moment_mse\n\
         out_dir = {}\n",
        out.display()
    );
    let spec = sweep_spec(&text).map_err(|e| e.to_string())?;
    let artifacts = execute_sweep(&spec).map_err(|e| e.to_string())?;
    if !artifacts.failures.is_empty() {
        return Err(format!("{} sweep cell(s) failed", artifacts.failures.len()));
    }

    let aggregate = fs::read_to_string(artifacts.out_dir.join("aggregate.csv"))
        .map_err(|e| e.to_string())?;
    let mut means: BTreeMap<String, f64> = BTreeMap::new();
    for line in aggregate.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[3] == "moment_mse" && cols[2] == "50" {
            means.insert(cols[0].to_string(), cols[4].parse().map_err(|e| format!("{e}"))?);
        }
    }
    let per = *means.get("qem").ok_or("aggregate lacks a qem row")?;
    let shared = *means.get("global_iw").ok_or("aggregate lacks a global_iw row")?;
    if per >= shared {
        return Err(format!(
            "per-latent copies did not win: final moment error {per:.4} vs {shared:.4} shared"
        ));
    }
    Ok(format!(
        "mean final moment error over 20 seeds: {per:.4} per-latent < {shared:.4} shared copy axis ({:.1}× gap)",
        shared / per
    ))
}

// ---------------------------------------------------------------------------
// 8. Mean-parameter inversions round-trip, including the uniform Beta where
//    the digamma relation pins the answer analytically.
// ---------------------------------------------------------------------------

fn moment_inversion_round_trips() -> CheckResult {
    const DRAWS: usize = 100;
    const TOL: f64 = 1e-6;
    // E[ln z] = ψ(1) − ψ(2) = −1 on both components for the uniform Beta, so
    // feeding (−1, −1) must recover (1, 1); the solver's own termination
    // residual (1e−13) is the only slack granted.
    const IDENTITY_TOL: f64 = 1e-12;

    let mut s = Stream::from_parts(&[88, 1]);
    let mut logu =
        |s: &mut Stream, lo: f64, hi: f64| (lo.ln() + (hi.ln() - lo.ln()) * s.next_open01()).exp();
    let mut worst = 0.0f64;
    for _ in 0..DRAWS {
        let cases = [
            ConventionalParams::new(Family::Beta, vec![logu(&mut s, 0.2, 25.0), logu(&mut s, 0.2, 25.0)]),
            ConventionalParams::new(Family::Gamma, vec![logu(&mut s, 0.2, 30.0), logu(&mut s, 0.05, 20.0)]),
        ];
        for p in cases {
            let p = p.map_err(|e| e.to_string())?;
            let m = conventional_to_mean(&p).map_err(|e| e.to_string())?;
            let back = mean_to_conventional(&m).map_err(|e| e.to_string())?;
            for (x, y) in p.values.iter().zip(&back.values) {
                let dev = (x - y).abs() / x.abs();
                worst = worst.max(dev);
                if dev > TOL {
                    return Err(format!(
                        "{:?} {:?} round-trips to {:?} (gap {dev:.2e})",
                        p.family, p.values, back.values
                    ));
                }
            }
        }
    }

    let uniform = MeanParams::new(Family::Beta, vec![-1.0, -1.0]).map_err(|e| e.to_string())?;
    let back = mean_to_conventional(&uniform).map_err(|e| e.to_string())?;
    let identity_gap =
        (back.values[0] - 1.0).abs().max((back.values[1] - 1.0).abs());
    if identity_gap > IDENTITY_TOL {
        return Err(format!(
            "uniform Beta identity: (−1, −1) inverted to {:?}, off by {identity_gap:.2e}",
            back.values
        ));
    }
    Ok(format!(
        "{DRAWS} Beta + {DRAWS} Gamma draws, worst round-trip gap {worst:.2e} ≤ {TOL:e}; uniform-Beta identity gap {identity_gap:.1e} ≤ {IDENTITY_TOL:e}"
    ))
}

// ---------------------------------------------------------------------------
// 9. Discrete (Bernoulli) latent marginals are recovered against the exact
//    quadrature oracle.
// ---------------------------------------------------------------------------

fn discrete_marginal_recovery() -> CheckResult {
    const K: usize = 30;
    const T: usize = 100;
    const TOL: f64 = 0.02;
    let occ = occupancy_mini();
    let data = builtin_data(&occ, 1);
    let exact = discrete_posterior(&occ.model, &data, 80).map_err(|e| e.to_string())?;
    let zi = occ.model.ir.latent_id("z").unwrap().0;

    // A 1e-2 probability margin keeps the Bernoulli proposals away from the
    // absorbing endpoints: a proposal collapsed onto 0 or 1 draws no copies
    // of the other state and can never correct itself.
    let cfg = QemConfig {
        k: K,
        iterations: T,
        seed: 4,
        variance_floor: 1e-2,
        ..QemConfig::default()
    };
    let trace = run_qem(&occ.model, &data, None, &cfg).map_err(|e| e.to_string())?;
    let fitted = &trace.final_moments()[zi];
    let worst = fitted
        .iter()
        .zip(&exact.moments[zi])
        .map(|(m, e)| (m.values[0] - e.values[0]).abs())
        .fold(0.0f64, f64::max);
    if worst > TOL {
        return Err(format!(
            "worst occupancy-marginal gap {worst:.4} exceeds {TOL} after {T} iterations"
        ));
    }
    Ok(format!(
        "all {} occupancy marginals within {worst:.4} of the quadrature oracle (limit {TOL}) by T={T}, K={K}",
        fitted.len()
    ))
}

// ---------------------------------------------------------------------------
// 10. The instrumented peak factor rank never exceeds what the model's
//     structure implies, and on tree-shaped models it equals one plus the
//     widest parent set.
// ---------------------------------------------------------------------------

fn peak_factor_rank_matches_structure() -> CheckResult {
    let ecfg = EngineConfig::default();
    let observed_peak = |model: &CompiledModel, covs: &[qem::oracles::CovValue]| -> Result<usize, String> {
        let data = synth_data(model, covs, 0, &BTreeMap::new()).map_err(|e| e.to_string())?.data;
        let q = Proposals::from_init(model).map_err(|e| e.to_string())?;
        let bank = draw_sample_bank(model, &q, 7, 4).map_err(|e| e.to_string())?;
        let fs = build_log_factors(model, &data, &bank, &q, &ecfg).map_err(|e| e.to_string())?;
        let mut elim = Eliminator::new(&fs, &ecfg);
        posterior_moments(model, &bank, &mut elim, MomentNormalizer::SelfNormalized)
            .map_err(|e| e.to_string())?;
        Ok(elim.stats().peak_factor_rank)
    };

    let mut report = Vec::new();
    // Tree-shaped models: every observation touches at most as many latents
    // as the widest prior, so the peak is exactly 1 + max parents.
    for name in ["conjugate_chain2", "conjugate_chain4", "conjugate_chain8", "bus_mini", "occupancy_mini"] {
        let b = builtin_by_name(name).ok_or_else(|| format!("unknown builtin {name}"))?;
        let peak = observed_peak(&b.model, &b.covariates)?;
        let max_parents =
            b.model.topo.latent_parents.iter().map(|p| p.len()).max().unwrap_or(0);
        if peak != 1 + max_parents {
            return Err(format!(
                "{name}: observed peak rank {peak}, structure implies {}",
                1 + max_parents
            ));
        }
        if peak != structural_peak_bound(&b.model) {
            return Err(format!(
                "{name}: observed peak rank {peak} differs from the structural bound {}",
                structural_peak_bound(&b.model)
            ));
        }
        report.push(format!("{name}={peak}"));
    }
    // Models whose observations fuse several branches: the bound comes from
    // the widest observation instead.
    for b in [radon_full(), radon_linear()] {
        let peak = observed_peak(&b.model, &b.covariates)?;
        let bound = structural_peak_bound(&b.model);
        if peak != bound {
            return Err(format!(
                "{}: observed peak rank {peak} differs from the structural bound {bound}",
                b.name
            ));
        }
        report.push(format!("{}={peak}", b.name));
    }
    Ok(format!("observed peak factor ranks: {}", report.join(", ")))
}

// ---------------------------------------------------------------------------
// 11. Repeated runs are byte-identical and traces re-parse losslessly.
// ---------------------------------------------------------------------------

fn deterministic_runs_and_lossless_traces() -> CheckResult {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = format!(
        "model = conjugate_chain2\n\
         synth_seed = 0\n\
         k = 8\n\
         iterations = 5\n\
         out_dir = {}\n",
        tmp.path().join("unused").display()
    );
    let spec = run_spec(&text).map_err(|e| e.to_string())?;
    let problem = resolve(&spec.common).map_err(|e| e.to_string())?;
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    let mut outcomes = Vec::new();
    for dir in &dirs {
        outcomes.push(
            run_to_dir(&spec.common, spec.method, spec.k, spec.seed, &problem, dir)
                .map_err(|e| e.to_string())?,
        );
    }

    let read = |dir: &std::path::Path, file: &str| {
        fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))
    };
    if read(&dirs[0], "trace.csv")? != read(&dirs[1], "trace.csv")? {
        return Err("two identical runs wrote different trace.csv bytes".into());
    }
    let summary = |dir: &std::path::Path| -> Result<serde_json::Value, String> {
        let mut v: serde_json::Value =
            serde_json::from_slice(&read(dir, "summary.json")?).map_err(|e| e.to_string())?;
        // Wall-clock total is the one field allowed to differ.
        v.as_object_mut().unwrap().remove("total_time_ms");
        Ok(v)
    };
    if summary(&dirs[0])? != summary(&dirs[1])? {
        return Err("two identical runs disagree in summary.json beyond wall-clock".into());
    }

    let parsed = read_trace_csv(&dirs[0].join("trace.csv")).map_err(|e| e.to_string())?;
    let trace = &outcomes[0].trace;
    if parsed.rows.len() != trace.rows.len() {
        return Err("re-parsed trace has a different row count".into());
    }
    for (csv_row, row) in parsed.rows.iter().zip(&trace.rows) {
        let expected = first_moments(&row.moments);
        let exact_bits = csv_row.iter == row.iter
            && csv_row.lambda.to_bits() == row.lambda.to_bits()
            && csv_row.log_evidence.to_bits() == row.log_evidence.to_bits()
            && csv_row.clamp_count == row.clamp_count
            && csv_row.predictive_ll.is_none()
            && csv_row.elapsed_ms.is_none()
            && csv_row.first_moments.len() == expected.len()
            && csv_row
                .first_moments
                .iter()
                .zip(&expected)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !exact_bits {
            return Err(format!("iteration {} re-parses to different bits", row.iter));
        }
    }
    Ok(format!(
        "byte-identical repeat run; {} trace rows re-parse to the exact bits",
        parsed.rows.len()
    ))
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

#[test]
fn acceptance() {
    let checks = [
        Check {
            name: "engine matches exhaustive enumeration",
            budget: Duration::from_secs(60),
            run: enumeration_equivalence,
        },
        Check {
            name: "evidence estimate is unbiased",
            budget: Duration::from_secs(120),
            run: evidence_unbiasedness,
        },
        Check {
            name: "averaging follows its closed form and contracts variance",
            budget: Duration::from_secs(60),
            run: averaging_closed_form_and_variance_contraction,
        },
        Check {
            name: "one-latent posterior recovered in one step, tightened by ten",
            budget: Duration::from_secs(10),
            run: one_latent_recovery,
        },
        Check {
            name: "trajectories commute with latent rescaling",
            budget: Duration::from_secs(120),
            run: rescaling_invariance,
        },
        Check {
            name: "evidence climbs and oracle error collapses on the hierarchical model",
            budget: Duration::from_secs(120),
            run: hierarchical_convergence_trend,
        },
        Check {
            name: "per-latent copies beat a shared copy axis on a deep chain",
            budget: Duration::from_secs(180),
            run: per_latent_copies_beat_shared_copies,
        },
        Check {
            name: "mean-parameter inversions round-trip",
            budget: Duration::from_secs(5),
            run: moment_inversion_round_trips,
        },
        Check {
            name: "discrete marginals match the quadrature oracle",
            budget: Duration::from_secs(60),
            run: discrete_marginal_recovery,
        },
        Check {
            name: "peak factor rank stays at the structural bound",
            budget: Duration::from_secs(5),
            run: peak_factor_rank_matches_structure,
        },
        Check {
            name: "runs are byte-identical and traces re-parse losslessly",
            budget: Duration::from_secs(10),
            run: deterministic_runs_and_lossless_traces,
        },
    ];

    let mut failures = Vec::new();
    for (i, check) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(check.run);
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(Ok(detail)) if elapsed <= check.budget => Ok(detail),
            Ok(Ok(detail)) => Err(format!(
                "{detail}; but exceeded the {:?} budget",
                check.budget
            )),
            Ok(Err(reason)) => Err(reason),
            Err(payload) => Err(panic_text(payload)),
        };
        match verdict {
            Ok(detail) => println!(
                "[PASS] {:>2}. {} — {} ({:.2?} of {:?})",
                i + 1,
                check.name,
                detail,
                elapsed,
                check.budget
            ),
            Err(reason) => {
                println!(
                    "[FAIL] {:>2}. {} — {} ({:.2?} of {:?})",
                    i + 1,
                    check.name,
                    reason,
                    elapsed,
                    check.budget
                );
                failures.push(check.name);
            }
        }
    }
    assert!(
        failures.is_empty(),
        "{} acceptance check(s) failed: {}",
        failures.len(),
        failures.join("; ")
    );
}
