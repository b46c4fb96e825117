//! Flat `key = value` configuration files.
//!
//! One binding per line; `#` starts a full-line comment; lists are
//! comma-separated. Seed lists additionally accept `a..b` half-open ranges.
//! `run` requires a single method/k/seed; `sweep` accepts lists for those
//! three keys and runs their cartesian product.

use std::collections::BTreeSet;
use std::path::PathBuf;

use qem::qem::{DenominatorMode, EmaConfig};

use crate::CliError;

/// Which estimator drives the E-step, and whether proposals adapt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Per-latent copy axes, proposals re-fit every iteration.
    Qem,
    /// One shared copy axis, proposals re-fit every iteration.
    GlobalIw,
    /// Per-latent copy axes, proposals frozen at their initialization.
    MpiwFixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Qem => "qem",
            Method::GlobalIw => "global_iw",
            Method::MpiwFixed => "mpiw_fixed",
        }
    }

    fn parse(s: &str) -> Result<Method, CliError> {
        match s {
            "qem" => Ok(Method::Qem),
            "global_iw" => Ok(Method::GlobalIw),
            "mpiw_fixed" => Ok(Method::MpiwFixed),
            other => Err(CliError::Config(format!(
                "unknown method `{other}` (expected qem, global_iw, or mpiw_fixed)"
            ))),
        }
    }
}

/// Which per-iteration metrics are reported and aggregated.
#[derive(Clone, Copy, Debug, Default)]
pub struct Metrics {
    pub elbo: bool,
    pub predictive_ll: bool,
    pub moment_mse: bool,
}

/// Settings shared by `run` and `sweep`.
#[derive(Clone, Debug)]
pub struct CommonSpec {
    /// Built-in model name or path to a model file.
    pub model: String,
    pub data: Vec<PathBuf>,
    pub test_data: Vec<PathBuf>,
    /// Seed for synthesizing data when a built-in runs without data files.
    pub synth_seed: u64,
    pub iterations: usize,
    pub ema: EmaConfig,
    pub denominator: DenominatorMode,
    pub variance_floor: f64,
    pub predictive_samples: usize,
    pub metrics: Metrics,
    /// Compute the exact posterior (when one exists) and report moment MSE.
    pub oracle: bool,
    pub out_dir: PathBuf,
    /// Fill the elapsed_ms trace column. Off by default so that repeated
    /// runs produce byte-identical traces.
    pub record_timing: bool,
    /// Quadrature size for the discrete-latent oracle.
    pub n_quad: usize,
    pub rank_cap: Option<usize>,
    pub chunk_entries: Option<usize>,
    /// Raw bindings in file order, echoed into summaries.
    pub echo: Vec<(String, String)>,
}

/// A single inference run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub common: CommonSpec,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
}

/// A grid of runs over methods × K × seeds.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub common: CommonSpec,
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

/// Splits config text into ordered key/value pairs, rejecting malformed
/// lines and duplicate keys.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if !seen.insert(key.clone()) {
            return Err(CliError::Config(format!(
                "line {}: key `{key}` is bound twice",
                lineno + 1
            )));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Pair store with used-key tracking so leftovers can be reported.
struct Kv {
    pairs: Vec<(String, String)>,
    used: BTreeSet<String>,
}

impl Kv {
    fn new(pairs: Vec<(String, String)>) -> Kv {
        Kv { pairs, used: BTreeSet::new() }
    }

    fn get(&mut self, key: &str) -> Option<&str> {
        let hit = self.pairs.iter().find(|(k, _)| k == key)?;
        self.used.insert(key.to_string());
        Some(hit.1.as_str())
    }

    fn require(&mut self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn finish(self) -> Result<Vec<(String, String)>, CliError> {
        let unknown: Vec<&str> = self
            .pairs
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(self.pairs)
        } else {
            Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("key `{key}`: bad value `{value}` (expected {expected})"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, CliError> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_paths(v: &str) -> Vec<PathBuf> {
    split_list(v).into_iter().map(PathBuf::from).collect()
}

/// Seed lists: comma-separated entries, each a number or an `a..b`
/// half-open range.
fn parse_seed_list(key: &str, v: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for item in split_list(v) {
        if let Some((a, b)) = item.split_once("..") {
            let a = parse_u64(key, a.trim())?;
            let b = parse_u64(key, b.trim())?;
            if b <= a {
                return Err(bad(key, item, "a range a..b with a < b"));
            }
            out.extend(a..b);
        } else {
            out.push(parse_u64(key, item)?);
        }
    }
    if out.is_empty() {
        return Err(bad(key, v, "at least one seed"));
    }
    Ok(out)
}

fn parse_metrics(v: &str) -> Result<Metrics, CliError> {
    let mut m = Metrics::default();
    for item in split_list(v) {
        match item {
            "elbo" => m.elbo = true,
            "predictive_ll" => m.predictive_ll = true,
            "moment_mse" => m.moment_mse = true,
            other => {
                return Err(bad(
                    "metrics",
                    other,
                    "a list drawn from elbo, predictive_ll, moment_mse",
                ))
            }
        }
    }
    Ok(m)
}

fn parse_ema(kv: &mut Kv) -> Result<EmaConfig, CliError> {
    let mode = kv.get("ema").unwrap_or("scheduled").to_string();
    match mode.as_str() {
        "scheduled" => {
            let p = match kv.get("ema_p") {
                Some(v) => parse_f64("ema_p", v)?,
                None => 0.5,
            };
            if !(p > 0.0 && p < 1.0) {
                return Err(CliError::Config(format!(
                    "key `ema_p`: {p} is outside (0, 1)"
                )));
            }
            Ok(EmaConfig::Scheduled { p })
        }
        "fixed" => {
            let w = parse_f64("ema_new_weight", kv.require("ema_new_weight")?)?;
            if !(w > 0.0 && w <= 1.0) {
                return Err(CliError::Config(format!(
                    "key `ema_new_weight`: {w} is outside (0, 1]"
                )));
            }
            Ok(EmaConfig::Fixed { new_weight: w })
        }
        other => Err(bad("ema", other, "scheduled or fixed")),
    }
}

fn parse_common(kv: &mut Kv) -> Result<CommonSpec, CliError> {
    let model = kv.require("model")?.to_string();
    if model.is_empty() {
        return Err(CliError::Config("key `model`: empty value".into()));
    }
    let data = kv.get("data").map(parse_paths).unwrap_or_default();
    let test_data = kv.get("test_data").map(parse_paths).unwrap_or_default();
    let synth_seed = match kv.get("synth_seed") {
        Some(v) => parse_u64("synth_seed", v)?,
        None => 0,
    };
    let iterations = match kv.get("iterations") {
        Some(v) => parse_usize("iterations", v)?,
        None => 100,
    };
    let ema = parse_ema(kv)?;
    let denominator = match kv.get("denominator").unwrap_or("self_normalized") {
        "self_normalized" => DenominatorMode::SelfNormalized,
        "fresh_sample" => DenominatorMode::FreshSample,
        other => return Err(bad("denominator", other, "self_normalized or fresh_sample")),
    };
    let variance_floor = match kv.get("variance_floor") {
        Some(v) => parse_f64("variance_floor", v)?,
        None => 1e-8,
    };
    let predictive_samples = match kv.get("predictive_samples") {
        Some(v) => parse_usize("predictive_samples", v)?,
        None => 0,
    };
    let metrics = match kv.get("metrics") {
        Some(v) => parse_metrics(v)?,
        None => Metrics { elbo: true, predictive_ll: false, moment_mse: false },
    };
    if metrics.predictive_ll && predictive_samples == 0 {
        return Err(CliError::Config(
            "metrics include predictive_ll but predictive_samples is 0".into(),
        ));
    }
    let oracle = match kv.get("oracle") {
        Some(v) => parse_bool("oracle", v)?,
        None => false,
    };
    let out_dir = PathBuf::from(kv.get("out_dir").unwrap_or("out"));
    let record_timing = match kv.get("record_timing") {
        Some(v) => parse_bool("record_timing", v)?,
        None => false,
    };
    let n_quad = match kv.get("n_quad") {
        Some(v) => parse_usize("n_quad", v)?,
        None => 80,
    };
    let rank_cap = match kv.get("rank_cap") {
        Some(v) => Some(parse_usize("rank_cap", v)?),
        None => None,
    };
    let chunk_entries = match kv.get("chunk_entries") {
        Some(v) => Some(parse_usize("chunk_entries", v)?),
        None => None,
    };
    Ok(CommonSpec {
        model,
        data,
        test_data,
        synth_seed,
        iterations,
        ema,
        denominator,
        variance_floor,
        predictive_samples,
        metrics,
        oracle,
        out_dir,
        record_timing,
        n_quad,
        rank_cap,
        chunk_entries,
        echo: Vec::new(),
    })
}

fn parse_methods(kv: &mut Kv) -> Result<Vec<Method>, CliError> {
    let raw = kv.get("method").unwrap_or("qem").to_string();
    let items = split_list(&raw);
    if items.is_empty() {
        return Err(bad("method", &raw, "at least one method"));
    }
    let mut out = Vec::new();
    for item in items {
        let m = Method::parse(item)?;
        if out.contains(&m) {
            return Err(CliError::Config(format!("key `method`: `{}` listed twice", m.name())));
        }
        out.push(m);
    }
    Ok(out)
}

fn parse_ks(kv: &mut Kv) -> Result<Vec<usize>, CliError> {
    let raw = kv.get("k").unwrap_or("30").to_string();
    let items = split_list(&raw);
    if items.is_empty() {
        return Err(bad("k", &raw, "at least one copy count"));
    }
    let mut out = Vec::new();
    for item in items {
        let k = parse_usize("k", item)?;
        if k == 0 {
            return Err(bad("k", item, "a positive copy count"));
        }
        out.push(k);
    }
    Ok(out)
}

fn parse_seeds(kv: &mut Kv) -> Result<Vec<u64>, CliError> {
    match kv.get("seed") {
        Some(v) => {
            let v = v.to_string();
            parse_seed_list("seed", &v)
        }
        None => Ok(vec![0]),
    }
}

/// Parses a `run` configuration: lists are rejected for method/k/seed.
pub fn run_spec(text: &str) -> Result<RunSpec, CliError> {
    let mut kv = Kv::new(parse_kv(text)?);
    let mut common = parse_common(&mut kv)?;
    let methods = parse_methods(&mut kv)?;
    let ks = parse_ks(&mut kv)?;
    let seeds = parse_seeds(&mut kv)?;
    let one = |what: &str, n: usize| {
        if n == 1 {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "run config expects a single {what}, got {n}; use `sweep` for lists"
            )))
        }
    };
    one("method", methods.len())?;
    one("k", ks.len())?;
    one("seed", seeds.len())?;
    common.echo = kv.finish()?;
    Ok(RunSpec { common, method: methods[0], k: ks[0], seed: seeds[0] })
}

/// Parses a `sweep` configuration: method/k/seed may be lists.
pub fn sweep_spec(text: &str) -> Result<SweepSpec, CliError> {
    let mut kv = Kv::new(parse_kv(text)?);
    let mut common = parse_common(&mut kv)?;
    let methods = parse_methods(&mut kv)?;
    let ks = parse_ks(&mut kv)?;
    let seeds = parse_seeds(&mut kv)?;
    let workers = match kv.get("workers") {
        Some(v) => {
            let w = parse_usize("workers", v)?;
            if w == 0 {
                return Err(bad("workers", v, "a positive worker count"));
            }
            w
        }
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::Config("key `seed`: duplicate seeds in sweep".into()));
        }
    }
    common.echo = kv.finish()?;
    Ok(SweepSpec { common, methods, ks, seeds, workers })
}
