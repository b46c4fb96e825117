//! Exponential-family distributions in three coordinate systems:
//! conventional parameters (the familiar ones), natural parameters, and mean
//! parameters (expected sufficient statistics). Moment-matching updates work
//! in mean coordinates, sampling and density evaluation in conventional
//! coordinates, so the conversions here are the load-bearing piece.
//!
//! Sampling is inverse-transform only: `sample_it(params, u)` maps a uniform
//! ξ through the quantile function. Keeping sampling a deterministic function
//! of ξ is what makes paired-run comparisons and the scaling contract
//! (`scale_mean_params`) exact rather than statistical.

use crate::special::{
    digamma, inv_digamma, invert_monotone_cdf, ln_beta, ln_gamma, reg_inc_beta, reg_inc_gamma,
    sigmoid, std_normal_quantile, trigamma, LN_2PI,
};
use thiserror::Error;

/// Distribution families available to models. `NegativeBinomialLik` is
/// likelihood-only: it can appear in observation declarations but has no
/// mean-parameter representation and cannot serve as a proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Family {
    Gaussian,
    Bernoulli,
    Beta,
    Gamma,
    NegativeBinomialLik,
}

impl Family {
    /// Number of conventional parameters.
    pub fn param_dim(self) -> usize {
        match self {
            Family::Bernoulli => 1,
            _ => 2,
        }
    }

    /// Dimension of the sufficient-statistic / mean-parameter vector.
    /// Errors for likelihood-only families are reported downstream.
    pub fn stat_dim(self) -> usize {
        match self {
            Family::Bernoulli => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "Gaussian",
            Family::Bernoulli => "Bernoulli",
            Family::Beta => "Beta",
            Family::Gamma => "Gamma",
            Family::NegativeBinomialLik => "NegativeBinomial",
        }
    }

    /// Families usable as adaptive proposals.
    pub fn supports_proposal(self) -> bool {
        !matches!(self, Family::NegativeBinomialLik)
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "Gaussian" => Some(Family::Gaussian),
            "Bernoulli" => Some(Family::Bernoulli),
            "Beta" => Some(Family::Beta),
            "Gamma" => Some(Family::Gamma),
            "NegativeBinomial" => Some(Family::NegativeBinomialLik),
            _ => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid {family} parameters: {detail}")]
    InvalidParams { family: Family, detail: String },
    #[error("value {value} is outside the {family} support")]
    OutOfSupport { family: Family, value: f64 },
    #[error("infeasible {family} mean parameters: {detail}")]
    InfeasibleMoments { family: Family, detail: String },
    #[error("{family} has no mean-parameter representation")]
    NoMeanParams { family: Family },
    #[error("{family} is not closed under scaling")]
    NotClosedUnderScaling { family: Family },
    #[error("moment inversion for {family} stalled: {detail}")]
    NoConvergence { family: Family, detail: String },
}

/// Conventional parameters: Gaussian (mean, variance), Bernoulli (p),
/// Beta (alpha, beta), Gamma (shape, rate), NegativeBinomialLik (count, p).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConventionalParams {
    pub family: Family,
    pub values: Vec<f64>,
}

/// Natural parameters of the same families.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParams {
    pub family: Family,
    pub values: Vec<f64>,
}

/// Mean parameters: expected sufficient statistics under the distribution.
/// Gaussian (E z, E z²), Bernoulli (E z), Beta (E ln z, E ln(1-z)),
/// Gamma (E z, E ln z).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanParams {
    pub family: Family,
    pub values: Vec<f64>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ConventionalParams {
    /// Validating constructor. Parameter constraints: Gaussian variance > 0,
    /// Bernoulli p in (0,1), Beta/Gamma parameters > 0, negative binomial
    /// count > 0 with p in (0,1).
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self, DistError> {
        let invalid = |detail: &str| DistError::InvalidParams {
            family,
            detail: detail.to_string(),
        };
        if values.len() != family.param_dim() {
            return Err(invalid(&format!(
                "expected {} values, got {}",
                family.param_dim(),
                values.len()
            )));
        }
        if !all_finite(&values) {
            return Err(invalid("parameters must be finite"));
        }
        match family {
            Family::Gaussian => {
                if values[1] <= 0.0 {
                    return Err(invalid("variance must be positive"));
                }
            }
            Family::Bernoulli => {
                if !(values[0] > 0.0 && values[0] < 1.0) {
                    return Err(invalid("p must lie in (0,1)"));
                }
            }
            Family::Beta | Family::Gamma => {
                if values[0] <= 0.0 || values[1] <= 0.0 {
                    return Err(invalid("both parameters must be positive"));
                }
            }
            Family::NegativeBinomialLik => {
                if values[0] <= 0.0 {
                    return Err(invalid("count must be positive"));
                }
                if !(values[1] > 0.0 && values[1] < 1.0) {
                    return Err(invalid("p must lie in (0,1)"));
                }
            }
        }
        Ok(ConventionalParams { family, values })
    }
}

impl MeanParams {
    /// Validating constructor; rejects vectors no member of the family can
    /// produce (e.g. Gaussian with E z² <= (E z)²).
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self, DistError> {
        let m = MeanParams::new_unchecked(family, values)?;
        m.check_feasible()?;
        Ok(m)
    }

    /// Shape-checked but not feasibility-checked: raw moment estimates may
    /// transiently be infeasible and are validated downstream at the moment
    /// they are converted back to conventional parameters.
    pub fn new_unchecked(family: Family, values: Vec<f64>) -> Result<Self, DistError> {
        if family == Family::NegativeBinomialLik {
            return Err(DistError::NoMeanParams { family });
        }
        if values.len() != family.stat_dim() {
            return Err(DistError::InvalidParams {
                family,
                detail: format!(
                    "expected {} mean parameters, got {}",
                    family.stat_dim(),
                    values.len()
                ),
            });
        }
        Ok(MeanParams { family, values })
    }

    pub fn check_feasible(&self) -> Result<(), DistError> {
        let infeasible = |detail: String| DistError::InfeasibleMoments {
            family: self.family,
            detail,
        };
        if !all_finite(&self.values) {
            return Err(infeasible("mean parameters must be finite".into()));
        }
        let v = &self.values;
        match self.family {
            Family::Gaussian => {
                if v[1] - v[0] * v[0] <= 0.0 {
                    return Err(infeasible(format!(
                        "implied variance {} is not positive",
                        v[1] - v[0] * v[0]
                    )));
                }
            }
            Family::Bernoulli => {
                if !(v[0] > 0.0 && v[0] < 1.0) {
                    return Err(infeasible(format!("mean {} outside (0,1)", v[0])));
                }
            }
            Family::Beta => {
                // E ln z and E ln(1-z) are both strictly negative.
                if !(v[0] < 0.0 && v[1] < 0.0) {
                    return Err(infeasible("both log-moments must be negative".into()));
                }
            }
            Family::Gamma => {
                // Jensen: E ln z < ln E z.
                if !(v[0] > 0.0) || !(v[0].ln() > v[1]) {
                    return Err(infeasible(format!(
                        "need E z > 0 and E ln z < ln E z, got ({}, {})",
                        v[0], v[1]
                    )));
                }
            }
            Family::NegativeBinomialLik => unreachable!(),
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw log densities. These assume in-range parameters (the tensorized factor
// builders validate once per table, not once per element) and return -inf
// only at zero-mass points of discrete families.
// ---------------------------------------------------------------------------

#[inline]
pub fn gaussian_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Bernoulli log mass. Tolerates the closed interval p in [0,1] because
/// saturated sigmoid expressions can reach the endpoints; the endpoint then
/// has one zero-mass atom, reported as -inf.
#[inline]
pub fn bernoulli_ln_pmf(x: f64, p: f64) -> f64 {
    if x == 1.0 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

#[inline]
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
}

#[inline]
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)
}

#[inline]
pub fn negative_binomial_ln_pmf(x: f64, count: f64, p: f64) -> f64 {
    ln_gamma(x + count) - ln_gamma(count) - ln_gamma(x + 1.0) + count * p.ln()
        + x * (1.0 - p).ln()
}

/// Whether `x` lies in the family's support (closed at Bernoulli atoms).
pub fn in_support(family: Family, x: f64) -> bool {
    match family {
        Family::Gaussian => x.is_finite(),
        Family::Bernoulli => x == 0.0 || x == 1.0,
        Family::Beta => x > 0.0 && x < 1.0,
        Family::Gamma => x > 0.0 && x.is_finite(),
        Family::NegativeBinomialLik => x >= 0.0 && x.is_finite() && x.fract() == 0.0,
    }
}

/// Log density (or mass) of `x` under the parameters. Arguments outside the
/// support are domain errors, not -inf.
pub fn log_prob(params: &ConventionalParams, x: f64) -> Result<f64, DistError> {
    if !in_support(params.family, x) {
        return Err(DistError::OutOfSupport {
            family: params.family,
            value: x,
        });
    }
    let v = &params.values;
    Ok(match params.family {
        Family::Gaussian => gaussian_ln_pdf(x, v[0], v[1]),
        Family::Bernoulli => bernoulli_ln_pmf(x, v[0]),
        Family::Beta => beta_ln_pdf(x, v[0], v[1]),
        Family::Gamma => gamma_ln_pdf(x, v[0], v[1]),
        Family::NegativeBinomialLik => negative_binomial_ln_pmf(x, v[0], v[1]),
    })
}

/// Inverse-transform sample: the u-quantile of the distribution. Monotone
/// nondecreasing in u; for Gaussian parameters equals mean + sd·Φ⁻¹(u).
pub fn sample_it(params: &ConventionalParams, u: f64) -> Result<f64, DistError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(DistError::InvalidParams {
            family: params.family,
            detail: format!("uniform input must lie in (0,1), got {u}"),
        });
    }
    let v = &params.values;
    Ok(match params.family {
        Family::Gaussian => v[0] + v[1].sqrt() * std_normal_quantile(u),
        Family::Bernoulli => {
            if u > 1.0 - v[0] {
                1.0
            } else {
                0.0
            }
        }
        Family::Beta => {
            let (a, b) = (v[0], v[1]);
            let guess = a / (a + b);
            invert_monotone_cdf(
                u,
                guess,
                0.0,
                1.0,
                |x| reg_inc_beta(a, b, x),
                |x| beta_ln_pdf(x, a, b).exp(),
            )
        }
        Family::Gamma => {
            // Invert on the rate-1 scale t = rate·x, then rescale.
            let shape = v[0];
            let mut hi = shape + 10.0 * shape.sqrt() + 10.0;
            while reg_inc_gamma(shape, hi) < u {
                hi *= 2.0;
            }
            let t = invert_monotone_cdf(
                u,
                shape.max(1e-2),
                0.0,
                hi,
                |x| reg_inc_gamma(shape, x),
                |x| gamma_ln_pdf(x, shape, 1.0).exp(),
            );
            t / v[1]
        }
        Family::NegativeBinomialLik => {
            let mut x = 0.0;
            let mut cum = 0.0;
            loop {
                cum += negative_binomial_ln_pmf(x, v[0], v[1]).exp();
                if cum >= u || x > 1e7 {
                    break x;
                }
                x += 1.0;
            }
        }
    })
}

/// Sufficient statistics T(x) of the four proposal families.
pub fn sufficient_stats(family: Family, x: f64) -> Result<Vec<f64>, DistError> {
    if !in_support(family, x) {
        return Err(DistError::OutOfSupport { family, value: x });
    }
    Ok(match family {
        Family::Gaussian => vec![x, x * x],
        Family::Bernoulli => vec![x],
        Family::Beta => vec![x.ln(), (1.0 - x).ln()],
        Family::Gamma => vec![x, x.ln()],
        Family::NegativeBinomialLik => {
            return Err(DistError::NoMeanParams { family });
        }
    })
}

/// Closed-form expected sufficient statistics.
pub fn conventional_to_mean(params: &ConventionalParams) -> Result<MeanParams, DistError> {
    let v = &params.values;
    let values = match params.family {
        Family::Gaussian => vec![v[0], v[0] * v[0] + v[1]],
        Family::Bernoulli => vec![v[0]],
        Family::Beta => {
            let psi_ab = digamma(v[0] + v[1]);
            vec![digamma(v[0]) - psi_ab, digamma(v[1]) - psi_ab]
        }
        Family::Gamma => vec![v[0] / v[1], digamma(v[0]) - v[1].ln()],
        Family::NegativeBinomialLik => {
            return Err(DistError::NoMeanParams {
                family: params.family,
            })
        }
    };
    MeanParams::new_unchecked(params.family, values)
}

/// Inverts `conventional_to_mean`: Gaussian and Bernoulli in closed form,
/// Beta and Gamma by damped Newton in log-parameter space.
pub fn mean_to_conventional(m: &MeanParams) -> Result<ConventionalParams, DistError> {
    m.check_feasible()?;
    let v = &m.values;
    match m.family {
        Family::Gaussian => {
            ConventionalParams::new(Family::Gaussian, vec![v[0], v[1] - v[0] * v[0]])
        }
        Family::Bernoulli => ConventionalParams::new(Family::Bernoulli, vec![v[0]]),
        Family::Beta => solve_beta(v[0], v[1]),
        Family::Gamma => solve_gamma(v[0], v[1]),
        Family::NegativeBinomialLik => unreachable!("rejected by check_feasible"),
    }
}

// Solve psi(a) - psi(a+b) = m1, psi(b) - psi(a+b) = m2. A few rounds of the
// inverse-digamma fixed point give a good basin, then Newton in (ln a, ln b)
// with step halving finishes to near machine precision.
fn solve_beta(m1: f64, m2: f64) -> Result<ConventionalParams, DistError> {
    let mut a: f64 = 1.0;
    let mut b: f64 = 1.0;
    for _ in 0..60 {
        let psi_ab = digamma(a + b);
        let na = inv_digamma(m1 + psi_ab);
        let nb = inv_digamma(m2 + psi_ab);
        let moved = (na - a).abs() / a.max(1.0) + (nb - b).abs() / b.max(1.0);
        a = na;
        b = nb;
        if moved < 1e-10 {
            break;
        }
    }
    let resid = |a: f64, b: f64| {
        let psi_ab = digamma(a + b);
        (digamma(a) - psi_ab - m1, digamma(b) - psi_ab - m2)
    };
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
    let mut r = resid(a, b);
    for _ in 0..100 {
        if norm(r) < 1e-13 {
            break;
        }
        let tab = trigamma(a + b);
        // Jacobian of the residual with respect to (ln a, ln b).
        let j11 = a * (trigamma(a) - tab);
        let j12 = -b * tab;
        let j21 = -a * tab;
        let j22 = b * (trigamma(b) - tab);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            return Err(DistError::NoConvergence {
                family: Family::Beta,
                detail: format!("singular Jacobian at a={a}, b={b}"),
            });
        }
        let mut da = -(j22 * r.0 - j12 * r.1) / det;
        let mut db = -(-j21 * r.0 + j11 * r.1) / det;
        // Step halving keeps the residual decreasing.
        let mut improved = false;
        for _ in 0..30 {
            let (ca, cb) = (a * da.exp(), b * db.exp());
            let cr = resid(ca, cb);
            if norm(cr) < norm(r) {
                a = ca;
                b = cb;
                r = cr;
                improved = true;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm(r) > 1e-9 {
        return Err(DistError::NoConvergence {
            family: Family::Beta,
            detail: format!("residual {} at a={a}, b={b} for moments ({m1}, {m2})", norm(r)),
        });
    }
    ConventionalParams::new(Family::Beta, vec![a, b])
}

// Solve psi(k) - ln k = m2 - ln m1 for the shape, then rate = k / m1.
fn solve_gamma(m1: f64, m2: f64) -> Result<ConventionalParams, DistError> {
    let c = m2 - m1.ln();
    debug_assert!(c < 0.0, "guarded by feasibility check");
    let s = -c;
    let mut k = (3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s);
    let mut ok = false;
    for _ in 0..200 {
        let g = digamma(k) - k.ln() - c;
        if g.abs() < 1e-13 {
            ok = true;
            break;
        }
        // Newton in ln k; the residual is increasing in k.
        let dg = k * trigamma(k) - 1.0;
        let step = (-g / dg).clamp(-20.0, 20.0);
        k *= step.exp();
        if !k.is_finite() || k <= 0.0 {
            return Err(DistError::NoConvergence {
                family: Family::Gamma,
                detail: format!("shape iteration left the domain for moments ({m1}, {m2})"),
            });
        }
    }
    if !ok && (digamma(k) - k.ln() - c).abs() > 1e-9 {
        return Err(DistError::NoConvergence {
            family: Family::Gamma,
            detail: format!("no convergence for moments ({m1}, {m2})"),
        });
    }
    ConventionalParams::new(Family::Gamma, vec![k, k / m1])
}

/// Conventional to natural parameters.
pub fn conventional_to_natural(params: &ConventionalParams) -> Result<NaturalParams, DistError> {
    let v = &params.values;
    let values = match params.family {
        Family::Gaussian => vec![v[0] / v[1], -0.5 / v[1]],
        Family::Bernoulli => vec![(v[0] / (1.0 - v[0])).ln()],
        Family::Beta => vec![v[0] - 1.0, v[1] - 1.0],
        Family::Gamma => vec![v[0] - 1.0, -v[1]],
        Family::NegativeBinomialLik => {
            return Err(DistError::NoMeanParams {
                family: params.family,
            })
        }
    };
    Ok(NaturalParams {
        family: params.family,
        values,
    })
}

/// Natural back to conventional, rejecting vectors outside the natural
/// domain (e.g. Gaussian second component must be negative).
pub fn natural_to_conventional(nat: &NaturalParams) -> Result<ConventionalParams, DistError> {
    let v = &nat.values;
    let invalid = |detail: &str| DistError::InvalidParams {
        family: nat.family,
        detail: detail.to_string(),
    };
    if v.len() != nat.family.param_dim() {
        return Err(invalid("wrong natural parameter count"));
    }
    match nat.family {
        Family::Gaussian => {
            if v[1] >= 0.0 {
                return Err(invalid("second natural parameter must be negative"));
            }
            let var = -0.5 / v[1];
            ConventionalParams::new(Family::Gaussian, vec![v[0] * var, var])
        }
        Family::Bernoulli => ConventionalParams::new(Family::Bernoulli, vec![sigmoid(v[0])]),
        Family::Beta => ConventionalParams::new(Family::Beta, vec![v[0] + 1.0, v[1] + 1.0]),
        Family::Gamma => ConventionalParams::new(Family::Gamma, vec![v[0] + 1.0, -v[1]]),
        Family::NegativeBinomialLik => Err(DistError::NoMeanParams { family: nat.family }),
    }
}

/// Mean parameters of the distribution of α·z when z has mean parameters
/// `m`. Defined for Gaussian (any α ≠ 0) and Gamma (α > 0, a pure rate
/// change); Bernoulli and Beta supports are not closed under scaling.
pub fn scale_mean_params(m: &MeanParams, alpha: f64) -> Result<MeanParams, DistError> {
    if !alpha.is_finite() || alpha == 0.0 {
        return Err(DistError::InvalidParams {
            family: m.family,
            detail: format!("scale factor must be finite and nonzero, got {alpha}"),
        });
    }
    match m.family {
        Family::Gaussian => MeanParams::new_unchecked(
            Family::Gaussian,
            vec![alpha * m.values[0], alpha * alpha * m.values[1]],
        ),
        Family::Gamma => {
            if alpha <= 0.0 {
                return Err(DistError::NotClosedUnderScaling { family: m.family });
            }
            MeanParams::new_unchecked(
                Family::Gamma,
                vec![alpha * m.values[0], m.values[1] + alpha.ln()],
            )
        }
        _ => Err(DistError::NotClosedUnderScaling { family: m.family }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use approx::assert_relative_eq;

    fn conv(family: Family, values: &[f64]) -> ConventionalParams {
        ConventionalParams::new(family, values.to_vec()).unwrap()
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(ConventionalParams::new(Family::Gaussian, vec![0.0, 0.0]).is_err());
        assert!(ConventionalParams::new(Family::Gaussian, vec![0.0, -1.0]).is_err());
        assert!(ConventionalParams::new(Family::Bernoulli, vec![1.0]).is_err());
        assert!(ConventionalParams::new(Family::Beta, vec![1.0, 0.0]).is_err());
        assert!(ConventionalParams::new(Family::Gamma, vec![-2.0, 1.0]).is_err());
        assert!(ConventionalParams::new(Family::Gaussian, vec![f64::NAN, 1.0]).is_err());
        assert!(ConventionalParams::new(Family::Gaussian, vec![1.0]).is_err());
    }

    #[test]
    fn standard_gaussian_log_density_at_zero() {
        let p = conv(Family::Gaussian, &[0.0, 1.0]);
        assert_relative_eq!(
            log_prob(&p, 0.0).unwrap(),
            -0.9189385332046727,
            max_relative = 1e-15
        );
    }

    #[test]
    fn out_of_support_is_an_error_not_neg_inf() {
        assert!(log_prob(&conv(Family::Gamma, &[2.0, 1.0]), -1.0).is_err());
        assert!(log_prob(&conv(Family::Gamma, &[2.0, 1.0]), 0.0).is_err());
        assert!(log_prob(&conv(Family::Beta, &[2.0, 2.0]), 1.0).is_err());
        assert!(log_prob(&conv(Family::Bernoulli, &[0.4]), 0.5).is_err());
        assert!(log_prob(&conv(Family::NegativeBinomialLik, &[3.0, 0.5]), 2.5).is_err());
    }

    // Independent check of each continuous density: the trapezoid integral
    // of exp(log_prob) over a transformed axis must be 1. Transforms keep the
    // integrand smooth even when the density diverges at a support endpoint.
    #[test]
    fn densities_integrate_to_one() {
        let mut s = Stream::from_parts(&[2024, 1]);
        for _ in 0..20 {
            // Gaussian on x = mu + sd * t over t in [-14, 14].
            let mu = 4.0 * (s.next_open01() - 0.5);
            let var = 0.05 + 3.0 * s.next_open01();
            let p = conv(Family::Gaussian, &[mu, var]);
            let n = 4001;
            let (lo, hi) = (-14.0, 14.0);
            let h = (hi - lo) / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let t: f64 = lo + h * i as f64;
                let x = mu + var.sqrt() * t;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                acc += w * log_prob(&p, x).unwrap().exp() * var.sqrt();
            }
            assert_relative_eq!(acc * h, 1.0, max_relative = 1e-8);

            // Beta via the logit substitution x = sigmoid(t), split at 1/2:
            // the upper half is the mirrored density at 1 - x, which keeps x
            // representable where sigmoid would saturate to exactly 1.
            let a = 0.3 + 4.0 * s.next_open01();
            let b = 0.3 + 4.0 * s.next_open01();
            let (lo, hi) = (-90.0, 0.0);
            let n = 9001;
            let h = (hi - lo) / (n - 1) as f64;
            let mut acc = 0.0;
            for (aa, bb) in [(a, b), (b, a)] {
                let p = conv(Family::Beta, &[aa, bb]);
                for i in 0..n {
                    let t = lo + h * i as f64;
                    let x = sigmoid(t);
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    acc += w * log_prob(&p, x).unwrap().exp() * x * (1.0 - x);
                }
            }
            assert_relative_eq!(acc * h, 1.0, max_relative = 1e-8);

            // Gamma via x = e^t.
            let k = 0.4 + 5.0 * s.next_open01();
            let rate = 0.2 + 3.0 * s.next_open01();
            let p = conv(Family::Gamma, &[k, rate]);
            let (lo, hi) = (-80.0f64, 12.0);
            let n = 12001;
            let h = (hi - lo) / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let t: f64 = lo + h * i as f64;
                let x = t.exp();
                if x <= 0.0 {
                    continue;
                }
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                acc += w * log_prob(&p, x).unwrap().exp() * x;
            }
            assert_relative_eq!(acc * h, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn negative_binomial_mass_sums_to_one() {
        let p = conv(Family::NegativeBinomialLik, &[3.5, 0.45]);
        let mut acc = 0.0;
        let mut mean = 0.0;
        for x in 0..400 {
            let m = log_prob(&p, x as f64).unwrap().exp();
            acc += m;
            mean += x as f64 * m;
        }
        assert_relative_eq!(acc, 1.0, max_relative = 1e-10);
        // E X = count (1-p) / p.
        assert_relative_eq!(mean, 3.5 * 0.55 / 0.45, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_median_sample_is_the_mean() {
        let p = conv(Family::Gaussian, &[0.0, 1.0]);
        assert_eq!(sample_it(&p, 0.5).unwrap(), 0.0);
        let p = conv(Family::Gaussian, &[2.5, 4.0]);
        assert_relative_eq!(sample_it(&p, 0.5).unwrap(), 2.5, max_relative = 1e-12);
    }

    // The spec example: the 0.75-quantile of Gamma(shape 2, rate 1), checked
    // against a plain bisection on the same CDF (independent inversion path)
    // and against the mpmath root 2.6926345288896958.
    #[test]
    fn gamma_quantile_matches_bisection_oracle() {
        let p = conv(Family::Gamma, &[2.0, 1.0]);
        let x = sample_it(&p, 0.75).unwrap();
        let (mut lo, mut hi) = (0.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if reg_inc_gamma(2.0, mid) < 0.75 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_relative_eq!(x, oracle, epsilon = 1e-9);
        assert_relative_eq!(x, 2.6926345288896958, max_relative = 1e-11);
    }

    #[test]
    fn beta_quantiles_match_references() {
        let p = conv(Family::Beta, &[2.0, 5.0]);
        assert_relative_eq!(
            sample_it(&p, 0.6).unwrap(),
            0.3094444275453144,
            max_relative = 1e-10
        );
        let p = conv(Family::Beta, &[0.4, 0.9]);
        assert_relative_eq!(
            sample_it(&p, 0.33).unwrap(),
            0.071395063881355246,
            max_relative = 1e-9
        );
        // Beta(1,1) is uniform: the quantile is the identity.
        let p = conv(Family::Beta, &[1.0, 1.0]);
        for &u in &[0.013, 0.42, 0.5, 0.871] {
            assert_relative_eq!(sample_it(&p, u).unwrap(), u, epsilon = 1e-11);
        }
    }

    #[test]
    fn quantiles_are_monotone_in_u() {
        let cases = [
            conv(Family::Gaussian, &[1.0, 2.0]),
            conv(Family::Beta, &[0.7, 2.3]),
            conv(Family::Gamma, &[1.7, 0.8]),
            conv(Family::Bernoulli, &[0.3]),
        ];
        for p in &cases {
            let mut last = f64::NEG_INFINITY;
            for i in 1..400 {
                let u = i as f64 / 400.0;
                let x = sample_it(p, u).unwrap();
                assert!(x >= last, "{}: quantile decreased at u={u}", p.family);
                last = x;
            }
        }
    }

    #[test]
    fn beta_mean_params_match_digamma_references() {
        let m = conventional_to_mean(&conv(Family::Beta, &[2.0, 5.0])).unwrap();
        assert_relative_eq!(m.values[0], -1.45, max_relative = 1e-12);
        assert_relative_eq!(m.values[1], -0.36666666666666667, max_relative = 1e-12);
    }

    #[test]
    fn gamma_mean_params_match_digamma_references() {
        let m = conventional_to_mean(&conv(Family::Gamma, &[3.0, 2.0])).unwrap();
        assert_relative_eq!(m.values[0], 1.5, max_relative = 1e-14);
        assert_relative_eq!(m.values[1], 0.22963715453852183, max_relative = 1e-12);
    }

    #[test]
    fn mean_conventional_round_trips() {
        let mut s = Stream::from_parts(&[77, 3]);
        for _ in 0..100 {
            let logu = |s: &mut Stream, lo: f64, hi: f64| {
                (lo.ln() + (hi.ln() - lo.ln()) * s.next_open01()).exp()
            };
            let cases = [
                conv(Family::Gaussian, &[6.0 * (s.next_open01() - 0.5), logu(&mut s, 0.01, 50.0)]),
                conv(Family::Bernoulli, &[0.001 + 0.998 * s.next_open01()]),
                conv(Family::Beta, &[logu(&mut s, 0.2, 25.0), logu(&mut s, 0.2, 25.0)]),
                conv(Family::Gamma, &[logu(&mut s, 0.2, 30.0), logu(&mut s, 0.05, 20.0)]),
            ];
            for p in &cases {
                let m = conventional_to_mean(p).unwrap();
                let back = mean_to_conventional(&m).unwrap();
                for (x, y) in p.values.iter().zip(&back.values) {
                    assert_relative_eq!(x, y, max_relative = 1e-8, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn natural_round_trips_and_bernoulli_logit() {
        let n = conventional_to_natural(&conv(Family::Bernoulli, &[0.75])).unwrap();
        assert_relative_eq!(n.values[0], 3.0f64.ln(), max_relative = 1e-13);
        let mut s = Stream::from_parts(&[78, 4]);
        for _ in 0..50 {
            let cases = [
                conv(Family::Gaussian, &[4.0 * (s.next_open01() - 0.5), 0.1 + s.next_open01()]),
                conv(Family::Bernoulli, &[0.01 + 0.98 * s.next_open01()]),
                conv(Family::Beta, &[0.3 + 3.0 * s.next_open01(), 0.3 + 3.0 * s.next_open01()]),
                conv(Family::Gamma, &[0.3 + 3.0 * s.next_open01(), 0.1 + 2.0 * s.next_open01()]),
            ];
            for p in &cases {
                let back = natural_to_conventional(&conventional_to_natural(p).unwrap()).unwrap();
                for (x, y) in p.values.iter().zip(&back.values) {
                    assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-13);
                }
            }
        }
        assert!(natural_to_conventional(&NaturalParams {
            family: Family::Gaussian,
            values: vec![0.0, 0.5],
        })
        .is_err());
    }

    // Monte Carlo check that inverse-transform sampling and the closed-form
    // mean parameters agree: the empirical mean of T(x) over one million
    // draws must fall within four standard errors, per family.
    #[test]
    fn sample_moments_match_mean_params() {
        let cases = [
            conv(Family::Gaussian, &[0.7, 1.3]),
            conv(Family::Bernoulli, &[0.27]),
            conv(Family::Beta, &[2.2, 0.9]),
            conv(Family::Gamma, &[1.6, 2.4]),
        ];
        let n = 1_000_000usize;
        for (ci, p) in cases.iter().enumerate() {
            let dim = p.family.stat_dim();
            let mut sum = vec![0.0; dim];
            let mut sumsq = vec![0.0; dim];
            let mut s = Stream::from_parts(&[99, ci as u64]);
            for _ in 0..n {
                let x = sample_it(p, s.next_open01()).unwrap();
                let t = sufficient_stats(p.family, x).unwrap();
                for d in 0..dim {
                    sum[d] += t[d];
                    sumsq[d] += t[d] * t[d];
                }
            }
            let expect = conventional_to_mean(p).unwrap();
            for d in 0..dim {
                let mean = sum[d] / n as f64;
                let var = (sumsq[d] / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt();
                assert!(
                    (mean - expect.values[d]).abs() <= 4.0 * se + 1e-12,
                    "{} stat {d}: mc {mean} vs exact {} (se {se})",
                    p.family,
                    expect.values[d]
                );
            }
        }
    }

    #[test]
    fn infeasible_moments_are_rejected() {
        assert!(MeanParams::new(Family::Gaussian, vec![2.0, 4.0]).is_err());
        assert!(MeanParams::new(Family::Bernoulli, vec![0.0]).is_err());
        assert!(MeanParams::new(Family::Beta, vec![-0.5, 0.1]).is_err());
        assert!(MeanParams::new(Family::Gamma, vec![1.0, 0.5]).is_err());
        let raw = MeanParams::new_unchecked(Family::Gaussian, vec![2.0, 4.0]).unwrap();
        assert!(mean_to_conventional(&raw).is_err());
    }

    #[test]
    fn gaussian_scaling_commutes_with_sampling() {
        let m = MeanParams::new(Family::Gaussian, vec![1.2, 1.2f64 * 1.2 + 0.49]).unwrap();
        for &alpha in &[1e-2, 1e-3, 37.0, -2.0] {
            let scaled = scale_mean_params(&m, alpha).unwrap();
            let p = mean_to_conventional(&m).unwrap();
            let ps = mean_to_conventional(&scaled).unwrap();
            for &u in &[0.02, 0.31, 0.5, 0.77, 0.99] {
                let direct = alpha * sample_it(&p, u).unwrap();
                let via = sample_it(&ps, u).unwrap();
                // For negative alpha the quantile reflects: compare laws via
                // the mirrored uniform.
                let via = if alpha < 0.0 {
                    sample_it(&ps, 1.0 - u).unwrap()
                } else {
                    via
                };
                assert_relative_eq!(direct, via, max_relative = 1e-11, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn gamma_scaling_is_a_rate_change() {
        let p = conv(Family::Gamma, &[2.5, 4.0]);
        let m = conventional_to_mean(&p).unwrap();
        let scaled = scale_mean_params(&m, 8.0).unwrap();
        let back = mean_to_conventional(&scaled).unwrap();
        assert_relative_eq!(back.values[0], 2.5, max_relative = 1e-9);
        assert_relative_eq!(back.values[1], 0.5, max_relative = 1e-9);
        assert!(scale_mean_params(&m, -1.0).is_err());
    }

    #[test]
    fn unscalable_families_error() {
        let m = conventional_to_mean(&conv(Family::Bernoulli, &[0.4])).unwrap();
        assert!(matches!(
            scale_mean_params(&m, 2.0),
            Err(DistError::NotClosedUnderScaling { .. })
        ));
        let m = conventional_to_mean(&conv(Family::Beta, &[2.0, 3.0])).unwrap();
        assert!(scale_mean_params(&m, 0.5).is_err());
    }
}
