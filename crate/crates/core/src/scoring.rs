//! Interval score and CPO/LPML.
//!
//! CPO is the harmonic mean of per-draw densities, computed in log space:
//! `log CPO = −(logsumexp(−ℓₖ) − log K)`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::mcmc::{PosteriorChain, Theta};
use crate::model::LikelihoodContext;
use crate::prediction::PredictiveSummary;

/// `(u − l) + (2/α)(l − x)·1[x < l] + (2/α)(x − u)·1[x > u]`.
pub fn interval_score(l: f64, u: f64, x: f64, alpha: f64) -> Result<f64> {
    if !(l <= u) {
        return Err(Error::InvalidInput(format!(
            "interval bounds are reversed: l={l} > u={u}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut s = u - l;
    if x < l {
        s += 2.0 / alpha * (l - x);
    }
    if x > u {
        s += 2.0 / alpha * (x - u);
    }
    Ok(s)
}

/// Log-space harmonic-mean CPO of one observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpoEstimate {
    pub log_cpo: f64,
    /// Set when some per-draw density was zero or non-finite.
    pub unstable: bool,
}

/// Harmonic-mean CPO from per-draw log densities. Non-finite entries are
/// dropped and flag the estimate as unstable; a density of exactly zero
/// (`−∞`) drives the CPO to zero.
pub fn log_cpo_harmonic(log_densities: &[f64]) -> Result<CpoEstimate> {
    if log_densities.is_empty() {
        return Err(Error::InvalidInput("CPO needs at least one draw".into()));
    }
    let mut unstable = false;
    let neg: Vec<f64> = log_densities
        .iter()
        .filter_map(|&l| {
            if l == f64::NEG_INFINITY {
                unstable = true;
                Some(f64::INFINITY)
            } else if l.is_finite() {
                Some(-l)
            } else {
                unstable = true;
                None
            }
        })
        .collect();
    if neg.is_empty() {
        return Err(Error::Numerical("every per-draw density is non-finite".into()));
    }
    let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return Ok(CpoEstimate {
            log_cpo: f64::NEG_INFINITY,
            unstable: true,
        });
    }
    let lse = max + neg.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(CpoEstimate {
        log_cpo: -(lse - (neg.len() as f64).ln()),
        unstable,
    })
}

/// `(K⁻¹ Σₖ 1/pₖ)⁻¹` for positive per-draw densities, via the log-space
/// estimator.
pub fn cpo_harmonic(densities: &[f64]) -> Result<CpoEstimate> {
    let logs: Vec<f64> = densities
        .iter()
        .map(|&d| {
            if d > 0.0 {
                d.ln()
            } else if d == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            }
        })
        .collect();
    log_cpo_harmonic(&logs)
}

/// `Σᵢ log CPOᵢ`.
pub fn lpml(cpo: &[f64]) -> Result<f64> {
    if let Some(bad) = cpo.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "CPO values must be positive and finite, got {bad}"
        )));
    }
    Ok(cpo.iter().map(|c| c.ln()).sum())
}

/// `Σᵢ log CPOᵢ` from log-CPO values.
pub fn lpml_from_log(log_cpo: &[f64]) -> f64 {
    log_cpo.iter().sum()
}

/// Per-observation density used inside the CPO harmonic mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpoDensity {
    /// `p(yᵢ | y₋ᵢ, θ)` within the same replicate.
    #[default]
    LeaveOneOut,
    /// `p(yᵢ | θ)`, the marginal Gaussian.
    Marginal,
    /// One observation per replicate: the joint density `p(yₜ | θ)`.
    Replicate,
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// Per-observation log densities under one parameter draw. Observations
/// are ordered replicate-major, then by flat index `i * n + k`
/// (for [`CpoDensity::Replicate`], one entry per replicate).
///
/// With `Q = Σ⁻¹` and `g = Q (y − μ)`, the leave-one-out conditional of
/// entry `i` has mean `yᵢ − gᵢ/Qᵢᵢ` and variance `1/Qᵢᵢ`.
pub fn observation_log_densities(ctx: &LikelihoodContext, theta: &Theta, kind: CpoDensity) -> Result<Vec<f64>> {
    let sigma = theta.covariance(&ctx.geometry)?.values;
    let mu = ctx.mean(theta.beta())?;
    let factor = Factor::new(&sigma)?;
    let dim = ctx.dim();
    let mut out = Vec::with_capacity(dim * ctx.t());
    match kind {
        CpoDensity::LeaveOneOut => {
            let q = factor.inverse();
            for y in &ctx.responses {
                let r: DVector<f64> = y - &mu;
                let g = &q * &r;
                for f in 0..dim {
                    let qff = q[(f, f)];
                    out.push(ln_normal(y[f], y[f] - g[f] / qff, 1.0 / qff));
                }
            }
        }
        CpoDensity::Marginal => {
            for y in &ctx.responses {
                for f in 0..dim {
                    out.push(ln_normal(y[f], mu[f], sigma[(f, f)]));
                }
            }
        }
        CpoDensity::Replicate => {
            let c = -0.5 * (dim as f64 * (2.0 * PI).ln() + factor.log_det());
            for y in &ctx.responses {
                out.push(c - 0.5 * factor.quad_form(&(y - &mu)));
            }
        }
    }
    Ok(out)
}

/// Log-CPO of every observation from a chain. Draws whose covariance is
/// invalid on `ctx` are skipped and counted.
pub fn chain_log_cpo(
    ctx: &LikelihoodContext,
    chain: &PosteriorChain,
    kind: CpoDensity,
) -> Result<(Vec<CpoEstimate>, usize)> {
    let per_draw: Vec<Option<Vec<f64>>> = chain
        .draws
        .par_iter()
        .map(|d| observation_log_densities(ctx, &d.theta, kind).ok())
        .collect();
    let valid: Vec<&Vec<f64>> = per_draw.iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::InvalidParameter(
            "no posterior draw gave a valid covariance".into(),
        ));
    }
    let m = valid[0].len();
    let cpo = (0..m)
        .map(|i| {
            let col: Vec<f64> = valid.iter().map(|v| v[i]).collect();
            log_cpo_harmonic(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cpo, chain.len() - valid.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: String,
    pub alpha: f64,
    /// Number of scored scalars (targets × replicates).
    pub n_scored: usize,
    pub average_is: f64,
    pub per_target_is: Vec<f64>,
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    pub cpo_density: CpoDensity,
    pub unstable_cpo: usize,
    pub skipped_draws: usize,
    pub p_tilde: Option<f64>,
}

/// Interval scores of the held-out targets in `summary` (which must carry
/// truth) plus LPML of the training data in `ctx`.
pub fn score_model(
    label: &str,
    chain: &PosteriorChain,
    ctx: &LikelihoodContext,
    summary: &PredictiveSummary,
    kind: CpoDensity,
) -> Result<ScoreReport> {
    let alpha = summary.config.alpha;
    let per_target_is = summary
        .targets
        .iter()
        .map(|t| {
            let x = t
                .truth
                .ok_or_else(|| Error::Data(format!("target {} has no true value", t.target_id)))?;
            interval_score(t.lower, t.upper, x, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    let (cpo, skipped) = chain_log_cpo(ctx, chain, kind)?;
    let log_cpo: Vec<f64> = cpo.iter().map(|c| c.log_cpo).collect();
    Ok(ScoreReport {
        model: label.to_string(),
        alpha,
        n_scored: per_target_is.len(),
        average_is: per_target_is.iter().sum::<f64>() / per_target_is.len().max(1) as f64,
        per_target_is,
        lpml: lpml_from_log(&log_cpo),
        log_cpo,
        cpo_density: kind,
        unstable_cpo: cpo.iter().filter(|c| c.unstable).count(),
        skipped_draws: skipped,
        p_tilde: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(-1.0, 1.0, 0.0, 0.05).unwrap(), 2.0);
        assert_relative_eq!(interval_score(-1.0, 1.0, 2.0, 0.05).unwrap(), 42.0, epsilon = 1e-12);
        assert_eq!(interval_score(-1.0, 1.0, 1.0, 0.05).unwrap(), 2.0);
        assert!(interval_score(1.0, -1.0, 0.0, 0.05).is_err());
    }

    #[test]
    fn cpo_examples() {
        assert_relative_eq!(cpo_harmonic(&[0.3; 5]).unwrap().log_cpo.exp(), 0.3, epsilon = 1e-14);
        assert_relative_eq!(
            cpo_harmonic(&[1.0, 1.0 / 3.0]).unwrap().log_cpo.exp(),
            0.5,
            epsilon = 1e-14
        );
        let z = cpo_harmonic(&[0.5, 0.0]).unwrap();
        assert!(z.unstable && z.log_cpo == f64::NEG_INFINITY);
        let nan = cpo_harmonic(&[0.5, f64::NAN]).unwrap();
        assert!(nan.unstable);
        assert_relative_eq!(nan.log_cpo.exp(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn lpml_examples() {
        assert_eq!(lpml(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(lpml(&[1f64.exp(), 1f64.exp()]).unwrap(), 2.0, epsilon = 1e-14);
        assert!(lpml(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn extreme_log_densities_stay_finite() {
        let c = log_cpo_harmonic(&[-2000.0, -2001.0, -1999.0]).unwrap();
        assert!(c.log_cpo.is_finite() && c.log_cpo < -1999.0);
    }

    proptest! {
        #[test]
        fn constant_factor_shifts_log_cpo(logs in prop::collection::vec(-50.0f64..5.0, 1..40), shift in -30.0f64..30.0) {
            let a = log_cpo_harmonic(&logs).unwrap().log_cpo;
            let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
            let b = log_cpo_harmonic(&shifted).unwrap().log_cpo;
            prop_assert!((b - a - shift).abs() < 1e-9);
        }

        #[test]
        fn inside_interval_minimizes_score(l in -5.0f64..0.0, w in 0.0f64..5.0, x in -10.0f64..10.0, alpha in 0.01f64..0.5) {
            let u = l + w;
            let s = interval_score(l, u, x, alpha).unwrap();
            prop_assert!(s >= w - 1e-12);
            if x >= l && x <= u {
                prop_assert!((s - w).abs() < 1e-12);
            }
        }
    }
}
