//! Posterior test of covariance separability under the point-mass mixture
//! prior on `α₀`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::PosteriorChain;
use crate::error::{Error, Result};

/// Fraction of retained draws with `α₀ = 0`.
pub fn posterior_sep_probability(chain: &PosteriorChain) -> Result<f64> {
    if chain.is_empty() {
        return Err(Error::InvalidInput("posterior chain has no draws".into()));
    }
    let sep = chain.draws.iter().filter(|d| d.sep_indicator).count();
    Ok(sep as f64 / chain.len() as f64)
}

/// Bayes factor against separability. At `p̃₀ ∈ {0, 1}` the value is
/// infinite or zero and flagged as overwhelming.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub value: f64,
    /// True when the posterior probability sits on the boundary.
    pub overwhelming: bool,
}

/// `BF = [(1 − p̃₀)/p̃₀] / [(1 − p₀)/p₀]`.
pub fn bayes_factor(p_tilde: f64, p0: f64) -> Result<BayesFactor> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "prior probability p0 must lie in (0, 1), got {p0}"
        )));
    }
    if !(0.0..=1.0).contains(&p_tilde) {
        return Err(Error::InvalidInput(format!(
            "posterior probability must lie in [0, 1], got {p_tilde}"
        )));
    }
    let prior_odds = (1.0 - p0) / p0;
    if p_tilde == 0.0 {
        return Ok(BayesFactor {
            value: f64::INFINITY,
            overwhelming: true,
        });
    }
    if p_tilde == 1.0 {
        return Ok(BayesFactor {
            value: 0.0,
            overwhelming: true,
        });
    }
    Ok(BayesFactor {
        value: (1.0 - p_tilde) / p_tilde / prior_odds,
        overwhelming: false,
    })
}

/// Evidence against separability, by bands of `p̃₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceCategory {
    /// `p̃₀ ≥ 0.25`.
    BareMention,
    /// `0.05 < p̃₀ < 0.25`.
    Substantial,
    /// `0.01 < p̃₀ ≤ 0.05`.
    Strong,
    /// `p̃₀ ≤ 0.01`.
    VeryStrong,
}

impl EvidenceCategory {
    pub fn from_probability(p_tilde: f64) -> Self {
        if p_tilde >= 0.25 {
            EvidenceCategory::BareMention
        } else if p_tilde > 0.05 {
            EvidenceCategory::Substantial
        } else if p_tilde > 0.01 {
            EvidenceCategory::Strong
        } else {
            EvidenceCategory::VeryStrong
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EvidenceCategory::BareMention => "not worth more than a bare mention",
            EvidenceCategory::Substantial => "substantial nonseparability",
            EvidenceCategory::Strong => "strong nonseparability",
            EvidenceCategory::VeryStrong => "very strong nonseparability",
        }
    }
}

impl fmt::Display for EvidenceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Losses `w₀` (rejecting a true `H₀`) and `w₁` (keeping a false `H₀`),
/// and the prior probability of separability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionConfig {
    pub w0: f64,
    pub w1: f64,
    pub p0: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            w0: 1.0,
            w1: 1.0,
            p0: 0.5,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w1 > 0.0 && self.w0.is_finite() && self.w1.is_finite()) {
            return Err(Error::Config(format!(
                "losses must be positive, got w0={}, w1={}",
                self.w0, self.w1
            )));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::Config(format!("p0 must lie in [0, 1], got {}", self.p0)));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.w1 / (self.w0 + self.w1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityDecision {
    pub p_tilde: f64,
    pub reject_h0: bool,
    pub evidence: EvidenceCategory,
}

/// Rejects separability iff `p̃₀ ≤ w₁/(w₀ + w₁)`.
pub fn separability_decision(p_tilde: f64, cfg: &DecisionConfig) -> Result<SeparabilityDecision> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&p_tilde) {
        return Err(Error::InvalidInput(format!(
            "posterior probability must lie in [0, 1], got {p_tilde}"
        )));
    }
    Ok(SeparabilityDecision {
        p_tilde,
        reject_h0: p_tilde <= cfg.threshold(),
        evidence: EvidenceCategory::from_probability(p_tilde),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bayes_factor_examples() {
        assert_relative_eq!(bayes_factor(0.3, 0.3).unwrap().value, 1.0, epsilon = 1e-12);
        assert_relative_eq!(bayes_factor(0.25, 0.5).unwrap().value, 3.0, epsilon = 1e-12);
        assert_relative_eq!(bayes_factor(0.05, 0.5).unwrap().value, 19.0, epsilon = 1e-12);
        let b = bayes_factor(0.0, 0.5).unwrap();
        assert!(b.overwhelming && b.value.is_infinite());
        assert!(bayes_factor(0.5, 1.0).is_err());
    }

    #[test]
    fn decision_examples() {
        let even = DecisionConfig::default();
        assert!(separability_decision(0.5, &even).unwrap().reject_h0);
        let d = separability_decision(0.035, &even).unwrap();
        assert_eq!(d.evidence, EvidenceCategory::Strong);
        let cautious = DecisionConfig {
            w0: 9.0,
            w1: 1.0,
            p0: 0.5,
        };
        assert!(!separability_decision(0.9, &cautious).unwrap().reject_h0);
    }

    #[test]
    fn category_bands() {
        assert_eq!(EvidenceCategory::from_probability(0.987), EvidenceCategory::BareMention);
        assert_eq!(EvidenceCategory::from_probability(0.25), EvidenceCategory::BareMention);
        assert_eq!(EvidenceCategory::from_probability(0.251), EvidenceCategory::BareMention);
        assert_eq!(EvidenceCategory::from_probability(0.2), EvidenceCategory::Substantial);
        assert_eq!(EvidenceCategory::from_probability(0.05), EvidenceCategory::Strong);
        assert_eq!(EvidenceCategory::from_probability(0.01), EvidenceCategory::VeryStrong);
    }
}
