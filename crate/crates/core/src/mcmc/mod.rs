//! Posterior simulation for the general, separable and independent model
//! families, chain diagnostics, and the posterior separability test.

pub mod diagnostics;
pub mod general;
pub mod separability;
pub mod separable;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    assemble_cov_matrix, cauchy_correlation_matrix, CovMatrix, CovarianceParams, Geometry, PairMatrix, SeparableParams,
};
use crate::linalg::kron;

pub use general::{
    beta_conditional, gibbs_update_beta, mh_update, run_chain, update_sep_indicator, Coordinate, GeneralState,
};
pub use separability::{
    bayes_factor, posterior_sep_probability, separability_decision, BayesFactor, DecisionConfig, EvidenceCategory,
    SeparabilityDecision,
};
pub use separable::{run_independent_chain, run_separable_chain, IndependentPriorSpec, SeparablePriorSpec};

/// Model family fitted by a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `p` univariate Cauchy models fitted independently.
    Independent,
    /// `A ⊗ R` with a squared-Cauchy spatial correlation.
    Separable,
    /// General model with a continuous prior on `α₀`.
    Nonseparable,
    /// General model with the point-mass mixture prior on `α₀`.
    NonseparableMixture,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Independent,
        Family::Separable,
        Family::Nonseparable,
        Family::NonseparableMixture,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Independent => "independent",
            Family::Separable => "separable",
            Family::Nonseparable => "nonseparable",
            Family::NonseparableMixture => "nonseparable-mixture",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family '{s}'")))
    }
}

/// Parameter draw of any family.
#[derive(Clone, Debug, PartialEq)]
pub enum Theta {
    General(CovarianceParams),
    Separable {
        params: SeparableParams,
        beta: Vec<f64>,
    },
    Independent {
        variances: Vec<f64>,
        phis: Vec<f64>,
        beta: Vec<f64>,
    },
}

impl Theta {
    pub fn p(&self) -> usize {
        match self {
            Theta::General(c) => c.p(),
            Theta::Separable { params, .. } => params.p(),
            Theta::Independent { variances, .. } => variances.len(),
        }
    }

    pub fn beta(&self) -> &[f64] {
        match self {
            Theta::General(c) => &c.beta,
            Theta::Separable { beta, .. } | Theta::Independent { beta, .. } => beta,
        }
    }

    /// Dense covariance over `geom` under this draw.
    pub fn covariance(&self, geom: &Geometry) -> Result<CovMatrix> {
        let n = geom.n();
        match self {
            Theta::General(c) => {
                c.validate()?;
                Ok(assemble_cov_matrix(geom, c))
            }
            Theta::Separable { params, .. } => {
                let r = cauchy_correlation_matrix(geom, params.phi);
                CovMatrix::new(params.p(), n, kron(&params.a, &r))
            }
            Theta::Independent { variances, phis, .. } => {
                let p = variances.len();
                let mut values = DMatrix::zeros(n * p, n * p);
                for i in 0..p {
                    let r = cauchy_correlation_matrix(geom, phis[i]) * variances[i];
                    values.view_mut((i * n, i * n), (n, n)).copy_from(&r);
                }
                CovMatrix::new(p, n, values)
            }
        }
    }

    /// Scalar column names for chain serialization.
    pub fn column_names(&self) -> Vec<String> {
        let p = self.p();
        let k = self.beta().len();
        let mut names = Vec::new();
        match self {
            Theta::General(c) => {
                names.extend((1..=p).map(|i| format!("sigma_{i}")));
                for (i, j) in c.delta.off_diagonal_pairs() {
                    names.push(format!("delta_{}_{}", i + 1, j + 1));
                }
                if c.common_range {
                    names.push("phi".into());
                } else {
                    for (i, j) in c.b.pairs() {
                        names.push(format!("b_{}_{}", i + 1, j + 1));
                    }
                }
                names.extend(["alpha0", "alpha1", "alpha2"].map(String::from));
            }
            Theta::Separable { .. } => {
                for i in 0..p {
                    for j in i..p {
                        names.push(format!("a_{}_{}", i + 1, j + 1));
                    }
                }
                names.push("phi".into());
            }
            Theta::Independent { .. } => {
                names.extend((1..=p).map(|i| format!("var_{i}")));
                names.extend((1..=p).map(|i| format!("phi_{i}")));
            }
        }
        names.extend(beta_names(p, k));
        names
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            Theta::General(c) => {
                out.extend(&c.sigma);
                for (i, j) in c.delta.off_diagonal_pairs() {
                    out.push(c.delta.get(i, j));
                }
                if c.common_range {
                    out.push(c.phi());
                } else {
                    for (i, j) in c.b.pairs() {
                        out.push(c.b.get(i, j));
                    }
                }
                out.extend([c.alpha0, c.alpha1, c.alpha2]);
            }
            Theta::Separable { params, .. } => {
                let p = params.p();
                for i in 0..p {
                    for j in i..p {
                        out.push(params.a[(i, j)]);
                    }
                }
                out.push(params.phi);
            }
            Theta::Independent { variances, phis, .. } => {
                out.extend(variances);
                out.extend(phis);
            }
        }
        out.extend(self.beta());
        out
    }

    /// Inverse of [`Theta::values`] given the column names of the family.
    pub fn from_values(family: Family, p: usize, names: &[String], values: &[f64]) -> Result<Theta> {
        if names.len() != values.len() {
            return Err(Error::Data("column/value count mismatch".into()));
        }
        let get = |name: &str| -> Result<f64> {
            names
                .iter()
                .position(|n| n == name)
                .map(|k| values[k])
                .ok_or_else(|| Error::Data(format!("chain is missing column '{name}'")))
        };
        let beta: Vec<f64> = names
            .iter()
            .zip(values)
            .filter(|(n, _)| n.starts_with("beta_"))
            .map(|(_, v)| *v)
            .collect();
        match family {
            Family::Nonseparable | Family::NonseparableMixture => {
                let sigma = (1..=p)
                    .map(|i| get(&format!("sigma_{i}")))
                    .collect::<Result<Vec<_>>>()?;
                let mut delta = PairMatrix::constant(p, 0.0);
                for (i, j) in delta.off_diagonal_pairs() {
                    delta.set(i, j, get(&format!("delta_{}_{}", i + 1, j + 1))?);
                }
                let common_range = names.iter().any(|n| n == "phi");
                let b = if common_range {
                    PairMatrix::constant(p, get("phi")?)
                } else {
                    let mut b = PairMatrix::constant(p, 1.0);
                    for (i, j) in b.pairs() {
                        b.set(i, j, get(&format!("b_{}_{}", i + 1, j + 1))?);
                    }
                    b
                };
                Ok(Theta::General(CovarianceParams {
                    sigma,
                    delta,
                    alpha0: get("alpha0")?,
                    alpha1: get("alpha1")?,
                    alpha2: get("alpha2")?,
                    b,
                    beta,
                    common_range,
                }))
            }
            Family::Separable => {
                let mut a = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in i..p {
                        let v = get(&format!("a_{}_{}", i + 1, j + 1))?;
                        a[(i, j)] = v;
                        a[(j, i)] = v;
                    }
                }
                Ok(Theta::Separable {
                    params: SeparableParams { a, phi: get("phi")? },
                    beta,
                })
            }
            Family::Independent => Ok(Theta::Independent {
                variances: (1..=p).map(|i| get(&format!("var_{i}"))).collect::<Result<_>>()?,
                phis: (1..=p).map(|i| get(&format!("phi_{i}"))).collect::<Result<_>>()?,
                beta,
            }),
        }
    }
}

/// `beta_<component>_<covariate>` in coefficient order (covariate-major).
pub fn beta_names(p: usize, k: usize) -> Vec<String> {
    (0..k).map(|idx| format!("beta_{}_{}", idx % p + 1, idx / p)).collect()
}

/// One retained draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: Theta,
    /// True exactly when `α₀ = 0` (always true for the separable families).
    pub sep_indicator: bool,
    pub log_post: f64,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Acceptance rate targeted by the burn-in adaptation.
    pub target_acceptance: f64,
    /// Iterations per adaptation batch.
    pub adapt_batch: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 5,
            target_acceptance: 0.44,
            adapt_batch: 50,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations || (self.iterations - self.burn_in) / self.thin == 0 {
            return Err(Error::Config(format!(
                "no draws retained: iterations={}, burn_in={}, thin={}",
                self.iterations, self.burn_in, self.thin
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        if self.adapt_batch == 0 {
            return Err(Error::Config("adapt_batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub(crate) fn keep(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Acceptance counts of one proposal block, after burn-in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub block: String,
    pub proposals: u64,
    pub accepted: u64,
}

impl BlockAcceptance {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorChain {
    pub family: Family,
    pub draws: Vec<ChainState>,
    pub acceptance: Vec<BlockAcceptance>,
    /// Final (frozen) proposal scales per coordinate.
    pub proposal_scales: Vec<(String, f64)>,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl PosteriorChain {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.draws.first().map(|d| d.theta.column_names()).unwrap_or_default()
    }

    /// Trace of one named scalar column.
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_names().iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|d| d.theta.values()[k]).collect())
    }
}

/// Accumulates per-coordinate acceptance and adapts random-walk scales
/// during burn-in.
#[derive(Clone, Debug)]
pub(crate) struct Adapter {
    pub names: Vec<String>,
    pub blocks: Vec<String>,
    pub log_scales: Vec<f64>,
    batch_props: Vec<u64>,
    batch_acc: Vec<u64>,
    batches: u64,
    pub post_props: Vec<u64>,
    pub post_acc: Vec<u64>,
    target: f64,
}

impl Adapter {
    pub fn new(entries: Vec<(String, String, f64)>, target: f64) -> Self {
        let n = entries.len();
        let mut names = Vec::with_capacity(n);
        let mut blocks = Vec::with_capacity(n);
        let mut log_scales = Vec::with_capacity(n);
        for (name, block, scale) in entries {
            names.push(name);
            blocks.push(block);
            log_scales.push(scale.ln());
        }
        Adapter {
            names,
            blocks,
            log_scales,
            batch_props: vec![0; n],
            batch_acc: vec![0; n],
            batches: 0,
            post_props: vec![0; n],
            post_acc: vec![0; n],
            target,
        }
    }

    pub fn scale(&self, k: usize) -> f64 {
        self.log_scales[k].exp()
    }

    pub fn record(&mut self, k: usize, accepted: bool, burning_in: bool) {
        if burning_in {
            self.batch_props[k] += 1;
            self.batch_acc[k] += accepted as u64;
        } else {
            self.post_props[k] += 1;
            self.post_acc[k] += accepted as u64;
        }
    }

    /// Ends an adaptation batch: nudges each log-scale toward the target
    /// acceptance by `min(0.1, batch^-1/2)`.
    pub fn end_batch(&mut self) {
        self.batches += 1;
        let step = (1.0 / (self.batches as f64).sqrt()).min(0.1);
        for k in 0..self.log_scales.len() {
            if self.batch_props[k] == 0 {
                continue;
            }
            let rate = self.batch_acc[k] as f64 / self.batch_props[k] as f64;
            self.log_scales[k] += if rate > self.target { step } else { -step };
            self.batch_props[k] = 0;
            self.batch_acc[k] = 0;
        }
    }

    pub fn block_acceptance(&self) -> Vec<BlockAcceptance> {
        let mut out: Vec<BlockAcceptance> = Vec::new();
        for k in 0..self.names.len() {
            let block = &self.blocks[k];
            let entry = match out.iter_mut().position(|b| &b.block == block) {
                Some(pos) => &mut out[pos],
                None => {
                    out.push(BlockAcceptance {
                        block: block.clone(),
                        ..Default::default()
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            entry.proposals += self.post_props[k];
            entry.accepted += self.post_acc[k];
        }
        out
    }

    pub fn scales(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .cloned()
            .zip(self.log_scales.iter().map(|l| l.exp()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_roundtrip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("bogus".parse::<Family>().is_err());
    }

    #[test]
    fn theta_values_roundtrip() {
        let c = CovarianceParams::common(
            vec![1.0, -2.0, 0.5],
            PairMatrix::from_upper(3, &[0.1, 0.2, 0.3]).unwrap(),
            [0.2, 1.0, 1.5],
            0.1,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        );
        let th = Theta::General(c);
        let back = Theta::from_values(Family::Nonseparable, 3, &th.column_names(), &th.values()).unwrap();
        assert_eq!(back, th);

        let th = Theta::Separable {
            params: SeparableParams {
                a: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
                phi: 0.2,
            },
            beta: vec![0.1, 0.2],
        };
        let back = Theta::from_values(Family::Separable, 2, &th.column_names(), &th.values()).unwrap();
        assert_eq!(back, th);
    }

    #[test]
    fn keep_schedule_matches_retained_count() {
        let cfg = McmcConfig {
            iterations: 103,
            burn_in: 10,
            thin: 4,
            ..Default::default()
        };
        let kept = (0..cfg.iterations).filter(|&it| cfg.keep(it)).count();
        assert_eq!(kept, cfg.retained());
        assert_eq!(kept, 23);
        let bad = McmcConfig {
            iterations: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn independent_covariance_is_block_diagonal() {
        let geom = Geometry::new(vec![[0.0, 0.0], [0.3, 0.1]]).unwrap();
        let th = Theta::Independent {
            variances: vec![2.0, 3.0],
            phis: vec![0.1, 0.5],
            beta: vec![],
        };
        let c = th.covariance(&geom).unwrap();
        assert_eq!(c.values[(0, 0)], 2.0);
        assert_eq!(c.values[(2, 2)], 3.0);
        assert_eq!(c.values[(0, 2)], 0.0);
        assert_eq!(c.values[(1, 3)], 0.0);
    }
}
