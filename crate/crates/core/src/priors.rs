//! Prior densities and sampling for every parameter block, including the
//! point-mass mixture on `α₀`. Gamma distributions use the shape/rate
//! parametrization throughout.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{CovarianceParams, PairMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let g = GammaPrior { shape, rate };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma prior needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated gamma prior")
            .sample(rng)
    }
}

/// Normal prior with mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

impl NormalPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        -0.5 * (2.0 * PI * self.var).ln() - (x - self.mean).powi(2) / (2.0 * self.var)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.var.sqrt())
            .expect("validated normal prior")
            .sample(rng)
    }
}

/// Prior on a shape parameter that may be held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapePrior {
    Fixed(f64),
    Gamma(GammaPrior),
}

impl ShapePrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, ShapePrior::Fixed(_))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            ShapePrior::Fixed(v) => {
                if x == *v {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            ShapePrior::Gamma(g) => g.ln_pdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ShapePrior::Fixed(v) => *v,
            ShapePrior::Gamma(g) => g.mean(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ShapePrior::Fixed(v) => *v,
            ShapePrior::Gamma(g) => g.sample(rng),
        }
    }
}

/// `π(α₀) = p₀ δ₀ + (1 − p₀) g(α₀)`. With `p0 = 0` this is the continuous
/// prior `g`; with `p0 = 1` the model is separable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alpha0Prior {
    pub p0: f64,
    pub slab: GammaPrior,
}

impl Alpha0Prior {
    pub fn ln_pdf(&self, alpha0: f64, separable: bool) -> f64 {
        if separable {
            if alpha0 == 0.0 {
                self.p0.ln()
            } else {
                f64::NEG_INFINITY
            }
        } else if alpha0 > 0.0 {
            (1.0 - self.p0).ln() + self.slab.ln_pdf(alpha0)
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// `b[i][j] ~ Ga(u[i][j]·m, u[i][j])` with `m` the median inter-site
/// distance, so every range has prior mean `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangePrior {
    pub u: PairMatrix,
    pub median_distance: f64,
    /// One shared range `φ` (prior `Ga(u[0][0]·m, u[0][0])`) instead of one
    /// range per component pair.
    pub common: bool,
}

impl RangePrior {
    pub fn uniform(p: usize, u: f64, median_distance: f64, common: bool) -> Self {
        RangePrior {
            u: PairMatrix::constant(p, u),
            median_distance,
            common,
        }
    }

    pub fn pair(&self, i: usize, j: usize) -> GammaPrior {
        let u = self.u.get(i, j);
        GammaPrior {
            shape: u * self.median_distance,
            rate: u,
        }
    }
}

/// Multivariate normal prior on `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl BetaPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::InvalidInput("beta prior dimensions disagree".into()));
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::InvalidInput("beta prior covariance is not PD".into()))?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(BetaPrior {
            precision: chol.inverse(),
            mean,
            cov,
            chol_l,
            log_det,
        })
    }

    /// `N(m·1, v·I)`.
    pub fn isotropic(k: usize, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidInput(format!(
                "beta prior variance must be positive, got {var}"
            )));
        }
        Self::new(
            DVector::from_element(k, mean),
            DMatrix::from_diagonal_element(k, k, var),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn ln_pdf(&self, beta: &[f64]) -> f64 {
        if beta.len() != self.dim() || beta.iter().any(|b| !b.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let d = DVector::from_column_slice(beta) - &self.mean;
        let quad = d.dot(&(&self.precision * &d));
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det + quad)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol_l * z
    }
}

/// Hyperparameters for all blocks of the general model.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub sigma: Vec<NormalPrior>,
    /// Priors on `δ[i][j]` for `i < j`, keyed through a zero-diagonal pair
    /// matrix of shapes and rates.
    pub delta_shape: PairMatrix,
    pub delta_rate: PairMatrix,
    pub alpha1: ShapePrior,
    pub alpha2: ShapePrior,
    pub alpha0: Alpha0Prior,
    pub range: RangePrior,
    pub beta: BetaPrior,
}

impl PriorSpec {
    /// Simulation-study defaults: `σᵢ ~ N(0, 100)`, `δᵢⱼ ~ Ga(1, 0.5)`,
    /// `α₁ = α₂ = 1`, `α₀ ~ 0.5 δ₀ + 0.5 Ga(1, 3)`, `b ~ Ga(0.75 m, 0.75)`,
    /// `β ~ N(0, 1000 I)`.
    pub fn defaults(p: usize, n_coefficients: usize, median_distance: f64) -> Result<Self> {
        let spec = PriorSpec {
            sigma: vec![NormalPrior { mean: 0.0, var: 100.0 }; p],
            delta_shape: PairMatrix::off_diagonal(p, 1.0),
            delta_rate: PairMatrix::off_diagonal(p, 0.5),
            alpha1: ShapePrior::Fixed(1.0),
            alpha2: ShapePrior::Fixed(1.0),
            alpha0: Alpha0Prior {
                p0: 0.5,
                slab: GammaPrior::new(1.0, 3.0)?,
            },
            range: RangePrior::uniform(p, 0.75, median_distance, true),
            beta: BetaPrior::isotropic(n_coefficients, 0.0, 1000.0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn p(&self) -> usize {
        self.sigma.len()
    }

    pub fn delta(&self, i: usize, j: usize) -> GammaPrior {
        GammaPrior {
            shape: self.delta_shape.get(i, j),
            rate: self.delta_rate.get(i, j),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::InvalidInput("prior needs p >= 1".into()));
        }
        if self.sigma.iter().any(|s| !(s.var > 0.0) || !s.mean.is_finite()) {
            return Err(Error::InvalidInput(
                "sigma priors need finite means and positive variances".into(),
            ));
        }
        if self.delta_shape.dim() != p || self.delta_rate.dim() != p || self.range.u.dim() != p {
            return Err(Error::InvalidInput("prior pair matrices do not match p".into()));
        }
        for (i, j) in self.delta_shape.off_diagonal_pairs() {
            self.delta(i, j).validate()?;
        }
        for (i, j) in self.range.u.pairs() {
            self.range.pair(i, j).validate()?;
        }
        for a in [self.alpha1, self.alpha2] {
            match a {
                ShapePrior::Fixed(v) if !(v > 0.0) => {
                    return Err(Error::InvalidInput(format!("fixed shape must be positive, got {v}")))
                }
                ShapePrior::Gamma(g) => g.validate()?,
                _ => {}
            }
        }
        if !(0.0..=1.0).contains(&self.alpha0.p0) {
            return Err(Error::InvalidInput(format!(
                "p0 must lie in [0, 1], got {}",
                self.alpha0.p0
            )));
        }
        self.alpha0.slab.validate()?;
        Ok(())
    }

    /// Log-prior of the range block, honoring the common-range flag.
    pub fn range_ln_pdf(&self, params: &CovarianceParams) -> f64 {
        if params.common_range {
            self.range.pair(0, 0).ln_pdf(params.phi())
        } else {
            params
                .b
                .pairs()
                .into_iter()
                .map(|(i, j)| self.range.pair(i, j).ln_pdf(params.b.get(i, j)))
                .sum()
        }
    }

    pub fn sigma_ln_pdf(&self, params: &CovarianceParams) -> f64 {
        self.sigma.iter().zip(&params.sigma).map(|(pr, s)| pr.ln_pdf(*s)).sum()
    }

    pub fn delta_ln_pdf(&self, params: &CovarianceParams) -> f64 {
        params
            .delta
            .off_diagonal_pairs()
            .into_iter()
            .map(|(i, j)| self.delta(i, j).ln_pdf(params.delta.get(i, j)))
            .sum()
    }
}

/// Sum of block log-densities. Out-of-support values (including an indicator
/// inconsistent with `α₀`) give `−∞`.
pub fn log_prior(params: &CovarianceParams, spec: &PriorSpec, sep_indicator: bool) -> f64 {
    if params.p() != spec.p() {
        return f64::NEG_INFINITY;
    }
    let total = spec.sigma_ln_pdf(params)
        + spec.delta_ln_pdf(params)
        + spec.alpha1.ln_pdf(params.alpha1)
        + spec.alpha2.ln_pdf(params.alpha2)
        + spec.alpha0.ln_pdf(params.alpha0, sep_indicator)
        + spec.range_ln_pdf(params)
        + spec.beta.ln_pdf(&params.beta);
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// One draw from the joint prior. The indicator is true with probability
/// `p₀`, in which case `α₀ = 0`.
pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> (CovarianceParams, bool) {
    let p = spec.p();
    let common_range = spec.range.common;
    let sigma = spec.sigma.iter().map(|s| s.sample(rng)).collect();
    let mut delta = PairMatrix::constant(p, 0.0);
    for (i, j) in delta.off_diagonal_pairs() {
        delta.set(i, j, spec.delta(i, j).sample(rng));
    }
    let alpha1 = spec.alpha1.sample(rng);
    let alpha2 = spec.alpha2.sample(rng);
    let separable = rng.random::<f64>() < spec.alpha0.p0;
    let alpha0 = if separable {
        0.0
    } else {
        // Resample the (measure-zero) exact zero.
        loop {
            let a = spec.alpha0.slab.sample(rng);
            if a > 0.0 {
                break a;
            }
        }
    };
    let b = if common_range {
        PairMatrix::constant(p, spec.range.pair(0, 0).sample(rng))
    } else {
        PairMatrix::from_fn(p, |i, j| spec.range.pair(i, j).sample(rng))
    };
    let beta = spec.beta.sample(rng).as_slice().to_vec();
    (
        CovarianceParams {
            sigma,
            delta,
            alpha0,
            alpha1,
            alpha2,
            b,
            beta,
            common_range,
        },
        separable,
    )
}
