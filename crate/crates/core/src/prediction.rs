//! Gaussian conditioning at unobserved sites and Monte Carlo mixing over
//! posterior draws.
//!
//! For one parameter draw the unobserved block is Gaussian with
//! `μ* = μᵤ + Σᵤₒ Σₒₒ⁻¹ (yₒ − μₒ)` and `Σ* = Σᵤᵤ − Σᵤₒ Σₒₒ⁻¹ Σₒᵤ`. The
//! predictive distribution is the equal-weight mixture of these over the
//! retained draws; summaries are taken from pooled samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Geometry;
use crate::linalg::{quantile_sorted, symmetrize, Factor};
use crate::mcmc::{PosteriorChain, Theta};
use crate::model::{design_matrix, SpatialDataset};

/// Observed and unobserved entries over a set of sites. Flat indices follow
/// the component-major layout `i * n + k`; the same split applies to every
/// replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTask {
    pub site_ids: Vec<String>,
    pub component_names: Vec<String>,
    pub geometry: Geometry,
    /// Design over all sites, `np × p(q+1)`.
    pub design: DMatrix<f64>,
    pub observed: Vec<usize>,
    pub unobserved: Vec<usize>,
    /// Observed values per replicate, ordered as `observed`.
    pub observed_values: Vec<DVector<f64>>,
    /// True values at the unobserved entries per replicate, when known.
    pub truth: Option<Vec<DVector<f64>>>,
}

impl PredictionTask {
    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    pub fn p(&self) -> usize {
        self.component_names.len()
    }

    pub fn t(&self) -> usize {
        self.observed_values.len()
    }

    /// `(site, component)` of the flat index `f`.
    pub fn locate(&self, f: usize) -> (usize, usize) {
        (f % self.n(), f / self.n())
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.n() * self.p();
        let mut seen = vec![false; dim];
        for &f in self.observed.iter().chain(&self.unobserved) {
            if f >= dim {
                return Err(Error::InvalidInput(format!("index {f} is outside 0..{dim}")));
            }
            if seen[f] {
                return Err(Error::InvalidInput(format!(
                    "index {f} appears twice in the observed/unobserved sets"
                )));
            }
            seen[f] = true;
        }
        if self.unobserved.is_empty() {
            return Err(Error::InvalidInput("prediction task has no unobserved entries".into()));
        }
        if self.observed_values.is_empty() {
            return Err(Error::InvalidInput("prediction task has no replicates".into()));
        }
        for y in &self.observed_values {
            if y.len() != self.observed.len() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(
                    "observed values must be finite and match the observed index set".into(),
                ));
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.t() || truth.iter().any(|v| v.len() != self.unobserved.len()) {
                return Err(Error::Data("truth does not match the unobserved index set".into()));
            }
        }
        if self.design.nrows() != dim {
            return Err(Error::InvalidInput("design does not cover all sites".into()));
        }
        Ok(())
    }

    /// Holds out every component at `holdout` sites of `data`; the held-out
    /// values become the truth.
    pub fn holdout(data: &SpatialDataset, holdout: &[usize]) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        let mut held = vec![false; n];
        for &k in holdout {
            if k >= n {
                return Err(Error::InvalidInput(format!("hold-out site {k} out of range")));
            }
            held[k] = true;
        }
        let mut observed = Vec::new();
        let mut unobserved = Vec::new();
        for i in 0..p {
            for (k, &h) in held.iter().enumerate() {
                if h {
                    unobserved.push(i * n + k);
                } else {
                    observed.push(i * n + k);
                }
            }
        }
        let pick = |idx: &[usize]| -> Vec<DVector<f64>> {
            (0..data.t())
                .map(|t| {
                    let y = data.response_vector(t);
                    DVector::from_iterator(idx.len(), idx.iter().map(|&f| y[f]))
                })
                .collect()
        };
        let observed_values = pick(&observed);
        let truth = pick(&unobserved);
        let truth = truth.iter().all(|v| v.iter().all(|x| x.is_finite())).then_some(truth);
        let task = PredictionTask {
            site_ids: data.site_ids.clone(),
            component_names: data.component_names.clone(),
            geometry: data.geometry()?,
            design: design_matrix(&data.covariates, p),
            observed,
            unobserved,
            observed_values,
            truth,
        };
        task.validate()?;
        Ok(task)
    }

    /// Predicts the missing (NaN) responses of `data`. The missing pattern
    /// must be the same in every replicate.
    pub fn from_missing(data: &SpatialDataset) -> Result<Self> {
        let n = data.n();
        let dim = n * data.p();
        let y0 = data.response_vector(0);
        let unobserved: Vec<usize> = (0..dim).filter(|&f| y0[f].is_nan()).collect();
        let observed: Vec<usize> = (0..dim).filter(|&f| !y0[f].is_nan()).collect();
        let mut observed_values = Vec::with_capacity(data.t());
        for t in 0..data.t() {
            let y = data.response_vector(t);
            if (0..dim).any(|f| y[f].is_nan() != y0[f].is_nan()) {
                return Err(Error::Data(format!(
                    "replicate {t} has a different missing pattern from replicate 0"
                )));
            }
            observed_values.push(DVector::from_iterator(observed.len(), observed.iter().map(|&f| y[f])));
        }
        let task = PredictionTask {
            site_ids: data.site_ids.clone(),
            component_names: data.component_names.clone(),
            geometry: data.geometry()?,
            design: design_matrix(&data.covariates, data.p()),
            observed,
            unobserved,
            observed_values,
            truth: None,
        };
        task.validate()?;
        Ok(task)
    }
}

/// Conditional moments for one parameter draw: one mean per replicate and a
/// shared covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussian {
    pub means: Vec<DVector<f64>>,
    pub cov: DMatrix<f64>,
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Exact Gaussian conditioning of the unobserved entries on the observed
/// ones under `theta`.
pub fn conditional_gaussian(theta: &Theta, task: &PredictionTask) -> Result<ConditionalGaussian> {
    if theta.p() != task.p() {
        return Err(Error::InvalidInput(format!(
            "parameters have p={}, task has p={}",
            theta.p(),
            task.p()
        )));
    }
    let sigma = theta.covariance(&task.geometry)?.values;
    let beta = theta.beta();
    if beta.len() != task.design.ncols() {
        return Err(Error::InvalidInput(format!(
            "beta has length {}, design expects {}",
            beta.len(),
            task.design.ncols()
        )));
    }
    let mu = &task.design * DVector::from_column_slice(beta);
    let (o, u) = (&task.observed, &task.unobserved);
    let mu_u = DVector::from_iterator(u.len(), u.iter().map(|&f| mu[f]));
    let s_uu = submatrix(&sigma, u, u);
    if o.is_empty() {
        return Ok(ConditionalGaussian {
            means: vec![mu_u; task.t()],
            cov: s_uu,
        });
    }
    let mu_o = DVector::from_iterator(o.len(), o.iter().map(|&f| mu[f]));
    let s_oo = Factor::new(&submatrix(&sigma, o, o))?;
    let s_uo = submatrix(&sigma, u, o);
    // K = Σᵤₒ Σₒₒ⁻¹, computed as (Σₒₒ⁻¹ Σₒᵤ)ᵀ.
    let gain = s_oo.solve_mat(&s_uo.transpose()).transpose();
    let mut cov = s_uu - &gain * s_uo.transpose();
    symmetrize(&mut cov);
    let means = task
        .observed_values
        .iter()
        .map(|y| &mu_u + &gain * (y - &mu_o))
        .collect();
    Ok(ConditionalGaussian { means, cov })
}

/// Square root `B` with `B Bᵀ = C` for a symmetric PSD `C`, clipping
/// negative round-off eigenvalues to zero.
fn psd_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("conditional covariance is not finite".into()));
    }
    let eig = c.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut b = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-6 * scale.max(1e-300) {
            return Err(Error::InvalidParameter(format!(
                "conditional covariance has a negative eigenvalue {lam:e}"
            )));
        }
        let s = lam.max(0.0).sqrt();
        b.column_mut(j).scale_mut(s);
    }
    Ok(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictiveConfig {
    pub draws_per_theta: usize,
    /// Intervals are central with coverage `1 − alpha`.
    pub alpha: f64,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        PredictiveConfig {
            draws_per_theta: 50,
            alpha: 0.05,
        }
    }
}

impl PredictiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws_per_theta == 0 {
            return Err(Error::Config("draws_per_theta must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Predictive summary of one scalar target (one site, component and
/// replicate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    /// `site:component:replicate`, replicate counted from 1.
    pub target_id: String,
    pub site_id: String,
    pub component: String,
    /// 0-based replicate index.
    pub replicate: usize,
    pub truth: Option<f64>,
    /// Mixture mean: the average of the conditional means.
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Mixture variance: average conditional variance plus the variance of
    /// the conditional means.
    pub variance: f64,
    pub within_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub targets: Vec<TargetSummary>,
    /// Pooled predictive draws per target, ordered by parameter draw then
    /// sample.
    pub draws: Vec<Vec<f64>>,
    pub thetas_used: usize,
    pub thetas_skipped: usize,
    pub config: PredictiveConfig,
}

struct ThetaPrediction {
    means: Vec<DVector<f64>>,
    variances: DVector<f64>,
    samples: Vec<Vec<DVector<f64>>>,
}

fn predict_one(theta: &Theta, task: &PredictionTask, draws: usize, rng: &mut ChaCha8Rng) -> Result<ThetaPrediction> {
    let cond = conditional_gaussian(theta, task)?;
    let root = psd_sqrt(&cond.cov)?;
    let m = task.unobserved.len();
    let samples = cond
        .means
        .iter()
        .map(|mean| {
            (0..draws)
                .map(|_| {
                    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    mean + &root * z
                })
                .collect()
        })
        .collect();
    Ok(ThetaPrediction {
        variances: cond.cov.diagonal(),
        means: cond.means,
        samples,
    })
}

/// Predictive distribution as the equal-weight mixture over the chain's
/// draws. Draw `d` uses stream `d` of a generator seeded with `seed`, so the
/// result is independent of the thread count. Draws whose covariance is
/// invalid for the task are skipped; if all are, this fails.
pub fn predictive_mixture(
    chain: &PosteriorChain,
    task: &PredictionTask,
    config: &PredictiveConfig,
    seed: u64,
) -> Result<PredictiveSummary> {
    config.validate()?;
    task.validate()?;
    if chain.is_empty() {
        return Err(Error::InvalidInput("posterior chain has no draws".into()));
    }
    let results: Vec<Option<ThetaPrediction>> = chain
        .draws
        .par_iter()
        .enumerate()
        .map(|(d, state)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            predict_one(&state.theta, task, config.draws_per_theta, &mut rng).ok()
        })
        .collect();
    let used: Vec<&ThetaPrediction> = results.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::InvalidParameter(
            "every posterior draw gave an invalid covariance for the prediction task".into(),
        ));
    }
    let m = task.unobserved.len();
    let k = used.len() as f64;
    let mut targets = Vec::with_capacity(m * task.t());
    let mut draws = Vec::with_capacity(m * task.t());
    for t in 0..task.t() {
        for (j, &f) in task.unobserved.iter().enumerate() {
            let (site, comp) = task.locate(f);
            let mean = used.iter().map(|r| r.means[t][j]).sum::<f64>() / k;
            let within = used.iter().map(|r| r.variances[j]).sum::<f64>() / k;
            let between = used.iter().map(|r| (r.means[t][j] - mean).powi(2)).sum::<f64>() / k;
            let mut pooled: Vec<f64> = used
                .iter()
                .flat_map(|r| r.samples[t].iter().map(move |s| s[j]))
                .collect();
            let mut sorted = pooled.clone();
            sorted.sort_by(f64::total_cmp);
            let truth = task.truth.as_ref().map(|tr| tr[t][j]);
            targets.push(TargetSummary {
                target_id: format!("{}:{}:{}", task.site_ids[site], task.component_names[comp], t + 1),
                site_id: task.site_ids[site].clone(),
                component: task.component_names[comp].clone(),
                replicate: t,
                truth,
                mean,
                lower: quantile_sorted(&sorted, config.alpha / 2.0),
                upper: quantile_sorted(&sorted, 1.0 - config.alpha / 2.0),
                variance: within + between,
                within_variance: within,
            });
            pooled.shrink_to_fit();
            draws.push(pooled);
        }
    }
    Ok(PredictiveSummary {
        targets,
        draws,
        thetas_used: used.len(),
        thetas_skipped: chain.len() - used.len(),
        config: *config,
    })
}
