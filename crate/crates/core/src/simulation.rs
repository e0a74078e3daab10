//! Synthetic datasets from the general model, including the built-in
//! simulation scenarios.
//!
//! Random streams are split by purpose (sites, covariates, hold-out,
//! replicates), so scenarios that differ only in the covariance truth share
//! sites, covariates and the standard-normal draws behind each replicate.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{alpha0_for_rho, build_cov_matrix, CovarianceParams, Geometry, PairMatrix};
use crate::model::{design_matrix, SpatialDataset};

const STREAM_SITES: u64 = 1;
const STREAM_COVARIATES: u64 = 2;
const STREAM_HOLDOUT: u64 = 3;
const STREAM_REPLICATES: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteSampler {
    /// Uniform on `[0, 1]²`.
    UnitSquare,
    Fixed(Vec<[f64; 2]>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateGenerator {
    /// Intercept only.
    None,
    /// Latitude (the `y` coordinate), longitude (the `x` coordinate) and an
    /// altitude drawn uniformly on `[0, 1]`.
    LatLonAltitude,
}

impl CovariateGenerator {
    pub fn names(&self) -> Vec<String> {
        match self {
            CovariateGenerator::None => vec![],
            CovariateGenerator::LatLonAltitude => vec!["lat".into(), "lon".into(), "alt".into()],
        }
    }

    fn generate<R: Rng + ?Sized>(&self, sites: &[[f64; 2]], rng: &mut R) -> DMatrix<f64> {
        match self {
            CovariateGenerator::None => DMatrix::zeros(sites.len(), 0),
            CovariateGenerator::LatLonAltitude => {
                let mut x = DMatrix::zeros(sites.len(), 3);
                for (k, s) in sites.iter().enumerate() {
                    x[(k, 0)] = s[1];
                    x[(k, 1)] = s[0];
                    x[(k, 2)] = rng.random::<f64>();
                }
                x
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    pub t: usize,
    pub sites: SiteSampler,
    /// Covariance parameters and `β` in design order (`c * p + i`).
    pub truth: CovarianceParams,
    pub covariates: CovariateGenerator,
    pub holdout: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn p(&self) -> usize {
        self.truth.p()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Config(format!("scenario '{}' needs n, T >= 1", self.name)));
        }
        if self.holdout >= self.n {
            return Err(Error::Config(format!(
                "scenario '{}': hold-out count {} must be below n = {}",
                self.name, self.holdout, self.n
            )));
        }
        if let SiteSampler::Fixed(s) = &self.sites {
            if s.len() != self.n {
                return Err(Error::Config(format!(
                    "scenario '{}': {} fixed sites given for n = {}",
                    self.name,
                    s.len(),
                    self.n
                )));
            }
        }
        let k = self.p() * (self.covariates.names().len() + 1);
        if self.truth.beta.len() != k {
            return Err(Error::Config(format!(
                "scenario '{}': beta has length {}, expected {k}",
                self.name,
                self.truth.beta.len()
            )));
        }
        self.truth.validate()
    }

    fn stream(&self, s: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(s);
        rng
    }
}

/// A simulated dataset with its generating truth and hold-out sites.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub scenario: String,
    pub dataset: SpatialDataset,
    pub truth: CovarianceParams,
    /// Hold-out site indices, ascending.
    pub holdout: Vec<usize>,
}

impl SimulatedData {
    pub fn training_sites(&self) -> Vec<usize> {
        (0..self.dataset.n()).filter(|k| !self.holdout.contains(k)).collect()
    }
}

/// Draws `T` independent replicates `N(Xβ, Σ(truth))`.
pub fn simulate_dataset(spec: &ScenarioSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p());
    let sites = match &spec.sites {
        SiteSampler::UnitSquare => {
            let mut rng = spec.stream(STREAM_SITES);
            (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
        }
        SiteSampler::Fixed(s) => s.clone(),
    };
    let covariates = spec.covariates.generate(&sites, &mut spec.stream(STREAM_COVARIATES));
    let geom = Geometry::new(sites.clone())?;
    let factor = build_cov_matrix(&geom, &spec.truth)?.factorize()?;
    let mean = design_matrix(&covariates, p) * DVector::from_column_slice(&spec.truth.beta);
    let mut rng = spec.stream(STREAM_REPLICATES);
    let responses = (0..spec.t)
        .map(|_| {
            let z = DVector::from_fn(n * p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &mean + factor.mul_l(&z);
            DMatrix::from_column_slice(n, p, y.as_slice())
        })
        .collect();
    let mut holdout = sample(&mut spec.stream(STREAM_HOLDOUT), n, spec.holdout).into_vec();
    holdout.sort_unstable();
    let dataset = SpatialDataset::new(
        (1..=n).map(|k| format!("s{k:03}")).collect(),
        sites,
        spec.covariates.names(),
        covariates,
        (1..=p).map(|i| format!("y{i}")).collect(),
        responses,
    )?;
    Ok(SimulatedData {
        scenario: spec.name.clone(),
        dataset,
        truth: spec.truth.clone(),
        holdout,
    })
}

/// Interleaves per-component coefficient vectors into design order.
pub fn interleave_beta(per_component: &[Vec<f64>]) -> Vec<f64> {
    let p = per_component.len();
    let k = per_component.first().map_or(0, |b| b.len());
    (0..k * p).map(|idx| per_component[idx % p][idx / p]).collect()
}

const BETA1: [f64; 4] = [1.0, -0.2, -0.8, 0.5];
const BETA2: [f64; 4] = [1.5, 0.6, -0.5, -0.8];
const BETA3: [f64; 4] = [1.8, -0.4, -0.3, 0.6];

fn two_component(rho: f64) -> Result<CovarianceParams> {
    Ok(CovarianceParams::common(
        vec![1.0, 1.0],
        PairMatrix::off_diagonal(2, 1.5),
        [alpha0_for_rho(rho, 1.0)?, 1.0, 1.0],
        0.05,
        interleave_beta(&[BETA1.to_vec(), BETA2.to_vec()]),
    ))
}

fn three_component(sigma: [f64; 3], delta: [f64; 3], alpha0: f64) -> Result<CovarianceParams> {
    Ok(CovarianceParams::common(
        sigma.to_vec(),
        PairMatrix::from_upper(3, &delta)?,
        [alpha0, 1.0, 1.0],
        0.1,
        interleave_beta(&[BETA1.to_vec(), BETA2.to_vec(), BETA3.to_vec()]),
    ))
}

/// Two-component `ρ̃` ladder at `n = 80, T = 20`, the two three-component
/// datasets at `n = 55, T = 20` with three hold-out sites, and `-desk`
/// variants at reduced size.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    let mut out = Vec::new();
    let rhos = [("000", 0.0), ("005", 0.05), ("010", 0.10), ("020", 0.20)];
    for (desk, n, t) in [(false, 80, 20), (true, 40, 10)] {
        for (tag, rho) in rhos {
            out.push(ScenarioSpec {
                name: format!("sec5-rho{tag}{}", if desk { "-desk" } else { "" }),
                n,
                t,
                sites: SiteSampler::UnitSquare,
                truth: two_component(rho).expect("built-in truth"),
                covariates: CovariateGenerator::LatLonAltitude,
                holdout: 0,
                seed: 2024,
            });
        }
    }
    let datasets = [
        ("sec6-dataset1", [2.0, -1.0, 2.5], [0.1, 0.2, 0.15], 0.0),
        (
            "sec6-dataset2",
            [2.0, 1.0, 2.5],
            [2.0, 2.2, 1.9],
            alpha0_for_rho(0.18, 1.0).expect("valid rho"),
        ),
    ];
    for (desk, n, t) in [(false, 55, 20), (true, 35, 10)] {
        for (name, sigma, delta, alpha0) in datasets {
            out.push(ScenarioSpec {
                name: format!("{name}{}", if desk { "-desk" } else { "" }),
                n,
                t,
                sites: SiteSampler::UnitSquare,
                truth: three_component(sigma, delta, alpha0).expect("built-in truth"),
                covariates: CovariateGenerator::LatLonAltitude,
                holdout: 3,
                seed: 2024,
            });
        }
    }
    out
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))
}
