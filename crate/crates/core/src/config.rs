//! Run configuration (TOML). Unknown keys are rejected at every level.
//!
//! ```toml
//! seed = 2024
//! output = "out"
//!
//! [data]
//! scenario = "sec5-rho000-desk"     # or: path = "data.csv"
//!
//! [model]
//! family = "nonseparable-mixture"
//!
//! [prior]
//! alpha0_p0 = 0.5
//!
//! [mcmc]
//! iterations = 20000
//! burn_in = 10000
//! thin = 5
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{sha256_hex, Projection};
use crate::kernels::PairMatrix;
use crate::mcmc::{DecisionConfig, Family, IndependentPriorSpec, McmcConfig, SeparablePriorSpec};
use crate::prediction::PredictiveConfig;
use crate::priors::{Alpha0Prior, BetaPrior, GammaPrior, NormalPrior, PriorSpec, RangePrior, ShapePrior};
use crate::scoring::CpoDensity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub mcmc: McmcBlock,
    #[serde(default)]
    pub prediction: PredictionBlock,
    #[serde(default)]
    pub decision: DecisionBlock,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    /// Directory of the config file; not part of the document.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the config text as read.
    #[serde(skip)]
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Long-format CSV.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Built-in simulation scenario used instead of a file.
    #[serde(default)]
    pub scenario: Option<String>,
    /// Overrides the scenario's own data seed.
    #[serde(default)]
    pub scenario_seed: Option<u64>,
    #[serde(default)]
    pub projection: Projection,
    #[serde(default = "yes")]
    pub standardize: bool,
    /// Sites held out for prediction when reading from a file.
    #[serde(default)]
    pub holdout_sites: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default)]
    pub holdout: Option<usize>,
    #[serde(default)]
    pub scenario_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_family")]
    pub family: Family,
}

fn default_family() -> Family {
    Family::NonseparableMixture
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: default_family(),
        }
    }
}

/// Hyperparameters for every family. Omitted keys take the defaults
/// listed on each field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// `σᵢ ~ N(0, 100)`.
    pub sigma: NormalPrior,
    /// `δᵢⱼ ~ Ga(1, 0.5)`.
    pub delta: GammaPrior,
    /// Point mass at `α₀ = 0` for the mixture family.
    pub alpha0_p0: f64,
    /// Slab `Ga(1, 3)` of the mixture family.
    pub alpha0_slab: GammaPrior,
    /// `α₀ ~ Ga(1, 1)` for the family without the mixture.
    pub alpha0_continuous: GammaPrior,
    /// `fixed = 1.0` or `gamma = { shape, rate }`.
    pub alpha1: ShapePrior,
    pub alpha2: ShapePrior,
    /// Range multiplier `u`: `b ~ Ga(u m, u)` with `m` the median distance.
    pub range_u: f64,
    pub common_range: bool,
    pub beta_mean: f64,
    pub beta_var: f64,
    /// Separable family: `A ~ IW(s I, df)`, df defaulting to `p + 1`.
    pub iw_scale: f64,
    pub iw_df: Option<f64>,
    /// Independent family: `1/σ² ~ Ga(1, 0.25)`, `φ ~ Ga(0.1 m, 0.1)`.
    pub independent_precision: GammaPrior,
    pub independent_range_u: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma: NormalPrior { mean: 0.0, var: 100.0 },
            delta: GammaPrior { shape: 1.0, rate: 0.5 },
            alpha0_p0: 0.5,
            alpha0_slab: GammaPrior { shape: 1.0, rate: 3.0 },
            alpha0_continuous: GammaPrior { shape: 1.0, rate: 1.0 },
            alpha1: ShapePrior::Fixed(1.0),
            alpha2: ShapePrior::Fixed(1.0),
            range_u: 0.75,
            common_range: true,
            beta_mean: 0.0,
            beta_var: 1000.0,
            iw_scale: 1.0,
            iw_df: None,
            independent_precision: GammaPrior { shape: 1.0, rate: 0.25 },
            independent_range_u: 0.1,
        }
    }
}

/// Prior of one family, resolved for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyPrior {
    General(PriorSpec),
    Separable(SeparablePriorSpec),
    Independent(IndependentPriorSpec),
}

impl PriorConfig {
    /// Resolves the prior of `family` for `p` components, `k` coefficients
    /// and median inter-site distance `m`.
    pub fn resolve(&self, family: Family, p: usize, k: usize, m: f64) -> Result<FamilyPrior> {
        let cfg = |e: Error| Error::Config(format!("prior: {e}"));
        if !(m > 0.0) {
            return Err(Error::Data(format!(
                "median inter-site distance must be positive, got {m}"
            )));
        }
        let out = match family {
            Family::Nonseparable | Family::NonseparableMixture => {
                let (p0, slab) = if family == Family::NonseparableMixture {
                    (self.alpha0_p0, self.alpha0_slab)
                } else {
                    (0.0, self.alpha0_continuous)
                };
                let spec = PriorSpec {
                    sigma: vec![self.sigma; p],
                    delta_shape: PairMatrix::off_diagonal(p, self.delta.shape),
                    delta_rate: PairMatrix::off_diagonal(p, self.delta.rate),
                    alpha1: self.alpha1,
                    alpha2: self.alpha2,
                    alpha0: Alpha0Prior { p0, slab },
                    range: RangePrior::uniform(p, self.range_u, m, self.common_range),
                    beta: BetaPrior::isotropic(k, self.beta_mean, self.beta_var).map_err(cfg)?,
                };
                spec.validate().map_err(cfg)?;
                FamilyPrior::General(spec)
            }
            Family::Separable => {
                let spec = SeparablePriorSpec {
                    iw_scale: DMatrix::identity(p, p) * self.iw_scale,
                    iw_df: self.iw_df.unwrap_or(p as f64 + 1.0),
                    range: GammaPrior::new(self.range_u * m, self.range_u).map_err(cfg)?,
                    beta: BetaPrior::isotropic(k, self.beta_mean, self.beta_var).map_err(cfg)?,
                };
                spec.validate().map_err(cfg)?;
                FamilyPrior::Separable(spec)
            }
            Family::Independent => {
                self.independent_precision.validate().map_err(cfg)?;
                let spec = IndependentPriorSpec {
                    precision: self.independent_precision,
                    range: GammaPrior::new(self.independent_range_u * m, self.independent_range_u).map_err(cfg)?,
                    beta_mean: self.beta_mean,
                    beta_var: self.beta_var,
                };
                spec.univariate(1).map_err(cfg)?;
                FamilyPrior::Independent(spec)
            }
        };
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcBlock {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub adapt_batch: usize,
}

impl Default for McmcBlock {
    fn default() -> Self {
        let d = McmcConfig::default();
        McmcBlock {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            target_acceptance: d.target_acceptance,
            adapt_batch: d.adapt_batch,
        }
    }
}

impl McmcBlock {
    pub fn to_config(&self) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            target_acceptance: self.target_acceptance,
            adapt_batch: self.adapt_batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionBlock {
    pub draws_per_theta: usize,
    pub alpha: f64,
    /// Directory holding `chain.csv` and `chain_meta.json`; defaults to the
    /// output directory.
    pub chain_dir: Option<PathBuf>,
}

impl Default for PredictionBlock {
    fn default() -> Self {
        let d = PredictiveConfig::default();
        PredictionBlock {
            draws_per_theta: d.draws_per_theta,
            alpha: d.alpha,
            chain_dir: None,
        }
    }
}

impl PredictionBlock {
    pub fn to_config(&self) -> PredictiveConfig {
        PredictiveConfig {
            draws_per_theta: self.draws_per_theta,
            alpha: self.alpha,
        }
    }
}

/// Losses of the separability decision; `p₀` comes from the prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionBlock {
    pub w0: f64,
    pub w1: f64,
}

impl Default for DecisionBlock {
    fn default() -> Self {
        DecisionBlock { w0: 1.0, w1: 1.0 }
    }
}

impl DecisionBlock {
    pub fn to_config(&self, p0: f64) -> DecisionConfig {
        DecisionConfig {
            w0: self.w0,
            w1: self.w1,
            p0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub families: Vec<Family>,
    pub cpo_density: CpoDensity,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            families: Family::ALL.to_vec(),
            cpo_density: CpoDensity::default(),
        }
    }
}

/// Log-likelihood over a grid of `α₀`. The remaining covariance
/// parameters come from the scenario truth, or from posterior medians of a
/// general-family chain in `chain_dir`; `β` is set to its GLS estimate at
/// each grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default)]
    pub alpha0: Vec<f64>,
    #[serde(default = "default_profile_max")]
    pub max: f64,
    #[serde(default = "default_profile_points")]
    pub points: usize,
    #[serde(default)]
    pub chain_dir: Option<PathBuf>,
}

fn default_profile_max() -> f64 {
    1.0
}

fn default_profile_points() -> usize {
    101
}

impl ProfileConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let grid = if self.alpha0.is_empty() {
            if self.points < 2 || !(self.max > 0.0) {
                return Err(Error::Config("profile needs points >= 2 and max > 0".into()));
            }
            (0..self.points)
                .map(|i| self.max * i as f64 / (self.points - 1) as f64)
                .collect()
        } else {
            self.alpha0.clone()
        };
        if let Some(bad) = grid.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!("profile alpha0 values must be >= 0, got {bad}")));
        }
        Ok(grid)
    }
}

/// Which command a config is validated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Predict,
    TestSeparability,
    Compare,
    Profile,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.sha256 = sha256_hex(text.as_bytes());
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve_path(self.output.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is mandatory (set `seed` or pass --seed)".into()))
    }

    pub fn prior(&self) -> Result<&PriorConfig> {
        self.prior
            .as_ref()
            .ok_or_else(|| Error::Config("missing [prior] block".into()))
    }

    /// Checks the blocks `cmd` needs and that referenced files exist.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        self.seed()?;
        let need_data = !matches!(cmd, Command::Simulate);
        if cmd == Command::Simulate && self.simulate.is_none() {
            return Err(Error::Config("simulate needs a [simulate] block".into()));
        }
        if let Some(s) = &self.simulate {
            crate::simulation::builtin_scenario(&s.scenario).map_err(|e| Error::Config(e.to_string()))?;
        }
        if need_data {
            let data = self
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("missing [data] block".into()))?;
            match (&data.path, &data.scenario) {
                (Some(p), None) => self.require_file(p)?,
                (None, Some(s)) => {
                    crate::simulation::builtin_scenario(s).map_err(|e| Error::Config(e.to_string()))?;
                    if !data.holdout_sites.is_empty() {
                        return Err(Error::Config("holdout_sites applies to file data only".into()));
                    }
                }
                _ => return Err(Error::Config("[data] needs exactly one of `path` or `scenario`".into())),
            }
        }
        if matches!(cmd, Command::Fit | Command::TestSeparability | Command::Compare) {
            self.prior()?;
            self.mcmc.to_config().validate()?;
        }
        if cmd == Command::TestSeparability {
            let p0 = self.prior()?.alpha0_p0;
            if !(p0 > 0.0 && p0 < 1.0) {
                return Err(Error::Config(format!(
                    "the separability test needs 0 < alpha0_p0 < 1, got {p0}"
                )));
            }
            self.decision.to_config(p0).validate()?;
        }
        if matches!(cmd, Command::Predict | Command::Compare) {
            self.prediction.to_config().validate()?;
        }
        if cmd == Command::Compare && self.compare.families.is_empty() {
            return Err(Error::Config("[compare] families is empty".into()));
        }
        if cmd == Command::Profile {
            self.profile
                .as_ref()
                .ok_or_else(|| Error::Config("profile needs a [profile] block".into()))?
                .grid()?;
        }
        Ok(())
    }

    fn require_file(&self, p: &Path) -> Result<()> {
        let full = self.resolve_path(p);
        if !full.is_file() {
            return Err(Error::Config(format!(
                "referenced file {} does not exist",
                full.display()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn fit_without_prior_is_a_config_error() {
        let cfg = parse("seed = 1\n[data]\nscenario = \"sec5-rho000-desk\"\n").unwrap();
        let err = cfg.validate(Command::Fit).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("seed = 1\nbogus = 2\n").is_err());
        assert!(parse("seed = 1\n[prior]\nalpha0_p1 = 0.3\n").is_err());
        assert!(parse("seed = 1\n[mcmc]\niters = 3\n").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = parse("[data]\nscenario = \"sec5-rho000-desk\"\n[prior]\n").unwrap();
        assert!(cfg.validate(Command::Fit).is_err());
    }

    #[test]
    fn full_prior_block_parses() {
        let cfg = parse(
            r#"
seed = 7
[data]
scenario = "sec6-dataset2-desk"
projection = { kind = "planar" }
[model]
family = "separable"
[prior]
sigma = { mean = 0.0, var = 10.0 }
delta = { shape = 2.0, rate = 1.0 }
alpha0_p0 = 0.3
alpha1 = { gamma = { shape = 2.0, rate = 2.0 } }
alpha2 = { fixed = 1.0 }
iw_df = 5.0
[mcmc]
iterations = 200
burn_in = 100
thin = 2
[compare]
families = ["separable", "nonseparable"]
cpo_density = "marginal"
"#,
        )
        .unwrap();
        cfg.validate(Command::Compare).unwrap();
        let prior = cfg.prior().unwrap();
        assert_eq!(prior.alpha1, ShapePrior::Gamma(GammaPrior { shape: 2.0, rate: 2.0 }));
        match prior.resolve(Family::Separable, 3, 12, 0.5).unwrap() {
            FamilyPrior::Separable(s) => assert_eq!(s.iw_df, 5.0),
            other => panic!("{other:?}"),
        }
        match prior.resolve(Family::Nonseparable, 2, 8, 0.5).unwrap() {
            FamilyPrior::General(s) => assert_eq!(s.alpha0.p0, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_data_file_is_reported() {
        let cfg = parse("seed = 1\n[data]\npath = \"/nonexistent/x.csv\"\n[prior]\n").unwrap();
        let msg = cfg.validate(Command::Fit).unwrap_err().to_string();
        assert!(msg.contains("does not exist"), "{msg}");
    }
}
