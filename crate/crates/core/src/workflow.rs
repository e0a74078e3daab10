//! Commands tying data, fitting, prediction and scoring together. Every
//! command is a pure function of its config and seed; artifacts go to the
//! output directory and a JSON summary is returned.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, FamilyPrior, PriorConfig, RunConfig};
use crate::error::{Error, Result};
use crate::io::{
    format_number, ingest_csv, read_chain_csv, read_json, write_chain_csv, write_dataset, write_json,
    write_predictions_csv, write_table, ChainMetadata, IngestMode, Projection, Stamp,
};
use crate::kernels::{separability_measure, CovarianceParams};
use crate::linalg::{median, Factor, NUGGET_LADDER};
use crate::mcmc::diagnostics::diagnostics;
use crate::mcmc::{
    bayes_factor, posterior_sep_probability, run_chain, run_independent_chain, run_separable_chain, Family,
    PosteriorChain, Theta,
};
use crate::model::{LikelihoodContext, SpatialDataset, Standardization};
use crate::prediction::{predictive_mixture, PredictionTask, PredictiveSummary};
use crate::scoring::{score_model, ScoreReport};
use crate::simulation::{builtin_scenario, simulate_dataset};

/// Seed of an independent stream `stream` derived from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("[mvspatial] {}", msg.as_ref());
    }
}

/// Data as used by every command after ingestion.
#[derive(Clone, Debug)]
pub struct LoadedData {
    /// All sites, covariates standardized if requested.
    pub dataset: SpatialDataset,
    /// Sites held out for prediction.
    pub holdout: Vec<usize>,
    /// Sites used for fitting: not held out and fully observed.
    pub training: Vec<usize>,
    pub truth: Option<CovarianceParams>,
    pub projection: Projection,
    pub standardization: Standardization,
    pub source: String,
}

impl LoadedData {
    pub fn training_data(&self) -> SpatialDataset {
        self.dataset.select_sites(&self.training)
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let data_cfg = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("missing [data] block".into()))?;
    let (mut dataset, holdout, truth, projection, source) = match (&data_cfg.path, &data_cfg.scenario) {
        (Some(path), None) => {
            let full = cfg.resolve_path(path);
            let (d, proj) = ingest_csv(&full, IngestMode::Prediction, data_cfg.projection)?;
            let holdout = data_cfg
                .holdout_sites
                .iter()
                .map(|id| {
                    d.site_ids
                        .iter()
                        .position(|s| s == id)
                        .ok_or_else(|| Error::Data(format!("hold-out site '{id}' is not in the data")))
                })
                .collect::<Result<Vec<_>>>()?;
            (d, holdout, None, proj, full.display().to_string())
        }
        (None, Some(name)) => {
            let mut spec = builtin_scenario(name).map_err(|e| Error::Config(e.to_string()))?;
            spec.seed = data_cfg.scenario_seed.unwrap_or(cfg.seed()?);
            let sim = simulate_dataset(&spec)?;
            (
                sim.dataset,
                sim.holdout,
                Some(sim.truth),
                Projection::Planar,
                format!("scenario:{name}"),
            )
        }
        _ => return Err(Error::Config("[data] needs exactly one of `path` or `scenario`".into())),
    };
    let standardization = if data_cfg.standardize {
        dataset.standardize_covariates()
    } else {
        Standardization::identity(dataset.q())
    };
    let n = dataset.n();
    let training: Vec<usize> = (0..n)
        .filter(|k| !holdout.contains(k))
        .filter(|&k| dataset.responses.iter().all(|y| y.row(k).iter().all(|v| v.is_finite())))
        .collect();
    if training.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 fully observed training sites, found {}",
            training.len()
        )));
    }
    Ok(LoadedData {
        dataset,
        holdout,
        training,
        truth,
        projection,
        standardization,
        source,
    })
}

/// Fits `family` to `data` with the configured prior.
pub fn fit_family(
    family: Family,
    prior: &PriorConfig,
    data: &SpatialDataset,
    mcmc: &crate::mcmc::McmcConfig,
    seed: u64,
) -> Result<PosteriorChain> {
    data.require_complete()?;
    let med = data
        .geometry()?
        .median_distance()
        .ok_or_else(|| Error::Data("need at least two sites".into()))?;
    let k = (data.q() + 1) * data.p();
    match prior.resolve(family, data.p(), k, med)? {
        FamilyPrior::General(spec) => run_chain(data, &spec, mcmc, seed),
        FamilyPrior::Separable(spec) => run_separable_chain(data, &spec, mcmc, seed),
        FamilyPrior::Independent(spec) => run_independent_chain(data, &spec, mcmc, seed),
    }
}

fn stamp(cfg: &RunConfig) -> Result<Stamp> {
    Ok(Stamp {
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed()?,
    })
}

fn chain_metadata(cfg: &RunConfig, loaded: &LoadedData, chain: &PosteriorChain) -> Result<ChainMetadata> {
    let training = loaded.training_data();
    Ok(ChainMetadata {
        family: chain.family,
        p: training.p(),
        component_names: training.component_names.clone(),
        covariate_names: training.covariate_names.clone(),
        config_sha256: cfg.sha256.clone(),
        seed: chain.seed,
        iterations: chain.iterations,
        burn_in: chain.burn_in,
        thin: chain.thin,
        draws: chain.len(),
        acceptance: chain.acceptance.clone(),
        acceptance_rates: chain.acceptance.iter().map(|a| (a.block.clone(), a.rate())).collect(),
        proposal_scales: chain.proposal_scales.clone(),
        median_distance: training.geometry()?.median_distance().unwrap_or(f64::NAN),
        nugget_levels: NUGGET_LADDER.to_vec(),
        projection: loaded.projection,
        standardization: loaded.standardization.clone(),
        extra: BTreeMap::from([
            ("source".to_string(), json!(loaded.source)),
            ("training_sites".to_string(), json!(training.site_ids)),
        ]),
    })
}

fn write_chain_artifacts(cfg: &RunConfig, loaded: &LoadedData, chain: &PosteriorChain, dir: &Path) -> Result<Value> {
    let st = stamp(cfg)?;
    let chain_path = dir.join("chain.csv");
    let meta_path = dir.join("chain_meta.json");
    write_chain_csv(&chain_path, chain, Some(&st))?;
    write_json(&meta_path, &chain_metadata(cfg, loaded, chain)?)?;
    let diag = match diagnostics(chain) {
        Ok(d) => serde_json::to_value(d)?,
        Err(e) => json!({ "skipped": e.to_string() }),
    };
    write_json(&dir.join("diagnostics.json"), &diag)?;
    Ok(json!({
        "chain": chain_path,
        "metadata": meta_path,
        "draws": chain.len(),
        "acceptance": chain.acceptance.iter().map(|a| (a.block.clone(), a.rate())).collect::<BTreeMap<_, _>>(),
    }))
}

/// Generates the `[simulate]` scenario and writes `data.csv` and
/// `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::Simulate)?;
    let sim_cfg = cfg.simulate.as_ref().expect("validated");
    let mut spec = builtin_scenario(&sim_cfg.scenario).map_err(|e| Error::Config(e.to_string()))?;
    spec.seed = sim_cfg.scenario_seed.unwrap_or(cfg.seed()?);
    if let Some(n) = sim_cfg.n {
        spec.n = n;
    }
    if let Some(t) = sim_cfg.t {
        spec.t = t;
    }
    if let Some(h) = sim_cfg.holdout {
        spec.holdout = h;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    log(
        verbose,
        format!("simulating {} (n={}, T={})", spec.name, spec.n, spec.t),
    );
    let sim = simulate_dataset(&spec)?;
    let out = cfg.output_dir();
    let data_path = out.join("data.csv");
    write_dataset(&data_path, &sim.dataset, Some(&stamp(cfg)?))?;
    let holdout_ids: Vec<&String> = sim.holdout.iter().map(|&k| &sim.dataset.site_ids[k]).collect();
    let truth = json!({
        "scenario": spec.name,
        "scenario_seed": spec.seed,
        "config_sha256": cfg.sha256,
        "n": spec.n,
        "t": spec.t,
        "p": spec.p(),
        "rho_tilde": separability_measure(sim.truth.alpha0, sim.truth.alpha1, sim.truth.alpha2)?,
        "truth": sim.truth,
        "holdout_sites": holdout_ids,
    });
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &truth)?;
    Ok(json!({ "command": "simulate", "data": data_path, "truth": truth_path, "holdout_sites": holdout_ids }))
}

/// Fits `[model] family` on the training sites and writes the chain,
/// its metadata and diagnostics.
pub fn cmd_fit(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::Fit)?;
    let loaded = load_data(cfg)?;
    let family = cfg.model.family;
    let training = loaded.training_data();
    log(
        verbose,
        format!(
            "fitting {family} on {} sites, {} replicates",
            training.n(),
            training.t()
        ),
    );
    let chain = fit_family(family, cfg.prior()?, &training, &cfg.mcmc.to_config(), cfg.seed()?)?;
    let mut summary = write_chain_artifacts(cfg, &loaded, &chain, &cfg.output_dir())?;
    summary["command"] = json!("fit");
    summary["family"] = json!(family);
    Ok(summary)
}

/// Conditional-prediction task for the configured data: the hold-out sites
/// if any, otherwise the missing cells.
pub fn prediction_task(loaded: &LoadedData) -> Result<PredictionTask> {
    if !loaded.holdout.is_empty() {
        let mut keep = loaded.training.clone();
        keep.extend(&loaded.holdout);
        keep.sort_unstable();
        let sub = loaded.dataset.select_sites(&keep);
        let held: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|(_, k)| loaded.holdout.contains(k))
            .map(|(i, _)| i)
            .collect();
        PredictionTask::holdout(&sub, &held)
    } else if loaded.dataset.has_missing() {
        PredictionTask::from_missing(&loaded.dataset)
    } else {
        Err(Error::Data(
            "nothing to predict: no hold-out sites and no missing values".into(),
        ))
    }
}

fn prediction_report(summary: &PredictiveSummary) -> Value {
    let scored: Vec<(f64, f64, f64, f64)> = summary
        .targets
        .iter()
        .filter_map(|t| t.truth.map(|x| (x, t.lower, t.upper, t.mean)))
        .collect();
    let mut v = json!({
        "targets": summary.targets.len(),
        "thetas_used": summary.thetas_used,
        "thetas_skipped": summary.thetas_skipped,
    });
    if !scored.is_empty() {
        let m = scored.len() as f64;
        let alpha = summary.config.alpha;
        let cover = scored.iter().filter(|(x, l, u, _)| x >= l && x <= u).count() as f64 / m;
        let is = scored
            .iter()
            .map(|(x, l, u, _)| crate::scoring::interval_score(*l, *u, *x, alpha).unwrap_or(f64::NAN))
            .sum::<f64>()
            / m;
        let rmse = (scored.iter().map(|(x, _, _, mu)| (x - mu).powi(2)).sum::<f64>() / m).sqrt();
        v["coverage"] = json!(cover);
        v["average_interval_score"] = json!(is);
        v["rmse"] = json!(rmse);
    }
    v
}

/// Predicts from the chain in `[prediction] chain_dir` (default: the
/// output directory) and writes `predictions.csv`.
pub fn cmd_predict(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::Predict)?;
    let loaded = load_data(cfg)?;
    let chain_dir = cfg
        .prediction
        .chain_dir
        .as_ref()
        .map(|p| cfg.resolve_path(p))
        .unwrap_or_else(|| cfg.output_dir());
    let meta: ChainMetadata = read_json(&chain_dir.join("chain_meta.json"))?;
    if meta.component_names != loaded.dataset.component_names {
        return Err(Error::Data(format!(
            "chain components {:?} do not match data components {:?}",
            meta.component_names, loaded.dataset.component_names
        )));
    }
    if meta.standardization != loaded.standardization {
        return Err(Error::Data(
            "covariate standardization differs from the one used for fitting".into(),
        ));
    }
    let chain = read_chain_csv(&chain_dir.join("chain.csv"), &meta)?;
    let task = prediction_task(&loaded)?;
    log(
        verbose,
        format!(
            "predicting {} targets from {} draws",
            task.unobserved.len() * task.t(),
            chain.len()
        ),
    );
    let summary = predictive_mixture(&chain, &task, &cfg.prediction.to_config(), cfg.seed()?)?;
    let path = cfg.output_dir().join("predictions.csv");
    write_predictions_csv(&path, &summary, Some(&stamp(cfg)?))?;
    let mut report = prediction_report(&summary);
    report["command"] = json!("predict");
    report["predictions"] = json!(path);
    Ok(report)
}

/// Fits the mixture family and reports `p̃₀`, the Bayes factor, the
/// decision and the evidence category.
pub fn cmd_test_separability(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::TestSeparability)?;
    let loaded = load_data(cfg)?;
    let prior = cfg.prior()?;
    let training = loaded.training_data();
    log(verbose, format!("fitting the mixture model on {} sites", training.n()));
    let chain = fit_family(
        Family::NonseparableMixture,
        prior,
        &training,
        &cfg.mcmc.to_config(),
        cfg.seed()?,
    )?;
    let out = cfg.output_dir();
    let artifacts = write_chain_artifacts(cfg, &loaded, &chain, &out)?;
    let p0 = prior.alpha0_p0;
    let p_tilde = posterior_sep_probability(&chain)?;
    let bf = bayes_factor(p_tilde, p0)?;
    let dcfg = cfg.decision.to_config(p0);
    let decision = crate::mcmc::separability_decision(p_tilde, &dcfg)?;
    let report = json!({
        "command": "test-separability",
        "config_sha256": cfg.sha256,
        "seed": cfg.seed()?,
        "p_tilde": p_tilde,
        "p0": p0,
        "bayes_factor": bf.value,
        "bayes_factor_overwhelming": bf.overwhelming,
        "threshold": dcfg.threshold(),
        "reject_separability": decision.reject_h0,
        "evidence": decision.evidence.label(),
        "draws": chain.len(),
        "artifacts": artifacts,
    });
    write_json(&out.join("separability.json"), &report)?;
    Ok(report)
}

/// Per-family result of a comparison run.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyComparison {
    pub family: Family,
    pub seed: u64,
    pub score: ScoreReport,
    pub coverage: Option<f64>,
    pub draws: usize,
    #[serde(skip)]
    pub summary: PredictiveSummary,
    #[serde(skip)]
    pub chain: PosteriorChain,
}

/// Fits every family on the same training sites, predicts the same
/// hold-out targets and scores them. Family `j` in [`Family::ALL`] order
/// uses seed stream `j + 1` of the master seed.
pub fn compare_families(
    cfg: &RunConfig,
    loaded: &LoadedData,
    families: &[Family],
    verbose: bool,
) -> Result<Vec<FamilyComparison>> {
    if loaded.holdout.is_empty() {
        return Err(Error::Data("comparison needs hold-out sites".into()));
    }
    let prior = cfg.prior()?;
    let master = cfg.seed()?;
    let training = loaded.training_data();
    let ctx = LikelihoodContext::new(&training)?;
    let task = prediction_task(loaded)?;
    let mcmc = cfg.mcmc.to_config();
    let pcfg = cfg.prediction.to_config();
    let kind = cfg.compare.cpo_density;
    families
        .par_iter()
        .map(|&family| {
            let stream = Family::ALL.iter().position(|f| *f == family).unwrap() as u64 + 1;
            let seed = derive_seed(master, stream);
            log(verbose, format!("fitting {family} (seed {seed})"));
            let chain = fit_family(family, prior, &training, &mcmc, seed)?;
            let summary = predictive_mixture(&chain, &task, &pcfg, derive_seed(seed, 1))?;
            let mut score = score_model(family.as_str(), &chain, &ctx, &summary, kind)?;
            if family == Family::NonseparableMixture {
                score.p_tilde = Some(posterior_sep_probability(&chain)?);
            }
            let coverage = prediction_report(&summary)["coverage"].as_f64();
            Ok(FamilyComparison {
                family,
                seed,
                score,
                coverage,
                draws: chain.len(),
                summary,
                chain,
            })
        })
        .collect()
}

/// 1-based ranks, best first; ties share the better rank.
fn ranks(values: &[f64], higher_is_better: bool) -> Vec<usize> {
    values
        .iter()
        .map(|v| {
            1 + values
                .iter()
                .filter(|w| if higher_is_better { *w > v } else { *w < v })
                .count()
        })
        .collect()
}

/// Runs [`compare_families`] on the configured families and writes a
/// table with average interval score and LPML per family.
pub fn cmd_compare(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::Compare)?;
    let loaded = load_data(cfg)?;
    let results = compare_families(cfg, &loaded, &cfg.compare.families, verbose)?;
    let out = cfg.output_dir();
    let st = stamp(cfg)?;
    let is: Vec<f64> = results.iter().map(|r| r.score.average_is).collect();
    let lp: Vec<f64> = results.iter().map(|r| r.score.lpml).collect();
    let (is_rank, lp_rank) = (ranks(&is, false), ranks(&lp, true));
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(j, r)| {
            vec![
                r.family.to_string(),
                format_number(r.score.average_is),
                is_rank[j].to_string(),
                format_number(r.score.lpml),
                lp_rank[j].to_string(),
                r.score.n_scored.to_string(),
                r.coverage.map(format_number).unwrap_or_else(|| "NA".into()),
                r.score.p_tilde.map(format_number).unwrap_or_else(|| "NA".into()),
                r.draws.to_string(),
                r.score.skipped_draws.to_string(),
            ]
        })
        .collect();
    let table = out.join("compare.csv");
    write_table(
        &table,
        &[
            "family",
            "average_is",
            "is_rank",
            "lpml",
            "lpml_rank",
            "n_scored",
            "coverage",
            "p_tilde",
            "draws",
            "skipped_draws",
        ],
        &rows,
        Some(&st),
    )?;
    for r in &results {
        write_predictions_csv(
            &out.join(format!("predictions_{}.csv", r.family)),
            &r.summary,
            Some(&st),
        )?;
    }
    let holdout_ids: Vec<&String> = loaded.holdout.iter().map(|&k| &loaded.dataset.site_ids[k]).collect();
    let report = json!({
        "command": "compare",
        "config_sha256": cfg.sha256,
        "seed": cfg.seed()?,
        "holdout_sites": holdout_ids,
        "cpo_density": cfg.compare.cpo_density,
        "families": results.iter().enumerate().map(|(j, r)| json!({
            "family": r.family,
            "seed": r.seed,
            "average_is": r.score.average_is,
            "is_rank": is_rank[j],
            "lpml": r.score.lpml,
            "lpml_rank": lp_rank[j],
            "n_scored": r.score.n_scored,
            "coverage": r.coverage,
            "p_tilde": r.score.p_tilde,
            "unstable_cpo": r.score.unstable_cpo,
            "skipped_draws": r.score.skipped_draws,
        })).collect::<Vec<_>>(),
        "table": table,
    });
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}

/// Log-likelihood at `params` with `β` replaced by its GLS estimate.
pub fn profile_log_likelihood(ctx: &LikelihoodContext, params: &CovarianceParams) -> Result<f64> {
    let cov = Theta::General(params.clone()).covariance(&ctx.geometry)?;
    let factor = Factor::new(&cov.values)?;
    let x = &ctx.design;
    let sx: DMatrix<f64> = factor.solve_mat(x);
    let mut xtsx = x.transpose() * &sx * ctx.t() as f64;
    crate::linalg::symmetrize(&mut xtsx);
    let rhs: DVector<f64> = sx.transpose() * &ctx.response_sum;
    let beta = Factor::new(&xtsx)?.solve(&rhs);
    let mu = x * &beta;
    Ok(ctx.log_likelihood_with(&factor, &mu))
}

/// Writes `profile.csv`: log-likelihood over the `α₀` grid with the other
/// covariance parameters held at the scenario truth or at posterior
/// medians.
pub fn cmd_profile(cfg: &RunConfig, verbose: bool) -> Result<Value> {
    cfg.validate(Command::Profile)?;
    let pcfg = cfg.profile.as_ref().expect("validated");
    let loaded = load_data(cfg)?;
    let training = loaded.training_data();
    let ctx = LikelihoodContext::new(&training)?;
    let base = match (&pcfg.chain_dir, &loaded.truth) {
        (Some(dir), _) => {
            let dir = cfg.resolve_path(dir);
            let meta: ChainMetadata = read_json(&dir.join("chain_meta.json"))?;
            let chain = read_chain_csv(&dir.join("chain.csv"), &meta)?;
            posterior_median_params(&chain)?
        }
        (None, Some(truth)) => truth.clone(),
        (None, None) => {
            return Err(Error::Config(
                "profile needs scenario data (truth) or [profile] chain_dir".into(),
            ))
        }
    };
    let grid = pcfg.grid()?;
    log(verbose, format!("profiling {} alpha0 values", grid.len()));
    let rows: Vec<Vec<String>> = grid
        .par_iter()
        .map(|&a0| {
            let mut params = base.clone();
            params.alpha0 = a0;
            let ll = profile_log_likelihood(&ctx, &params).unwrap_or(f64::NAN);
            let rho = separability_measure(a0, params.alpha1, params.alpha2).unwrap_or(f64::NAN);
            vec![format_number(a0), format_number(rho), format_number(ll)]
        })
        .collect();
    let path = cfg.output_dir().join("profile.csv");
    write_table(&path, &["alpha0", "rho_tilde", "log_lik"], &rows, Some(&stamp(cfg)?))?;
    Ok(json!({ "command": "profile", "profile": path, "points": rows.len() }))
}

/// Coordinate-wise posterior medians of a general-family chain.
pub fn posterior_median_params(chain: &PosteriorChain) -> Result<CovarianceParams> {
    if !matches!(chain.family, Family::Nonseparable | Family::NonseparableMixture) {
        return Err(Error::Config(format!(
            "profiling needs a general-family chain, got {}",
            chain.family
        )));
    }
    let names = chain.column_names();
    let medians: Vec<f64> = (0..names.len())
        .map(|j| median(&chain.draws.iter().map(|d| d.theta.values()[j]).collect::<Vec<_>>()).unwrap_or(f64::NAN))
        .collect();
    match Theta::from_values(chain.family, chain.draws[0].theta.p(), &names, &medians)? {
        Theta::General(c) => Ok(c),
        _ => unreachable!("general family"),
    }
}

/// Output paths that a command writes, for documentation and tests.
pub fn artifact_paths(out: &Path, cmd: Command) -> Vec<PathBuf> {
    let names: &[&str] = match cmd {
        Command::Simulate => &["data.csv", "truth.json"],
        Command::Fit => &["chain.csv", "chain_meta.json", "diagnostics.json"],
        Command::Predict => &["predictions.csv"],
        Command::TestSeparability => &["chain.csv", "chain_meta.json", "separability.json"],
        Command::Compare => &["compare.csv", "compare.json"],
        Command::Profile => &["profile.csv"],
    };
    names.iter().map(|n| out.join(n)).collect()
}
