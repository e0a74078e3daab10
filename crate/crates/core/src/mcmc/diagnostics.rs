//! Chain summaries: effective sample size, Geweke z-scores and acceptance.

use serde::{Deserialize, Serialize};

use super::{BlockAcceptance, PosteriorChain};
use crate::error::{Error, Result};
use crate::linalg::quantile_sorted;

pub const MIN_DRAWS: usize = 100;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size by Geyer's initial monotone positive sequence.
/// A constant chain has ESS 1.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let m = mean(x);
    let var0 = autocovariance(x, m, 0);
    if !(var0 > 1e-24 * m.abs().max(1.0).powi(2)) {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocovariance(x, m, 2 * k) + autocovariance(x, m, 2 * k + 1)) / var0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        prev = pair;
        sum += pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Spectral density at zero by the initial-sequence autocovariance sum,
/// used as the long-run variance in the Geweke statistic.
fn long_run_variance(x: &[f64]) -> f64 {
    let ess = effective_sample_size(x);
    let n = x.len() as f64;
    let var = autocovariance(x, mean(x), 0);
    var * n / ess
}

/// Geweke z comparing the means of the first 10% and last 50% of draws.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    let a = &x[..(n / 10).max(2)];
    let b = &x[n - (n / 2).max(2)..];
    let va = long_run_variance(a) / a.len() as f64;
    let vb = long_run_variance(b) / b.len() as f64;
    let denom = (va + vb).sqrt();
    if denom > 0.0 {
        (mean(a) - mean(b)) / denom
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
    pub geweke_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub draws: usize,
    pub parameters: Vec<ParameterSummary>,
    pub acceptance: Vec<BlockAcceptance>,
}

pub fn summarize(name: &str, x: &[f64]) -> ParameterSummary {
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0).max(1.0)).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParameterSummary {
        name: name.to_string(),
        mean: m,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        ess: effective_sample_size(x),
        geweke_z: geweke_z(x),
    }
}

/// Per-parameter summaries of a chain with at least [`MIN_DRAWS`] draws.
pub fn diagnostics(chain: &PosteriorChain) -> Result<DiagnosticsReport> {
    if chain.len() < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "diagnostics need at least {MIN_DRAWS} draws, chain has {}",
            chain.len()
        )));
    }
    let names = chain.column_names();
    let rows: Vec<Vec<f64>> = chain.draws.iter().map(|d| d.theta.values()).collect();
    let mut parameters: Vec<ParameterSummary> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            summarize(name, &col)
        })
        .collect();
    let ind: Vec<f64> = chain.draws.iter().map(|d| d.sep_indicator as u8 as f64).collect();
    parameters.push(summarize("sep_indicator", &ind));
    Ok(DiagnosticsReport {
        draws: chain.len(),
        parameters,
        acceptance: chain.acceptance.clone(),
    })
}
