//! Dataset container, per-component linear mean model, and the Gaussian
//! log-likelihood over independent replicates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{assemble_cov_matrix, build_separable_cov, CovarianceParams, Geometry, SeparableParams};
use crate::linalg::CovSolver;

/// Sites, covariates and a `T × n × p` response array. Missing responses
/// are stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDataset {
    pub site_ids: Vec<String>,
    pub sites: Vec<[f64; 2]>,
    pub covariate_names: Vec<String>,
    /// `n × q`.
    pub covariates: DMatrix<f64>,
    pub component_names: Vec<String>,
    /// One `n × p` matrix per replicate.
    pub responses: Vec<DMatrix<f64>>,
}

impl SpatialDataset {
    pub fn new(
        site_ids: Vec<String>,
        sites: Vec<[f64; 2]>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        component_names: Vec<String>,
        responses: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let data = SpatialDataset {
            site_ids,
            sites,
            covariate_names,
            covariates,
            component_names,
            responses,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.sites.len(), self.component_names.len());
        if n == 0 || p == 0 || self.responses.is_empty() {
            return Err(Error::Data(format!(
                "dataset needs n, p, T >= 1 (got n={n}, p={p}, T={})",
                self.responses.len()
            )));
        }
        if self.site_ids.len() != n {
            return Err(Error::Data("site id count does not match site count".into()));
        }
        if self.covariates.nrows() != n || self.covariates.ncols() != self.covariate_names.len() {
            return Err(Error::Data(format!(
                "covariates are {}x{}, expected {n}x{}",
                self.covariates.nrows(),
                self.covariates.ncols(),
                self.covariate_names.len()
            )));
        }
        if self.covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("covariates must be finite".into()));
        }
        if self.sites.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("site coordinates must be finite".into()));
        }
        for (t, y) in self.responses.iter().enumerate() {
            if y.nrows() != n || y.ncols() != p {
                return Err(Error::Data(format!(
                    "replicate {t} is {}x{}, expected {n}x{p}",
                    y.nrows(),
                    y.ncols()
                )));
            }
            if y.iter().any(|v| v.is_infinite()) {
                return Err(Error::Data(format!("replicate {t} has infinite responses")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn p(&self) -> usize {
        self.component_names.len()
    }

    pub fn t(&self) -> usize {
        self.responses.len()
    }

    pub fn q(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.sites.clone())
    }

    pub fn has_missing(&self) -> bool {
        self.responses.iter().any(|y| y.iter().any(|v| v.is_nan()))
    }

    /// Fails if any response is missing; fitting requires complete data.
    pub fn require_complete(&self) -> Result<()> {
        for (t, y) in self.responses.iter().enumerate() {
            for k in 0..self.n() {
                for i in 0..self.p() {
                    if y[(k, i)].is_nan() {
                        return Err(Error::Data(format!(
                            "missing response at site '{}', replicate {t}, component '{}'",
                            self.site_ids[k], self.component_names[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Replicate `t` stacked component-major: entry `i * n + k`.
    pub fn response_vector(&self, t: usize) -> DVector<f64> {
        let y = &self.responses[t];
        DVector::from_column_slice(y.as_slice())
    }

    /// Subset of sites (in the given order), keeping all replicates.
    pub fn select_sites(&self, idx: &[usize]) -> SpatialDataset {
        let q = self.q();
        SpatialDataset {
            site_ids: idx.iter().map(|&k| self.site_ids[k].clone()).collect(),
            sites: idx.iter().map(|&k| self.sites[k]).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: DMatrix::from_fn(idx.len(), q, |r, c| self.covariates[(idx[r], c)]),
            component_names: self.component_names.clone(),
            responses: self
                .responses
                .iter()
                .map(|y| DMatrix::from_fn(idx.len(), self.p(), |r, c| y[(idx[r], c)]))
                .collect(),
        }
    }

    /// Single-component view.
    pub fn select_component(&self, i: usize) -> SpatialDataset {
        SpatialDataset {
            site_ids: self.site_ids.clone(),
            sites: self.sites.clone(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.clone(),
            component_names: vec![self.component_names[i].clone()],
            responses: self
                .responses
                .iter()
                .map(|y| DMatrix::from_column_slice(y.nrows(), 1, y.column(i).as_slice()))
                .collect(),
        }
    }

    /// Standardizes covariates to mean 0 / sd 1 in place and returns the
    /// transform so it can be replayed on prediction sites.
    pub fn standardize_covariates(&mut self) -> Standardization {
        let s = Standardization::fit(&self.covariates);
        self.covariates = s.apply(&self.covariates);
        s
    }
}

/// Column means and standard deviations used to standardize covariates.
/// Columns with zero spread are only centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = if x.nrows() > 1 {
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            means.push(m);
            sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardization { means, sds }
    }

    pub fn identity(q: usize) -> Self {
        Standardization {
            means: vec![0.0; q],
            sds: vec![1.0; q],
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.means[c]) / self.sds[c])
    }
}

/// Block design giving every component its own intercept and covariate
/// slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanModel {
    /// `np × p(q+1)`.
    pub design: DMatrix<f64>,
    pub beta: DVector<f64>,
}

impl MeanModel {
    pub fn mean(&self) -> DVector<f64> {
        &self.design * &self.beta
    }
}

/// Design for `p` components over sites with covariate rows `x` (`n × q`).
/// Row `i * n + k`, column `c * p + i` holds covariate `c` of site `k`
/// (`c = 0` is the intercept).
pub fn design_matrix(x: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let (n, q) = (x.nrows(), x.ncols());
    let mut d = DMatrix::zeros(n * p, p * (q + 1));
    for i in 0..p {
        for k in 0..n {
            let row = i * n + k;
            d[(row, i)] = 1.0;
            for c in 0..q {
                d[(row, (c + 1) * p + i)] = x[(k, c)];
            }
        }
    }
    d
}

/// Columns that are (numerically) linear combinations of earlier columns.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for c in 0..x.ncols() {
        let col = x.column(c).into_owned();
        let norm = col.norm();
        let mut r = col;
        // Two passes of Gram-Schmidt for stability.
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&r);
                r -= b * proj;
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-10 * norm.max(1.0) {
            bad.push(c);
        } else {
            basis.push(r / rn);
        }
    }
    bad
}

/// Builds the block design with zero coefficients. Fails with the offending
/// columns when the design is rank deficient.
pub fn build_design(data: &SpatialDataset) -> Result<MeanModel> {
    if data.covariates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("covariates must be finite".into()));
    }
    let design = design_matrix(&data.covariates, data.p());
    let bad = dependent_columns(&design);
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let k = design.ncols();
    Ok(MeanModel {
        design,
        beta: DVector::zeros(k),
    })
}

/// Precomputed pieces shared by every likelihood evaluation on one dataset.
#[derive(Clone, Debug)]
pub struct LikelihoodContext {
    pub geometry: Geometry,
    pub design: DMatrix<f64>,
    pub responses: Vec<DVector<f64>>,
    /// `Σₜ yₜ`.
    pub response_sum: DVector<f64>,
    pub p: usize,
}

impl LikelihoodContext {
    pub fn new(data: &SpatialDataset) -> Result<Self> {
        data.require_complete()?;
        let design = build_design(data)?.design;
        let responses: Vec<DVector<f64>> = (0..data.t()).map(|t| data.response_vector(t)).collect();
        let mut response_sum = DVector::zeros(data.n() * data.p());
        for y in &responses {
            response_sum += y;
        }
        Ok(LikelihoodContext {
            geometry: data.geometry()?,
            design,
            responses,
            response_sum,
            p: data.p(),
        })
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    pub fn t(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.n() * self.p
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    pub fn mean(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.design.ncols() {
            return Err(Error::InvalidInput(format!(
                "beta has length {}, design expects {}",
                beta.len(),
                self.design.ncols()
            )));
        }
        Ok(&self.design * DVector::from_column_slice(beta))
    }

    /// Log-likelihood of all replicates under mean `mu` and a factored
    /// covariance.
    pub fn log_likelihood_with<S: CovSolver + ?Sized>(&self, solver: &S, mu: &DVector<f64>) -> f64 {
        let dim = self.dim() as f64;
        let t = self.t() as f64;
        let quad: f64 = self.responses.iter().map(|y| solver.quad_form(&(y - mu))).sum();
        -0.5 * dim * t * (2.0 * PI).ln() - 0.5 * t * solver.log_det() - 0.5 * quad
    }

    pub fn log_likelihood(&self, params: &CovarianceParams) -> Result<f64> {
        params.validate()?;
        if params.p() != self.p {
            return Err(Error::InvalidInput(format!(
                "parameters have p={}, data has p={}",
                params.p(),
                self.p
            )));
        }
        let mu = self.mean(&params.beta)?;
        let factor = assemble_cov_matrix(&self.geometry, params).factorize()?;
        Ok(self.log_likelihood_with(&factor, &mu))
    }

    pub fn log_likelihood_kronecker(&self, sep: &SeparableParams, beta: &[f64]) -> Result<f64> {
        if sep.p() != self.p {
            return Err(Error::InvalidInput(format!(
                "A is {}x{}, data has p={}",
                sep.p(),
                sep.p(),
                self.p
            )));
        }
        let mu = self.mean(beta)?;
        let cov = build_separable_cov(&self.geometry, sep)?;
        Ok(self.log_likelihood_with(&cov, &mu))
    }
}

/// Gaussian log-likelihood of the `T` replicates under the general model,
/// using one Cholesky factorization for all replicates.
pub fn log_likelihood(data: &SpatialDataset, params: &CovarianceParams) -> Result<f64> {
    LikelihoodContext::new(data)?.log_likelihood(params)
}

/// Log-likelihood under the separable Cauchy model `A ⊗ R`, evaluated
/// through the `p × p` and `n × n` factors only.
pub fn log_likelihood_kronecker(data: &SpatialDataset, sep: &SeparableParams, beta: &[f64]) -> Result<f64> {
    LikelihoodContext::new(data)?.log_likelihood_kronecker(sep, beta)
}
