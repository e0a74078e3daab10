//! Covariance families: the gamma-mixture nonseparable cross-covariance, the
//! separable and univariate Cauchy kernels, the Monte Carlo mixture oracle,
//! and covariance matrix assembly.
//!
//! Matrices are laid out component-major over sites: the row for component
//! `i` at site `k` is `i * n + k`. With this layout a separable covariance is
//! `A ⊗ R`, with `A` the `p × p` component matrix and `R` the `n × n` spatial
//! correlation matrix.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CovSolver, Factor};

/// Symmetric `p × p` matrix stored as its upper triangle (diagonal included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    p: usize,
    values: Vec<f64>,
}

impl PairMatrix {
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(p * (p + 1) / 2);
        for i in 0..p {
            for j in i..p {
                values.push(f(i, j));
            }
        }
        PairMatrix { p, values }
    }

    pub fn constant(p: usize, value: f64) -> Self {
        Self::from_fn(p, |_, _| value)
    }

    /// Zero diagonal with `off` everywhere else.
    pub fn off_diagonal(p: usize, off: f64) -> Self {
        Self::from_fn(p, |i, j| if i == j { 0.0 } else { off })
    }

    /// Builds a zero-diagonal matrix from the strict upper triangle listed
    /// row by row: `(0,1), (0,2), …, (1,2), …`.
    pub fn from_upper(p: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != p * (p.saturating_sub(1)) / 2 {
            return Err(Error::InvalidInput(format!(
                "expected {} off-diagonal values for p={p}, got {}",
                p * (p.saturating_sub(1)) / 2,
                upper.len()
            )));
        }
        let mut it = upper.iter();
        Ok(Self::from_fn(p, |i, j| {
            if i == j {
                0.0
            } else {
                *it.next().expect("length checked")
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.p - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.offset(i, j);
        self.values[k] = value;
    }

    /// Upper-triangle pairs `(i, j)` with `i < j`.
    pub fn off_diagonal_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in (i + 1)..self.p {
                out.push((i, j));
            }
        }
        out
    }

    /// Upper-triangle pairs including the diagonal.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in i..self.p {
                out.push((i, j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| self.get(i, j))
    }
}

/// Gamma shapes and rates of the latent mixing variables `X₀, X₁, X₂`
/// (with `U = X₀ + X₁`, `V = X₀ + X₂`). A zero shape means the variable is
/// identically zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl MixingSpec {
    pub fn new(alphas: [f64; 3], lambdas: [f64; 3]) -> Result<Self> {
        let spec = MixingSpec {
            alpha0: alphas[0],
            alpha1: alphas[1],
            alpha2: alphas[2],
            lambda0: lambdas[0],
            lambda1: lambdas[1],
            lambda2: lambdas[2],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit rates, as in the reparametrized general model.
    pub fn unit_rates(alpha0: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        Self::new([alpha0, alpha1, alpha2], [1.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [self.alpha0, self.alpha1, self.alpha2];
        let rates = [self.lambda0, self.lambda1, self.lambda2];
        if shapes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixing shapes must be finite and non-negative, got {shapes:?}"
            )));
        }
        if rates.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixing rates must be finite and positive, got {rates:?}"
            )));
        }
        Ok(())
    }
}

/// Parameters of the general nonseparable model: component scales `σ`,
/// latent distances `δ`, the three gamma shapes, ranges `b`, and the
/// regression coefficients `β` (ordered covariate-major: index
/// `c * p + i` for covariate `c`, component `i`, with `c = 0` the intercept).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    pub sigma: Vec<f64>,
    pub delta: PairMatrix,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub b: PairMatrix,
    pub beta: Vec<f64>,
    /// All `b[i][j]` share one range `φ`.
    pub common_range: bool,
}

impl CovarianceParams {
    /// Common-range model with `b[i][j] = phi`.
    pub fn common(sigma: Vec<f64>, delta: PairMatrix, alphas: [f64; 3], phi: f64, beta: Vec<f64>) -> Self {
        let p = sigma.len();
        CovarianceParams {
            sigma,
            delta,
            alpha0: alphas[0],
            alpha1: alphas[1],
            alpha2: alphas[2],
            b: PairMatrix::constant(p, phi),
            beta,
            common_range: true,
        }
    }

    pub fn p(&self) -> usize {
        self.sigma.len()
    }

    /// The shared range when `common_range` is set.
    pub fn phi(&self) -> f64 {
        self.b.get(0, 0)
    }

    pub fn set_phi(&mut self, phi: f64) {
        self.b = PairMatrix::constant(self.p(), phi);
    }

    pub fn mixing(&self) -> MixingSpec {
        MixingSpec {
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lambda0: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        if self.delta.dim() != p || self.b.dim() != p {
            return Err(Error::InvalidParameter(format!(
                "delta/b dimensions ({}, {}) do not match p={p}",
                self.delta.dim(),
                self.b.dim()
            )));
        }
        if self.sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be finite".into()));
        }
        for (i, j) in self.delta.pairs() {
            let d = self.delta.get(i, j);
            if i == j && d != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "delta[{i}][{i}] must be zero, got {d}"
                )));
            }
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "delta[{i}][{j}] must be finite and non-negative, got {d}"
                )));
            }
            let b = self.b.get(i, j);
            if !b.is_finite() || b <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "b[{i}][{j}] must be finite and positive, got {b}"
                )));
            }
        }
        if self.common_range {
            let phi = self.phi();
            if self.b.pairs().iter().any(|&(i, j)| self.b.get(i, j) != phi) {
                return Err(Error::InvalidParameter(
                    "common-range model has unequal b entries".into(),
                ));
            }
        }
        if !self.alpha0.is_finite() || self.alpha0 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha0 must be non-negative, got {}",
                self.alpha0
            )));
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {a}")));
            }
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        Ok(())
    }
}

/// Component covariance matrix `A` and common range `φ` of the separable
/// Cauchy model `a[i][j] (1 + (h/φ)²)⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableParams {
    pub a: DMatrix<f64>,
    pub phi: f64,
}

impl SeparableParams {
    pub fn new(a: DMatrix<f64>, phi: f64) -> Result<Self> {
        let sep = SeparableParams { a, phi };
        sep.validate()?;
        Ok(sep)
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phi.is_finite() || self.phi <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "phi must be positive, got {}",
                self.phi
            )));
        }
        if !self.a.is_square() || self.a.nrows() == 0 {
            return Err(Error::InvalidParameter("A must be square".into()));
        }
        if (&self.a - self.a.transpose()).amax() > 1e-12 * self.a.amax().max(1.0) {
            return Err(Error::InvalidParameter("A must be symmetric".into()));
        }
        if nalgebra::Cholesky::new(self.a.clone()).is_none() {
            return Err(Error::InvalidParameter("A is not positive definite".into()));
        }
        Ok(())
    }
}

/// Site coordinates with their pairwise Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    sites: Vec<[f64; 2]>,
    dist: DMatrix<f64>,
}

impl Geometry {
    pub fn new(sites: Vec<[f64; 2]>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidInput("geometry needs at least one site".into()));
        }
        if sites.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("site coordinates must be finite".into()));
        }
        let n = sites.len();
        let dist = DMatrix::from_fn(n, n, |k, l| distance(sites[k], sites[l]));
        Ok(Geometry { sites, dist })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn distance(&self, k: usize, l: usize) -> f64 {
        self.dist[(k, l)]
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.dist
    }

    /// Distances over all `n(n−1)/2` distinct site pairs.
    pub fn pair_distances(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for k in 0..n {
            for l in (k + 1)..n {
                out.push(self.dist[(k, l)]);
            }
        }
        out
    }

    /// Median distance over distinct site pairs (`None` for a single site).
    pub fn median_distance(&self) -> Option<f64> {
        crate::linalg::median(&self.pair_distances())
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Assembled `np × np` covariance matrix (component-major over sites).
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    pub p: usize,
    pub n: usize,
    pub values: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(p: usize, n: usize, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != n * p || values.ncols() != n * p {
            return Err(Error::InvalidInput(format!(
                "expected a {0}x{0} matrix for n={n}, p={p}",
                n * p
            )));
        }
        Ok(CovMatrix { p, n, values })
    }

    pub fn dim(&self) -> usize {
        self.n * self.p
    }

    pub fn index(&self, component: usize, site: usize) -> usize {
        component * self.n + site
    }

    /// Cholesky factorization under the nugget policy; failure is reported
    /// as [`Error::InvalidParameter`].
    pub fn factorize(&self) -> Result<Factor> {
        Factor::new(&self.values)
    }
}

/// `base^(-a)` for `base ≥ 1`, with the zero and unit exponents exact.
#[inline]
fn pow_neg(base: f64, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else if a == 1.0 {
        1.0 / base
    } else {
        base.powf(-a)
    }
}

#[inline]
fn mixture_kernel(scale: f64, gamma1: f64, gamma2: f64, mix: &MixingSpec) -> f64 {
    scale
        * pow_neg(1.0 + (gamma1 + gamma2) / mix.lambda0, mix.alpha0)
        * pow_neg(1.0 + gamma1 / mix.lambda1, mix.alpha1)
        * pow_neg(1.0 + gamma2 / mix.lambda2, mix.alpha2)
}

fn check_call(i: usize, j: usize, h: f64, params: &CovarianceParams) -> Result<()> {
    let p = params.p();
    if i >= p || j >= p {
        return Err(Error::InvalidInput(format!(
            "component indices ({i}, {j}) out of range for p={p}"
        )));
    }
    if !h.is_finite() || h < 0.0 {
        return Err(Error::InvalidInput(format!(
            "distance must be finite and non-negative, got {h}"
        )));
    }
    let (s, d, b) = (
        params.sigma[i] * params.sigma[j],
        params.delta.get(i, j),
        params.b.get(i, j),
    );
    if !s.is_finite() || !d.is_finite() || !b.is_finite() || d < 0.0 || b <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "non-finite or out-of-support kernel inputs for pair ({i}, {j})"
        )));
    }
    Ok(())
}

/// Gamma-mixture cross-covariance with arbitrary rates: `γ₁ = h / b[i][j]`,
/// `γ₂ = δ[i][j]`, shapes and rates from `mix` (the shapes stored in
/// `params` are ignored).
pub fn eval_gamma_mixture_cov(i: usize, j: usize, h: f64, params: &CovarianceParams, mix: &MixingSpec) -> Result<f64> {
    check_call(i, j, h, params)?;
    mix.validate()?;
    let gamma1 = h / params.b.get(i, j);
    let gamma2 = params.delta.get(i, j);
    Ok(mixture_kernel(params.sigma[i] * params.sigma[j], gamma1, gamma2, mix))
}

/// General model cross-covariance (all rates fixed at one):
/// `σᵢσⱼ (1+δᵢⱼ+h/bᵢⱼ)^(−α₀) (1+h/bᵢⱼ)^(−α₁) (1+δᵢⱼ)^(−α₂)`.
pub fn eval_general_cross_cov(i: usize, j: usize, h: f64, params: &CovarianceParams) -> Result<f64> {
    check_call(i, j, h, params)?;
    let mix = params.mixing();
    mix.validate()?;
    Ok(general_cross_cov_unchecked(i, j, h, params, &mix))
}

#[inline]
fn general_cross_cov_unchecked(i: usize, j: usize, h: f64, params: &CovarianceParams, mix: &MixingSpec) -> f64 {
    mixture_kernel(
        params.sigma[i] * params.sigma[j],
        h / params.b.get(i, j),
        params.delta.get(i, j),
        mix,
    )
}

/// Monte Carlo estimate of the mixture integral `E[exp(−γ₁U − γ₂V)]·σᵢσⱼ`
/// with `U = X₀ + X₁`, `V = X₀ + X₂`. Returns `(estimate, standard error)`.
pub fn mc_mixture_oracle(
    i: usize,
    j: usize,
    h: f64,
    params: &CovarianceParams,
    mix: &MixingSpec,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const MIN_DRAWS: usize = 10_000;
    if n_draws < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "mc_mixture_oracle needs at least {MIN_DRAWS} draws, got {n_draws}"
        )));
    }
    check_call(i, j, h, params)?;
    mix.validate()?;
    let scale = params.sigma[i] * params.sigma[j];
    let gamma1 = h / params.b.get(i, j);
    let gamma2 = params.delta.get(i, j);
    if gamma1 == 0.0 && gamma2 == 0.0 {
        return Ok((scale, 0.0));
    }

    let sampler = |shape: f64, rate: f64| -> Result<Option<Gamma<f64>>> {
        if shape == 0.0 {
            Ok(None)
        } else {
            Gamma::new(shape, 1.0 / rate)
                .map(Some)
                .map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {rate}): {e}")))
        }
    };
    let x0 = sampler(mix.alpha0, mix.lambda0)?;
    let x1 = sampler(mix.alpha1, mix.lambda1)?;
    let x2 = sampler(mix.alpha2, mix.lambda2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |g: &Option<Gamma<f64>>, rng: &mut ChaCha8Rng| g.map_or(0.0, |g| g.sample(rng));

    // Welford accumulation of exp(−γ₁U − γ₂V).
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n_draws {
        let a = draw(&x0, &mut rng);
        let u = a + draw(&x1, &mut rng);
        let v = a + draw(&x2, &mut rng);
        let w = (-gamma1 * u - gamma2 * v).exp();
        let delta = w - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (w - mean);
    }
    let var = m2 / (n_draws - 1) as f64;
    let se = (var / n_draws as f64).sqrt();
    Ok((scale * mean, scale.abs() * se))
}

/// Divides entry `(a, b)` by the geometric mean of the matching diagonal
/// entries, giving a unit-diagonal correlation matrix.
pub fn normalize_to_correlation(c: &CovMatrix) -> Result<CovMatrix> {
    let d = c.values.diagonal();
    if let Some(k) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "diagonal entry {k} is not strictly positive ({})",
            d[k]
        )));
    }
    let inv_sd: DVector<f64> = d.map(|v| 1.0 / v.sqrt());
    let dim = c.dim();
    let mut values = DMatrix::from_fn(dim, dim, |a, b| c.values[(a, b)] * inv_sd[a] * inv_sd[b]);
    for a in 0..dim {
        values[(a, a)] = 1.0;
    }
    CovMatrix::new(c.p, c.n, values)
}

/// Assembles the general-model covariance over `geom`. Entry
/// `(i·n + k, j·n + l)` is the cross-covariance of components `i, j` at
/// distance `‖s_k − s_l‖`. Positive definiteness is checked separately by
/// [`CovMatrix::factorize`].
pub fn build_cov_matrix(geom: &Geometry, params: &CovarianceParams) -> Result<CovMatrix> {
    params.validate()?;
    Ok(assemble_cov_matrix(geom, params))
}

/// [`build_cov_matrix`] without parameter validation.
pub(crate) fn assemble_cov_matrix(geom: &Geometry, params: &CovarianceParams) -> CovMatrix {
    let n = geom.n();
    let p = params.p();
    let dim = n * p;
    let mix = params.mixing();
    let dist = geom.distances();
    let mut values = DMatrix::zeros(dim, dim);
    for i in 0..p {
        for j in i..p {
            for k in 0..n {
                let l_start = if i == j { k } else { 0 };
                for l in l_start..n {
                    let v = general_cross_cov_unchecked(i, j, dist[(k, l)], params, &mix);
                    let (r, c) = (i * n + k, j * n + l);
                    values[(r, c)] = v;
                    values[(c, r)] = v;
                }
            }
        }
    }
    CovMatrix { p, n, values }
}

/// Univariate Cauchy covariance `σ² (1 + (h/φ)²)⁻¹`.
pub fn eval_univariate_cauchy(h: f64, sigma2: f64, phi: f64) -> Result<f64> {
    if !phi.is_finite() || phi <= 0.0 {
        return Err(Error::InvalidInput(format!("phi must be positive, got {phi}")));
    }
    if !h.is_finite() || h < 0.0 {
        return Err(Error::InvalidInput(format!("distance must be non-negative, got {h}")));
    }
    if !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(sigma2 * cauchy_squared_correlation(h, phi))
}

#[inline]
pub(crate) fn cauchy_squared_correlation(h: f64, phi: f64) -> f64 {
    let x = h / phi;
    1.0 / (1.0 + x * x)
}

/// Spatial correlation matrix `R[k][l] = (1 + (h_kl/φ)²)⁻¹`.
pub fn cauchy_correlation_matrix(geom: &Geometry, phi: f64) -> DMatrix<f64> {
    geom.distances().map(|h| cauchy_squared_correlation(h, phi))
}

/// Separable covariance `A ⊗ R` kept in factored form.
#[derive(Clone, Debug)]
pub struct SeparableCov {
    pub a: DMatrix<f64>,
    pub r: DMatrix<f64>,
    a_factor: Factor,
    r_factor: Factor,
}

impl SeparableCov {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// The assembled dense matrix.
    pub fn dense(&self) -> CovMatrix {
        CovMatrix {
            p: self.p(),
            n: self.n(),
            values: crate::linalg::kron(&self.a, &self.r),
        }
    }

    pub fn a_factor(&self) -> &Factor {
        &self.a_factor
    }

    pub fn r_factor(&self) -> &Factor {
        &self.r_factor
    }

    /// `R⁻¹ E A⁻¹` for the `n × p` residual matrix `E`, i.e. `Σ⁻¹ vec(E)`.
    pub fn solve_residual_matrix(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let left = self.r_factor.solve_mat(e);
        self.a_factor.solve_mat(&left.transpose()).transpose()
    }

    fn unvec(&self, b: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n(), self.p(), b.as_slice())
    }
}

impl CovSolver for SeparableCov {
    fn dim(&self) -> usize {
        self.n() * self.p()
    }

    /// `log|A ⊗ R| = n log|A| + p log|R|`.
    fn log_det(&self) -> f64 {
        self.n() as f64 * self.a_factor.log_det() + self.p() as f64 * self.r_factor.log_det()
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.solve_residual_matrix(&self.unvec(b));
        DVector::from_column_slice(x.as_slice())
    }

    fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.solve_vec(&b.column(c).into_owned()));
        }
        out
    }

    fn quad_form(&self, b: &DVector<f64>) -> f64 {
        let e = self.unvec(b);
        (e.component_mul(&self.solve_residual_matrix(&e))).sum()
    }
}

/// Separable Cauchy covariance over `geom` with factor handles for fast
/// solves and log-determinants.
pub fn build_separable_cov(geom: &Geometry, sep: &SeparableParams) -> Result<SeparableCov> {
    sep.validate()?;
    let r = cauchy_correlation_matrix(geom, sep.phi);
    let a_factor = Factor::new(&sep.a)?;
    let r_factor = Factor::new(&r)?;
    Ok(SeparableCov {
        a: sep.a.clone(),
        r,
        a_factor,
        r_factor,
    })
}

/// `ρ̃ = α₀ / √((α₀+α₁)(α₀+α₂))`, the correlation of the mixing pair `(U, V)`.
pub fn separability_measure(alpha0: f64, alpha1: f64, alpha2: f64) -> Result<f64> {
    if !(alpha1 > 0.0) || !(alpha2 > 0.0) || !alpha1.is_finite() || !alpha2.is_finite() {
        return Err(Error::InvalidInput(format!(
            "alpha1 and alpha2 must be positive, got {alpha1}, {alpha2}"
        )));
    }
    if !alpha0.is_finite() || alpha0 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "alpha0 must be non-negative, got {alpha0}"
        )));
    }
    Ok(alpha0 / ((alpha0 + alpha1) * (alpha0 + alpha2)).sqrt())
}

/// Inverse of the separability measure for `α₁ = α₂ = α`: the `α₀` giving
/// `ρ̃ = rho`, i.e. `α₀ = α ρ̃ / (1 − ρ̃)`.
pub fn alpha0_for_rho(rho: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) || !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 <= rho < 1 and alpha > 0, got rho={rho}, alpha={alpha}"
        )));
    }
    Ok(alpha * rho / (1.0 - rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_component(alpha0: f64, delta: f64, b: f64) -> CovarianceParams {
        CovarianceParams::common(
            vec![1.0, 1.0],
            PairMatrix::off_diagonal(2, delta),
            [alpha0, 1.0, 1.0],
            b,
            vec![],
        )
    }

    #[test]
    fn pair_matrix_is_symmetric() {
        let mut m = PairMatrix::constant(3, 1.0);
        m.set(2, 0, 5.0);
        assert_eq!(m.get(0, 2), 5.0);
        let d = PairMatrix::from_upper(3, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.get(1, 0), 1.0);
        assert_eq!(d.get(2, 0), 2.0);
        assert_eq!(d.get(2, 1), 3.0);
        assert_eq!(d.get(1, 1), 0.0);
        assert!(PairMatrix::from_upper(3, &[1.0]).is_err());
    }

    #[test]
    fn zero_lag_variance_is_sigma_squared() {
        let mut params = two_component(0.7, 1.5, 0.3);
        params.sigma = vec![2.5, -1.0];
        let mix = MixingSpec::new([0.7, 2.0, 3.0], [0.5, 2.0, 4.0]).unwrap();
        assert_eq!(eval_gamma_mixture_cov(0, 0, 0.0, &params, &mix).unwrap(), 6.25);
        assert_eq!(eval_general_cross_cov(1, 1, 0.0, &params).unwrap(), 1.0);
    }

    #[test]
    fn mixture_cov_reference_value() {
        let params = two_component(0.25, 1.5, 0.05);
        let mix = MixingSpec::unit_rates(0.25, 1.0, 1.0).unwrap();
        let v = eval_gamma_mixture_cov(0, 1, 0.05, &params, &mix).unwrap();
        let expected = 3.5f64.powf(-0.25) * 0.5 * (1.0 / 2.5);
        assert_relative_eq!(v, expected, epsilon = 1e-15);
        assert!((v - 0.1462).abs() < 5e-5);
    }

    #[test]
    fn alpha0_zero_factorizes_exactly() {
        let params = two_component(0.0, 1.5, 0.2);
        let mix = MixingSpec::unit_rates(0.0, 1.3, 0.8).unwrap();
        let h = 0.37;
        let v = eval_gamma_mixture_cov(0, 1, h, &params, &mix).unwrap();
        let f = (1.0 + h / 0.2f64).powf(-1.3);
        let g = (1.0f64 + 1.5).powf(-0.8);
        assert_eq!(v, f * g);
    }

    #[test]
    fn general_cov_special_cases() {
        let params = two_component(0.3, 0.0, 1.0);
        assert_eq!(eval_general_cross_cov(0, 1, 0.0, &params).unwrap(), 1.0);
        let params = two_component(0.0, 1.5, 1.0);
        assert_relative_eq!(
            eval_general_cross_cov(0, 1, 0.0, &params).unwrap(),
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn general_cov_matches_unit_rate_mixture_for_dataset_two() {
        let params = CovarianceParams::common(
            vec![2.0, 1.0, 2.5],
            PairMatrix::from_upper(3, &[2.0, 2.2, 1.9]).unwrap(),
            [0.22, 1.0, 1.0],
            0.1,
            vec![],
        );
        let mix = MixingSpec::unit_rates(0.22, 1.0, 1.0).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2), (2, 2)] {
            for h in [0.0, 0.03, 0.2, 1.1] {
                let a = eval_general_cross_cov(i, j, h, &params).unwrap();
                let b = eval_gamma_mixture_cov(i, j, h, &params, &mix).unwrap();
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn kernel_rejects_bad_inputs() {
        let params = two_component(0.1, 1.0, 1.0);
        assert!(eval_general_cross_cov(0, 1, -0.1, &params).is_err());
        assert!(eval_general_cross_cov(0, 1, f64::NAN, &params).is_err());
        assert!(eval_general_cross_cov(0, 2, 0.1, &params).is_err());
        let mut bad = params.clone();
        bad.sigma[0] = f64::INFINITY;
        assert!(eval_general_cross_cov(0, 1, 0.1, &bad).is_err());
        assert!(MixingSpec::new([0.1, 1.0, 1.0], [0.0, 1.0, 1.0]).is_err());
        assert!(MixingSpec::new([-0.1, 1.0, 1.0], [1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn oracle_trivial_and_reference_cases() {
        let params = two_component(0.25, 0.0, 0.05);
        let mix = MixingSpec::unit_rates(0.25, 1.0, 1.0).unwrap();
        assert_eq!(
            mc_mixture_oracle(0, 1, 0.0, &params, &mix, 10_000, 1).unwrap(),
            (1.0, 0.0)
        );

        let params = two_component(0.25, 1.5, 0.05);
        let (est, se) = mc_mixture_oracle(0, 1, 0.05, &params, &mix, 1_000_000, 7).unwrap();
        let closed = eval_gamma_mixture_cov(0, 1, 0.05, &params, &mix).unwrap();
        assert!(se > 0.0);
        assert!((est - closed).abs() <= 3.0 * se, "est {est} closed {closed} se {se}");

        // Independence: with X₀ ≡ 0 the estimate targets M₁(−γ₁)·M₂(−γ₂).
        let params = two_component(0.0, 0.8, 0.4);
        let mix = MixingSpec::new([0.0, 1.7, 0.6], [1.0, 2.0, 0.5]).unwrap();
        let h = 0.3;
        let (est, se) = mc_mixture_oracle(0, 1, h, &params, &mix, 200_000, 3).unwrap();
        let m1 = (1.0f64 + (h / 0.4) / 2.0).powf(-1.7);
        let m2 = (1.0f64 + 0.8 / 0.5).powf(-0.6);
        assert!((est - m1 * m2).abs() <= 3.0 * se);

        assert!(mc_mixture_oracle(0, 1, h, &params, &mix, 999, 3).is_err());
    }

    #[test]
    fn oracle_is_deterministic_per_seed() {
        let params = two_component(0.4, 1.0, 0.5);
        let mix = params.mixing();
        let a = mc_mixture_oracle(0, 1, 0.2, &params, &mix, 20_000, 11).unwrap();
        let b = mc_mixture_oracle(0, 1, 0.2, &params, &mix, 20_000, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_examples() {
        let id = CovMatrix::new(1, 2, DMatrix::identity(2, 2)).unwrap();
        assert_eq!(normalize_to_correlation(&id).unwrap(), id);
        let c = CovMatrix::new(1, 2, DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0])).unwrap();
        let r = normalize_to_correlation(&c).unwrap();
        assert_relative_eq!(r.values[(0, 1)], 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(r.values[(0, 0)], 1.0);
        let bad = CovMatrix::new(1, 2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(normalize_to_correlation(&bad).is_err());
    }

    #[test]
    fn build_small_matrices() {
        let geom = Geometry::new(vec![[0.3, 0.4]]).unwrap();
        let params = CovarianceParams::common(vec![1.7], PairMatrix::constant(1, 0.0), [0.2, 1.0, 1.0], 0.5, vec![]);
        let c = build_cov_matrix(&geom, &params).unwrap();
        assert_eq!(c.values, DMatrix::from_element(1, 1, 1.7 * 1.7));

        let geom = Geometry::new(vec![[0.0, 0.0], [0.3, 0.4]]).unwrap();
        let params = CovarianceParams::common(vec![2.0], PairMatrix::constant(1, 0.0), [0.0, 1.0, 1.0], 0.5, vec![]);
        let c = build_cov_matrix(&geom, &params).unwrap();
        assert_relative_eq!(c.values[(0, 1)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn univariate_cauchy_examples() {
        assert_eq!(eval_univariate_cauchy(0.0, 2.0, 0.3).unwrap(), 2.0);
        assert_relative_eq!(eval_univariate_cauchy(0.3, 2.0, 0.3).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval_univariate_cauchy(0.6, 3.0, 0.3).unwrap(), 0.6, epsilon = 1e-15);
        assert!(eval_univariate_cauchy(0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn separability_measure_examples() {
        assert_eq!(separability_measure(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(separability_measure(0.25, 1.0, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert!((separability_measure(0.22, 1.0, 1.0).unwrap() - 0.18).abs() < 0.005);
        assert!(separability_measure(0.2, 0.0, 1.0).is_err());
        assert_relative_eq!(alpha0_for_rho(0.2, 1.0).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn separable_cov_identity_a_is_block_diagonal() {
        let geom = Geometry::new(vec![[0.0, 0.0], [0.5, 0.0], [0.1, 0.9]]).unwrap();
        let sep = SeparableParams::new(DMatrix::identity(2, 2), 0.4).unwrap();
        let cov = build_separable_cov(&geom, &sep).unwrap();
        let dense = cov.dense();
        let r = cauchy_correlation_matrix(&geom, 0.4);
        assert_eq!(dense.values.view((0, 0), (3, 3)), r);
        assert_eq!(dense.values.view((3, 3), (3, 3)), r);
        assert!(dense.values.view((0, 3), (3, 3)).iter().all(|v| *v == 0.0));
        assert!(SeparableParams::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.4).is_err());
    }

    proptest! {
        #[test]
        fn general_cov_is_monotone(
            h in 0.0f64..3.0, dh in 0.0f64..1.0,
            delta in 0.0f64..3.0, dd in 0.0f64..1.0,
            a0 in 0.0f64..3.0, a1 in 0.05f64..3.0, a2 in 0.05f64..3.0,
            b in 0.01f64..2.0,
        ) {
            let mut params = two_component(a0, delta, b);
            params.alpha1 = a1;
            params.alpha2 = a2;
            let base = eval_general_cross_cov(0, 1, h, &params).unwrap();
            prop_assert!(eval_general_cross_cov(0, 1, h + dh, &params).unwrap() <= base);
            params.delta.set(0, 1, delta + dd);
            prop_assert!(eval_general_cross_cov(0, 1, h, &params).unwrap() <= base);
        }

        #[test]
        fn normalization_is_idempotent(
            sites in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
            s1 in 0.2f64..3.0, s2 in -3.0f64..-0.2, delta in 0.0f64..3.0, a0 in 0.0f64..2.0,
        ) {
            let geom = Geometry::new(sites.into_iter().map(|(x, y)| [x, y]).collect()).unwrap();
            let mut params = two_component(a0, delta, 0.3);
            params.sigma = vec![s1, s2];
            let c = build_cov_matrix(&geom, &params).unwrap();
            let once = normalize_to_correlation(&c).unwrap();
            let twice = normalize_to_correlation(&once).unwrap();
            prop_assert!(once.values.diagonal().iter().all(|v| *v == 1.0));
            prop_assert!((&once.values - &twice.values).amax() <= 1e-15);
        }
    }
}
