//! Dense Cholesky factorization with a fixed nugget ladder, Kronecker
//! products, and the solver abstraction shared by the dense and separable
//! likelihood paths.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative nugget levels tried in order. The nugget added is
/// `level * mean(diag)`; a matrix that fails all three is invalid.
pub const NUGGET_LADDER: [f64; 3] = [0.0, 1e-8, 1e-6];

/// Cholesky factor of a covariance matrix together with the nugget that was
/// needed to obtain it.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    nugget: f64,
    log_det: f64,
}

impl Factor {
    /// Factorizes `m`, escalating through [`NUGGET_LADDER`].
    pub fn new(m: &DMatrix<f64>) -> Result<Factor> {
        let dim = m.nrows();
        if dim == 0 || dim != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "cannot factorize a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "covariance matrix has non-finite entries".into(),
            ));
        }
        let mean_diag = m.diagonal().mean();
        if mean_diag <= 0.0 {
            return Err(Error::InvalidParameter(
                "covariance matrix has non-positive mean variance".into(),
            ));
        }
        for level in NUGGET_LADDER {
            let nugget = level * mean_diag;
            let mut work = m.clone();
            if nugget > 0.0 {
                for i in 0..dim {
                    work[(i, i)] += nugget;
                }
            }
            if let Some(chol) = Cholesky::new(work) {
                let l = chol.l_dirty();
                let log_det = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
                if log_det.is_finite() {
                    return Ok(Factor { chol, nugget, log_det });
                }
            }
        }
        Err(Error::InvalidParameter(format!(
            "covariance matrix ({dim}x{dim}) is not positive definite after nugget {:e}",
            NUGGET_LADDER[NUGGET_LADDER.len() - 1]
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Absolute nugget added to the diagonal (zero when none was needed).
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ + nugget·I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `bᵀ Σ⁻¹ b` through a single triangular solve.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let mut w = b.clone();
        forward_substitute(l, &mut w);
        w.norm_squared()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `L z`, used to draw from `N(0, Σ)`.
    pub fn mul_l(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// In-place forward substitution against the lower triangle of `l`
/// (the strict upper triangle is ignored).
fn forward_substitute(l: &DMatrix<f64>, w: &mut DVector<f64>) {
    let n = w.len();
    for i in 0..n {
        let mut acc = w[i];
        for j in 0..i {
            acc -= l[(i, j)] * w[j];
        }
        w[i] = acc / l[(i, i)];
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Solves and log-determinants against a covariance matrix, either dense or
/// Kronecker-structured.
pub trait CovSolver {
    fn dim(&self) -> usize;
    fn log_det(&self) -> f64;
    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64>;
    fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64>;

    fn quad_form(&self, b: &DVector<f64>) -> f64 {
        b.dot(&self.solve_vec(b))
    }
}

impl CovSolver for Factor {
    fn dim(&self) -> usize {
        Factor::dim(self)
    }

    fn log_det(&self) -> f64 {
        self.log_det
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve(b)
    }

    fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        Factor::solve_mat(self, b)
    }

    fn quad_form(&self, b: &DVector<f64>) -> f64 {
        Factor::quad_form(self, b)
    }
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Median of a slice (average of the two central values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
