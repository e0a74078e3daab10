//! Samplers for the separable `A ⊗ R` family and the independent univariate
//! family.
//!
//! Under an inverse-Wishart prior `A ~ IW(Ψ, ν)` the component covariance
//! has the conjugate full conditional `IW(Ψ + Σₜ EₜᵀR⁻¹Eₜ, ν + nT)`, where
//! `Eₜ` is the `n × p` residual matrix of replicate `t`. The range `φ` is
//! updated by a log-scale random walk and `β` by its Gaussian full
//! conditional through the Kronecker solver.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::general::draw_beta;
use super::{Adapter, BlockAcceptance, ChainState, Family, McmcConfig, PosteriorChain, Theta};
use crate::error::{Error, Result};
use crate::kernels::{build_separable_cov, SeparableCov, SeparableParams};
use crate::linalg::{symmetrize, Factor};
use crate::model::{LikelihoodContext, SpatialDataset};
use crate::priors::{BetaPrior, GammaPrior};

#[derive(Clone, Debug, PartialEq)]
pub struct SeparablePriorSpec {
    /// Inverse-Wishart scale `Ψ`.
    pub iw_scale: DMatrix<f64>,
    pub iw_df: f64,
    pub range: GammaPrior,
    pub beta: BetaPrior,
}

impl SeparablePriorSpec {
    /// `A ~ IW(I, p + 1)`, `φ ~ Ga(0.75 m, 0.75)`, `β ~ N(0, 1000 I)`.
    pub fn defaults(p: usize, n_coefficients: usize, median_distance: f64) -> Result<Self> {
        let spec = SeparablePriorSpec {
            iw_scale: DMatrix::identity(p, p),
            iw_df: p as f64 + 1.0,
            range: GammaPrior::new(0.75 * median_distance, 0.75)?,
            beta: BetaPrior::isotropic(n_coefficients, 0.0, 1000.0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn p(&self) -> usize {
        self.iw_scale.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if !self.iw_scale.is_square() || Factor::new(&self.iw_scale).is_err() {
            return Err(Error::InvalidInput(
                "inverse-Wishart scale must be square and PD".into(),
            ));
        }
        if !(self.iw_df > p as f64 - 1.0) {
            return Err(Error::InvalidInput(format!(
                "inverse-Wishart degrees of freedom must exceed p - 1 = {}, got {}",
                p - 1,
                self.iw_df
            )));
        }
        self.range.validate()
    }

    pub fn log_prior(&self, params: &SeparableParams, beta: &[f64]) -> f64 {
        let Ok(a) = Factor::new(&params.a) else {
            return f64::NEG_INFINITY;
        };
        inverse_wishart_ln_pdf(&params.a, &a, &self.iw_scale, self.iw_df)
            + self.range.ln_pdf(params.phi)
            + self.beta.ln_pdf(beta)
    }
}

/// Priors for `p` independent univariate Cauchy fits: precision
/// `1/σ²ᵢ ~ Ga(a, b)`, range `φᵢ ~ Ga(u m, u)`, and per-component
/// coefficients `N(m_β, v_β I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentPriorSpec {
    pub precision: GammaPrior,
    pub range: GammaPrior,
    pub beta_mean: f64,
    pub beta_var: f64,
}

impl IndependentPriorSpec {
    /// `1/σ² ~ Ga(1, 0.25)`, `φ ~ Ga(0.1 m, 0.1)`, `β ~ N(0, 1000)`.
    pub fn defaults(median_distance: f64) -> Result<Self> {
        Ok(IndependentPriorSpec {
            precision: GammaPrior::new(1.0, 0.25)?,
            range: GammaPrior::new(0.1 * median_distance, 0.1)?,
            beta_mean: 0.0,
            beta_var: 1000.0,
        })
    }

    /// The equivalent `p = 1` separable prior: `Ga(a, b)` on `1/σ²` is
    /// `IW(2b, 2a)` on `σ²`.
    pub fn univariate(&self, n_coefficients: usize) -> Result<SeparablePriorSpec> {
        self.precision.validate()?;
        Ok(SeparablePriorSpec {
            iw_scale: DMatrix::from_element(1, 1, 2.0 * self.precision.rate),
            iw_df: 2.0 * self.precision.shape,
            range: self.range,
            beta: BetaPrior::isotropic(n_coefficients, self.beta_mean, self.beta_var)?,
        })
    }
}

fn ln_multigamma(p: usize, x: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln() + (0..p).map(|j| ln_gamma(x - j as f64 / 2.0)).sum::<f64>()
}

/// `ln IW(A | Ψ, ν)` given a factorization of `A`.
pub fn inverse_wishart_ln_pdf(a: &DMatrix<f64>, a_factor: &Factor, scale: &DMatrix<f64>, df: f64) -> f64 {
    let p = a.nrows();
    let pf = p as f64;
    let Ok(psi) = Factor::new(scale) else {
        return f64::NEG_INFINITY;
    };
    let trace = (scale * a_factor.inverse()).trace();
    0.5 * df * psi.log_det()
        - 0.5 * df * pf * 2f64.ln()
        - ln_multigamma(p, df / 2.0)
        - 0.5 * (df + pf + 1.0) * a_factor.log_det()
        - 0.5 * trace
}

/// Draws `A ~ IW(Ψ, ν)` as the inverse of a Bartlett-decomposition draw
/// from `Wishart(ν, Ψ⁻¹)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, df: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    let scale_inv = Factor::new(scale)?.inverse();
    let l = Cholesky::new(scale_inv)
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is not PD".into()))?
        .l();
    let mut b = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi =
            ChiSquared::new(df - i as f64).map_err(|e| Error::InvalidInput(format!("inverse-Wishart df: {e}")))?;
        b[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            b[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let lb = l * b;
    // W = (LB)(LB)ᵀ, so W⁻¹ = (LB)⁻ᵀ(LB)⁻¹.
    let lb_inv = lb
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular Wishart draw".into()))?;
    let mut a = lb_inv.transpose() * lb_inv;
    symmetrize(&mut a);
    Ok(a)
}

fn residual_matrices(ctx: &LikelihoodContext, mean: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let n = ctx.n();
    ctx.responses
        .iter()
        .map(|y| DMatrix::from_column_slice(n, ctx.p, (y - mean).as_slice()))
        .collect()
}

struct SepState {
    params: SeparableParams,
    beta: DVector<f64>,
    mean: DVector<f64>,
    cov: SeparableCov,
    log_lik: f64,
}

impl SepState {
    fn new(ctx: &LikelihoodContext, params: SeparableParams, beta: DVector<f64>) -> Result<Self> {
        let cov = build_separable_cov(&ctx.geometry, &params)?;
        let mean = &ctx.design * &beta;
        let log_lik = ctx.log_likelihood_with(&cov, &mean);
        Ok(SepState {
            params,
            beta,
            mean,
            cov,
            log_lik,
        })
    }

    fn refresh(&mut self, ctx: &LikelihoodContext) -> Result<()> {
        self.cov = build_separable_cov(&ctx.geometry, &self.params)?;
        self.log_lik = ctx.log_likelihood_with(&self.cov, &self.mean);
        Ok(())
    }
}

fn initial_state(ctx: &LikelihoodContext, spec: &SeparablePriorSpec) -> Result<SepState> {
    let x = &ctx.design;
    let ybar = &ctx.response_sum / ctx.t() as f64;
    let beta = Cholesky::new(x.transpose() * x)
        .ok_or_else(|| Error::Numerical("design cross-product is singular".into()))?
        .solve(&(x.transpose() * &ybar));
    let mean = x * &beta;
    let p = ctx.p;
    let mut a = DMatrix::zeros(p, p);
    for e in residual_matrices(ctx, &mean) {
        a += e.transpose() * &e;
    }
    a /= (ctx.n() * ctx.t()) as f64;
    for i in 0..p {
        a[(i, i)] = a[(i, i)].max(1e-6) * (1.0 + 1e-3);
    }
    let med = ctx.geometry.median_distance().unwrap_or(1.0);
    let params = SeparableParams::new(a, spec.range.mean().min(med) / 3.0)?;
    SepState::new(ctx, params, beta)
}

/// Runs one chain of the separable model.
pub fn run_separable_chain(
    data: &SpatialDataset,
    spec: &SeparablePriorSpec,
    config: &McmcConfig,
    seed: u64,
) -> Result<PosteriorChain> {
    let ctx = LikelihoodContext::new(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_separable_with_rng(&ctx, spec, config, seed, &mut rng)
}

fn run_separable_with_rng(
    ctx: &LikelihoodContext,
    spec: &SeparablePriorSpec,
    config: &McmcConfig,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorChain> {
    config.validate()?;
    spec.validate()?;
    if spec.p() != ctx.p {
        return Err(Error::InvalidInput(format!(
            "prior is for p={}, data has p={}",
            spec.p(),
            ctx.p
        )));
    }
    let mut state = initial_state(ctx, spec)?;
    let lp0 = spec.log_prior(&state.params, state.beta.as_slice());
    if !lp0.is_finite() {
        return Err(Error::Numerical(
            "non-finite log-prior at initialization in block 'A/phi'".into(),
        ));
    }
    let mut adapter = Adapter::new(vec![("phi".into(), "range".into(), 0.3)], config.target_acceptance);
    let post_df = spec.iw_df + (ctx.n() * ctx.t()) as f64;
    let mut draws = Vec::with_capacity(config.retained());

    for it in 0..config.iterations {
        let burning = it < config.burn_in;

        let beta = draw_beta(ctx, &state.cov, &spec.beta, rng)?;
        state.mean = &ctx.design * &beta;
        state.beta = beta;

        let mut scatter = spec.iw_scale.clone();
        for e in residual_matrices(ctx, &state.mean) {
            scatter += e.transpose() * state.cov.r_factor().solve_mat(&e);
        }
        symmetrize(&mut scatter);
        state.params.a = sample_inverse_wishart(&scatter, post_df, rng)?;
        state.refresh(ctx)?;

        let step = adapter.scale(0) * rng.sample::<f64, _>(StandardNormal);
        let phi_new = state.params.phi * step.exp();
        let proposal = SeparableParams {
            a: state.params.a.clone(),
            phi: phi_new,
        };
        let mut accepted = false;
        if let Ok(cov) = build_separable_cov(&ctx.geometry, &proposal) {
            let ll = ctx.log_likelihood_with(&cov, &state.mean);
            let log_ratio =
                ll - state.log_lik + spec.range.ln_pdf(phi_new) - spec.range.ln_pdf(state.params.phi) + step;
            if log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
                state.params = proposal;
                state.cov = cov;
                state.log_lik = ll;
                accepted = true;
            }
        }
        adapter.record(0, accepted, burning);
        if burning && (it + 1) % config.adapt_batch == 0 {
            adapter.end_batch();
        }

        if config.keep(it) {
            draws.push(ChainState {
                theta: Theta::Separable {
                    params: state.params.clone(),
                    beta: state.beta.as_slice().to_vec(),
                },
                sep_indicator: true,
                log_post: state.log_lik + spec.log_prior(&state.params, state.beta.as_slice()),
                iteration: it,
            });
        }
    }
    let mut acceptance = adapter.block_acceptance();
    let post = (config.iterations - config.burn_in) as u64;
    acceptance.push(BlockAcceptance {
        block: "a".into(),
        proposals: post,
        accepted: post,
    });
    acceptance.push(BlockAcceptance {
        block: "beta".into(),
        proposals: post,
        accepted: post,
    });
    Ok(PosteriorChain {
        family: Family::Separable,
        draws,
        acceptance,
        proposal_scales: adapter.scales(),
        seed,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
    })
}

/// Fits each component by its own univariate Cauchy model and merges the
/// chains draw by draw. Component `i` uses stream `i` of the seeded
/// generator, so results do not depend on thread scheduling.
pub fn run_independent_chain(
    data: &SpatialDataset,
    spec: &IndependentPriorSpec,
    config: &McmcConfig,
    seed: u64,
) -> Result<PosteriorChain> {
    config.validate()?;
    let p = data.p();
    let q1 = data.q() + 1;
    let uni = spec.univariate(q1)?;
    let chains: Vec<PosteriorChain> = (0..p)
        .into_par_iter()
        .map(|i| {
            let ctx = LikelihoodContext::new(&data.select_component(i))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            run_separable_with_rng(&ctx, &uni, config, seed, &mut rng)
        })
        .collect::<Result<_>>()?;

    let len = chains[0].len();
    let mut draws = Vec::with_capacity(len);
    for d in 0..len {
        let mut variances = vec![0.0; p];
        let mut phis = vec![0.0; p];
        let mut beta = vec![0.0; p * q1];
        let mut log_post = 0.0;
        for (i, chain) in chains.iter().enumerate() {
            let state = &chain.draws[d];
            let Theta::Separable { params, beta: b } = &state.theta else {
                unreachable!("univariate fits are separable");
            };
            variances[i] = params.a[(0, 0)];
            phis[i] = params.phi;
            for (c, v) in b.iter().enumerate() {
                beta[c * p + i] = *v;
            }
            log_post += state.log_post;
        }
        draws.push(ChainState {
            theta: Theta::Independent { variances, phis, beta },
            sep_indicator: true,
            log_post,
            iteration: chains[0].draws[d].iteration,
        });
    }
    let mut acceptance = Vec::new();
    let mut proposal_scales = Vec::new();
    for (i, chain) in chains.iter().enumerate() {
        for b in &chain.acceptance {
            acceptance.push(BlockAcceptance {
                block: format!("{}_{}", b.block, i + 1),
                ..b.clone()
            });
        }
        for (name, s) in &chain.proposal_scales {
            proposal_scales.push((format!("{name}_{}", i + 1), *s));
        }
    }
    Ok(PosteriorChain {
        family: Family::Independent,
        draws,
        acceptance,
        proposal_scales,
        seed,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_wishart_sample_mean() {
        let psi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 8.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..k {
            acc += sample_inverse_wishart(&psi, df, &mut rng).unwrap();
        }
        acc /= k as f64;
        let expected = &psi / (df - 3.0);
        assert_relative_eq!(acc, expected, epsilon = 0.01);
    }

    #[test]
    fn inverse_wishart_pdf_univariate_is_inverse_gamma() {
        // IW(ψ, ν) with p = 1 is InvGamma(ν/2, ψ/2).
        let (psi, nu, x) = (0.5, 2.0, 0.8);
        let a = DMatrix::from_element(1, 1, x);
        let f = Factor::new(&a).unwrap();
        let got = inverse_wishart_ln_pdf(&a, &f, &DMatrix::from_element(1, 1, psi), nu);
        let (shape, scale) = (nu / 2.0, psi / 2.0);
        let want = shape * f64::ln(scale) - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn precision_prior_maps_to_inverse_wishart() {
        let spec = IndependentPriorSpec::defaults(0.5).unwrap();
        let uni = spec.univariate(4).unwrap();
        assert_eq!(uni.iw_scale[(0, 0)], 0.5);
        assert_eq!(uni.iw_df, 2.0);
    }
}
