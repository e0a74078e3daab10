use mvspatial::kernels::{CovarianceParams, PairMatrix};
use mvspatial::mcmc::diagnostics::{diagnostics, effective_sample_size};
use mvspatial::mcmc::{
    run_chain, run_independent_chain, run_separable_chain, Family, IndependentPriorSpec, McmcConfig,
    SeparablePriorSpec, Theta,
};
use mvspatial::model::SpatialDataset;
use mvspatial::priors::{GammaPrior, PriorSpec};
use mvspatial::simulation::{builtin_scenario, simulate_dataset};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn short() -> McmcConfig {
    McmcConfig {
        iterations: 1200,
        burn_in: 600,
        thin: 3,
        ..McmcConfig::default()
    }
}

fn desk_data(name: &str) -> SpatialDataset {
    simulate_dataset(&builtin_scenario(name).unwrap()).unwrap().dataset
}

/// One site and one component: the covariance is `σ²` whatever `α₀` is,
/// so the indicator's posterior equals its prior.
#[test]
fn indicator_frequency_matches_p0_under_flat_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 30;
    let responses = (0..t)
        .map(|_| DMatrix::from_element(1, 1, 1.0 + 0.8 * Distribution::<f64>::sample(&StandardNormal, &mut rng)))
        .collect();
    let data = SpatialDataset::new(
        vec!["a".into()],
        vec![[0.0, 0.0]],
        vec![],
        DMatrix::zeros(1, 0),
        vec!["y".into()],
        responses,
    )
    .unwrap();
    let mut spec = PriorSpec::defaults(1, 1, 1.0).unwrap();
    spec.alpha0.p0 = 0.3;
    spec.alpha0.slab = GammaPrior::new(2.0, 4.0).unwrap();
    let cfg = McmcConfig {
        iterations: 40_000,
        burn_in: 2_000,
        thin: 1,
        ..McmcConfig::default()
    };
    let chain = run_chain(&data, &spec, &cfg, 17).unwrap();
    let ind: Vec<f64> = chain
        .draws
        .iter()
        .map(|d| f64::from(u8::from(d.sep_indicator)))
        .collect();
    let freq = ind.iter().sum::<f64>() / ind.len() as f64;
    let ess = effective_sample_size(&ind);
    let se = (0.3f64 * 0.7 / ess).sqrt();
    assert!((freq - 0.3).abs() < 4.0 * se, "frequency {freq}, ess {ess}");

    let slab: Vec<f64> = chain
        .trace("alpha0")
        .unwrap()
        .into_iter()
        .filter(|a| *a > 0.0)
        .collect();
    let slab_mean = slab.iter().sum::<f64>() / slab.len() as f64;
    assert!((slab_mean - 0.5).abs() < 0.08, "slab mean {slab_mean}");
    assert!(chain.draws.iter().all(|d| d.sep_indicator == (d.theta_alpha0() == 0.0)));
}

trait Alpha0 {
    fn theta_alpha0(&self) -> f64;
}

impl Alpha0 for mvspatial::mcmc::ChainState {
    fn theta_alpha0(&self) -> f64 {
        match &self.theta {
            Theta::General(c) => c.alpha0,
            _ => 0.0,
        }
    }
}

#[test]
fn chains_are_reproducible_from_the_seed() {
    let data = desk_data("sec5-rho010-desk");
    let med = data.geometry().unwrap().median_distance().unwrap();
    let spec = PriorSpec::defaults(2, 8, med).unwrap();
    let a = run_chain(&data, &spec, &short(), 5).unwrap();
    let b = run_chain(&data, &spec, &short(), 5).unwrap();
    let c = run_chain(&data, &spec, &short(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn independent_chain_does_not_depend_on_thread_count() {
    let data = desk_data("sec6-dataset1-desk");
    let med = data.geometry().unwrap().median_distance().unwrap();
    let spec = IndependentPriorSpec::defaults(med).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_independent_chain(&data, &spec, &short(), 8).unwrap())
    };
    let (one, three) = (run(1), run(3));
    assert_eq!(one, three);
    assert_eq!(one.family, Family::Independent);
    assert_eq!(one.column_names().len(), 3 + 3 + 12);
}

#[test]
fn separable_chain_recovers_cross_covariance_sign() {
    // Dataset 1 has σ₂ = −1, so A₁₂ and A₂₃ are negative.
    let data = desk_data("sec6-dataset1-desk");
    let med = data.geometry().unwrap().median_distance().unwrap();
    let spec = SeparablePriorSpec::defaults(3, 12, med).unwrap();
    let chain = run_separable_chain(&data, &spec, &short(), 2).unwrap();
    let a12 = chain.trace("a_1_2").unwrap();
    let mean = a12.iter().sum::<f64>() / a12.len() as f64;
    assert!(mean < 0.0, "posterior mean of A12 is {mean}");
    assert!(chain.draws.iter().all(|d| d.sep_indicator));
}

#[test]
fn posterior_intervals_cover_the_truth_at_desk_scale() {
    let sim = simulate_dataset(&builtin_scenario("sec5-rho020-desk").unwrap()).unwrap();
    let med = sim.dataset.geometry().unwrap().median_distance().unwrap();
    let spec = PriorSpec::defaults(2, 8, med).unwrap();
    let cfg = McmcConfig {
        iterations: 6000,
        burn_in: 3000,
        thin: 3,
        ..McmcConfig::default()
    };
    let chain = run_chain(&sim.dataset, &spec, &cfg, 21).unwrap();
    let report = diagnostics(&chain).unwrap();
    let truth: &CovarianceParams = &sim.truth;
    for (name, value) in [
        ("sigma_1", truth.sigma[0]),
        ("sigma_2", truth.sigma[1]),
        ("delta_1_2", truth.delta.get(0, 1)),
        ("phi", truth.phi()),
    ] {
        let s = report.parameters.iter().find(|s| s.name == name).unwrap();
        assert!(
            s.q025 <= value && value <= s.q975,
            "{name}: {value} not in [{}, {}]",
            s.q025,
            s.q975
        );
    }
}

#[test]
fn chain_respects_fixed_shapes_and_sign_convention() {
    let data = desk_data("sec5-rho000-desk");
    let med = data.geometry().unwrap().median_distance().unwrap();
    let mut spec = PriorSpec::defaults(2, 8, med).unwrap();
    spec.delta_shape = PairMatrix::off_diagonal(2, 2.0);
    let chain = run_chain(&data, &spec, &short(), 1).unwrap();
    for d in &chain.draws {
        let Theta::General(c) = &d.theta else {
            panic!("general family")
        };
        assert_eq!((c.alpha1, c.alpha2), (1.0, 1.0));
        assert!(c.sigma[0] > 0.0);
        assert!(d.log_post.is_finite());
    }
}
