use mvspatial::error::Error;
use mvspatial::kernels::{
    build_cov_matrix, build_separable_cov, cauchy_correlation_matrix, eval_general_cross_cov, separability_measure,
    CovarianceParams, Geometry, PairMatrix, SeparableParams,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn params(sigma: Vec<f64>, delta: Vec<f64>, alphas: [f64; 3], phi: f64) -> CovarianceParams {
    let p = sigma.len();
    let k = p;
    CovarianceParams::common(
        sigma,
        PairMatrix::from_upper(p, &delta).unwrap(),
        alphas,
        phi,
        vec![0.0; k],
    )
}

fn param_strategy() -> impl Strategy<Value = CovarianceParams> {
    (1usize..4).prop_flat_map(|p| {
        (
            prop::collection::vec(prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], p),
            prop::collection::vec(0.0f64..3.0, p * (p - 1) / 2),
            0.0f64..2.0,
            0.2f64..3.0,
            0.2f64..3.0,
            0.05f64..2.0,
        )
            .prop_map(|(s, d, a0, a1, a2, phi)| params(s, d, [a0, a1, a2], phi))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cross_covariance_is_symmetric_in_components(c in param_strategy(), h in 0.0f64..5.0) {
        for i in 0..c.p() {
            for j in 0..c.p() {
                let a = eval_general_cross_cov(i, j, h, &c).unwrap();
                let b = eval_general_cross_cov(j, i, h, &c).unwrap();
                prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn marginal_variance_is_sigma_squared(c in param_strategy()) {
        for i in 0..c.p() {
            let v = eval_general_cross_cov(i, i, 0.0, &c).unwrap();
            prop_assert!((v - c.sigma[i].powi(2)).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn cross_covariance_decays_with_distance(c in param_strategy(), h in 0.0f64..5.0, dh in 0.01f64..1.0) {
        for i in 0..c.p() {
            for j in 0..c.p() {
                let near = eval_general_cross_cov(i, j, h, &c).unwrap().abs();
                let far = eval_general_cross_cov(i, j, h + dh, &c).unwrap().abs();
                prop_assert!(far <= near * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn separability_measure_lies_in_unit_interval(a0 in 0.0f64..50.0, a1 in 0.01f64..10.0, a2 in 0.01f64..10.0) {
        let rho = separability_measure(a0, a1, a2).unwrap();
        prop_assert!((0.0..=1.0).contains(&rho));
        prop_assert_eq!(separability_measure(0.0, a1, a2).unwrap(), 0.0);
    }

    #[test]
    fn covariance_matrices_are_symmetric_and_screened(
        c in param_strategy(),
        sites in prop::collection::vec(prop::array::uniform2(0.0f64..1.0), 2..8),
    ) {
        let geom = Geometry::new(sites).unwrap();
        let cov = build_cov_matrix(&geom, &c).unwrap();
        prop_assert_eq!(&cov.values, &cov.values.transpose());
        match cov.factorize() {
            Ok(_) => {}
            Err(e) => {
                prop_assert!(c.p() > 1, "univariate Cauchy-type matrix rejected: {e}");
                prop_assert!(matches!(e, Error::InvalidParameter(_)), "{e}");
            }
        }
    }

    #[test]
    fn kronecker_form_matches_its_dense_expansion(
        sites in prop::collection::vec(prop::array::uniform2(0.0f64..1.0), 2..6),
        l in prop::collection::vec(-1.0f64..1.0, 6),
        phi in 0.05f64..0.5,
    ) {
        let lower = DMatrix::from_fn(3, 3, |i, j| if j < i { l[i + j] } else if i == j { 1.0 + l[i].abs() } else { 0.0 });
        let a = &lower * lower.transpose();
        let geom = Geometry::new(sites).unwrap();
        let sep = build_separable_cov(&geom, &SeparableParams::new(a.clone(), phi).unwrap()).unwrap();
        let expected = a.kronecker(&cauchy_correlation_matrix(&geom, phi));
        let dense = sep.dense().values;
        prop_assert!((dense - &expected).abs().max() <= 1e-12 * expected.abs().max());
    }
}

#[test]
fn zero_alpha0_is_separable_in_space_and_components() {
    let c = params(vec![1.5, -0.7], vec![0.8], [0.0, 1.0, 1.0], 0.3);
    let r = |h: f64| eval_general_cross_cov(0, 1, h, &c).unwrap() / eval_general_cross_cov(0, 1, 0.0, &c).unwrap();
    let r0 = |h: f64| eval_general_cross_cov(0, 0, h, &c).unwrap() / eval_general_cross_cov(0, 0, 0.0, &c).unwrap();
    for h in [0.05, 0.2, 0.7, 2.0] {
        assert!((r(h) - r0(h)).abs() < 1e-14);
    }
}
