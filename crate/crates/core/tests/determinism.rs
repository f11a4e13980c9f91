//! Seeded pipelines must be byte-identical across runs and worker counts.

use nalgebra::{DMatrix, DVector};

use topeff_core::{
    calibrate, monte_carlo, select_tuning, CovarianceEstimate, DgpSpec, EstimatorKind, Method,
    PolicyEstimate, TuningConfig,
};

fn toy_estimate() -> PolicyEstimate {
    let mut omega = DMatrix::identity(4, 4);
    omega[(0, 1)] = 0.2;
    omega[(1, 0)] = 0.2;
    PolicyEstimate {
        beta_hat: DVector::from_column_slice(&[0.8, 0.5, 0.1, -0.2]),
        omega: CovarianceEstimate {
            omega,
            estimator: EstimatorKind::Kj,
            psd_repaired: false,
            min_eigenvalue_raw: 0.1,
        },
        n: 300,
        d0: 2,
    }
}

fn small_tuning() -> TuningConfig {
    TuningConfig {
        t_outer: 20,
        r_inner: 50,
        grid: 4,
        gamma_draws: 2_000,
        ..Default::default()
    }
}

#[test]
fn calibrate_is_bit_reproducible() {
    let est = toy_estimate();
    let pairs = select_tuning(&est, &small_tuning(), 77).unwrap();
    let a = calibrate(&est, &pairs, 1_000, 0.05, 77).unwrap();
    let b = calibrate(&est, &pairs, 1_000, 0.05, 77).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn select_tuning_is_bit_reproducible_across_pools() {
    let est = toy_estimate();
    let cfg = small_tuning();
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = pool1.install(|| select_tuning(&est, &cfg, 5).unwrap());
    let b = pool4.install(|| select_tuning(&est, &cfg, 5).unwrap());
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn monte_carlo_independent_of_worker_count() {
    let spec = DgpSpec {
        n: 150,
        d: 3,
        q: 4,
        policy_design: topeff_core::PolicyDesign::GaussianAr,
        covariate_design: topeff_core::CovariateDesign::Gaussian,
        beta_mode: topeff_core::BetaMode::Heterogeneity,
        gamma_mode: topeff_core::GammaMode::Reciprocal,
        error_mode: topeff_core::ErrorMode::StandardNormal,
    };
    let cfg = small_tuning();
    let methods = [Method::ProposedKj, Method::NoAdjustKj];
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = pool1
        .install(|| monte_carlo(&spec, &methods, 8, 1, 0.05, 300, &cfg, 123))
        .unwrap();
    let b = pool3
        .install(|| monte_carlo(&spec, &methods, 8, 1, 0.05, 300, &cfg, 123))
        .unwrap();
    assert_eq!(
        serde_json::to_string(&a.rows).unwrap(),
        serde_json::to_string(&b.rows).unwrap()
    );
}
