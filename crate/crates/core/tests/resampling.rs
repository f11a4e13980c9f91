//! Moment and closed-form checks for the resampling calibration.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use topeff_core::tuning::{SelectionMode, TuningPair};
use topeff_core::{
    calibrate, resample_draw, uniform_loss_quantile, CovarianceEstimate, EstimatorKind,
    PolicyEstimate,
};

fn cov(omega: DMatrix<f64>) -> CovarianceEstimate {
    CovarianceEstimate {
        omega,
        estimator: EstimatorKind::Kj,
        psd_repaired: false,
        min_eigenvalue_raw: 0.0,
    }
}

fn zero_window(rank: usize) -> TuningPair {
    TuningPair {
        rank,
        c_l: 0.0,
        c_r: 0.0,
        delta: 0.25,
        loss: 0.0,
        selection_mode: SelectionMode::Minimizer,
        grid_size: 0,
    }
}

#[test]
fn resample_draw_moments_d1() {
    // Omega = 4, n = 4: draws from N(beta, 1).
    let est = PolicyEstimate {
        beta_hat: DVector::from_column_slice(&[1.7]),
        omega: cov(DMatrix::from_element(1, 1, 4.0)),
        n: 4,
        d0: 1,
    };
    let b = 20_000;
    let mut rng = topeff_core::rng::derive_rng(5, 99, 0, 0);
    let draws: Vec<f64> = (0..b).map(|_| resample_draw(&est, &mut rng)[0]).collect();
    let mean = draws.iter().sum::<f64>() / b as f64;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1) as f64;
    assert!((mean - 1.7).abs() < 3.0 / (b as f64).sqrt());
    assert!((var - 1.0).abs() < 0.05);
}

#[test]
fn resample_draw_preserves_correlation() {
    let mut omega = DMatrix::identity(2, 2);
    omega[(0, 1)] = 0.8;
    omega[(1, 0)] = 0.8;
    let est = PolicyEstimate {
        beta_hat: DVector::zeros(2),
        omega: cov(omega),
        n: 1,
        d0: 1,
    };
    let b = 20_000;
    let mut rng = topeff_core::rng::derive_rng(6, 99, 0, 0);
    let draws: Vec<(f64, f64)> = (0..b)
        .map(|_| {
            let v = resample_draw(&est, &mut rng);
            (v[0], v[1])
        })
        .collect();
    let mx = draws.iter().map(|d| d.0).sum::<f64>() / b as f64;
    let my = draws.iter().map(|d| d.1).sum::<f64>() / b as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &draws {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let corr = sxy / (sxx * syy).sqrt();
    assert!((corr - 0.8).abs() < 0.02, "corr = {corr}");
}

#[test]
fn zero_covariance_draw_is_exact() {
    let est = PolicyEstimate {
        beta_hat: DVector::from_column_slice(&[0.3, -0.4]),
        omega: cov(DMatrix::zeros(2, 2)),
        n: 10,
        d0: 1,
    };
    let mut rng = topeff_core::rng::derive_rng(7, 99, 0, 0);
    let draw = resample_draw(&est, &mut rng);
    assert_eq!(draw, est.beta_hat);
}

#[test]
fn d1_calibrated_ci_matches_closed_form_normal() {
    // With d = 1 the tie set is always the singleton, so the calibrated CI
    // is the empirical quantile interval of N(beta, omega / n).
    let beta = 0.6;
    let omega = 2.5;
    let n = 100;
    let alpha = 0.05;
    let b = 20_000usize;
    let est = PolicyEstimate {
        beta_hat: DVector::from_column_slice(&[beta]),
        omega: cov(DMatrix::from_element(1, 1, omega)),
        n,
        d0: 1,
    };
    let report = calibrate(&est, &[zero_window(0)], b, alpha, 31).unwrap();
    let se = (omega / n as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z = normal.inverse_cdf(1.0 - alpha / 2.0);
    let (lo, hi) = report.ranks[0].ci;

    // Empirical-quantile SE at p = alpha/2: sqrt(p(1-p)/B) / phi(z_p) in
    // standardized units.
    let p: f64 = alpha / 2.0;
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let q_se = (p * (1.0 - p) / b as f64).sqrt() / phi * se;
    assert!((lo - (beta - z * se)).abs() < 3.0 * q_se, "lo = {lo}");
    assert!((hi - (beta + z * se)).abs() < 3.0 * q_se, "hi = {hi}");

    // Point estimate near beta.
    assert!((report.ranks[0].point_estimate_tilde_star - beta).abs() < 4.0 * se / (b as f64).sqrt());
}

#[test]
fn singleton_tie_sets_give_conditional_normality() {
    // Distinct coefficients, zero windows: the calibrated draws at rank j
    // are exactly N(beta_jhat, omega_jj / n) samples.
    let beta = DVector::from_column_slice(&[0.9, 0.1, -0.7]);
    let mut omega = DMatrix::identity(3, 3) * 1.5;
    omega[(0, 1)] = 0.3;
    omega[(1, 0)] = 0.3;
    let n = 50;
    let b = 20_000usize;
    let est = PolicyEstimate {
        beta_hat: beta.clone(),
        omega: cov(omega.clone()),
        n,
        d0: 2,
    };
    let report = calibrate(&est, &[zero_window(0), zero_window(1)], b, 0.05, 17).unwrap();
    for (rank, idx) in [(0usize, 0usize), (1, 1)] {
        let rr = &report.ranks[rank];
        assert_eq!(rr.observed_index, idx);
        let target_var = omega[(idx, idx)] / n as f64;
        let draws = &rr.draws_sorted;
        let mean = draws.iter().sum::<f64>() / b as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1) as f64;
        let mean_se = target_var.sqrt() / (b as f64).sqrt();
        let var_se = target_var * (2.0 / (b as f64 - 1.0)).sqrt();
        assert!((mean - beta[idx]).abs() < 4.0 * mean_se, "rank {rank} mean {mean}");
        assert!((var - target_var).abs() < 4.0 * var_se, "rank {rank} var {var}");
        // Well-separated effects keep the observed policy in its tie set
        // essentially always.
        assert!(rr.tie_frequency[idx] > 0.99);
    }
}

#[test]
fn ci_monotone_in_alpha_and_full_window_gives_grand_mean() {
    let beta = DVector::from_column_slice(&[0.5, 0.2, -0.3]);
    let omega = DMatrix::identity(3, 3);
    let est = PolicyEstimate {
        beta_hat: beta.clone(),
        omega: cov(omega),
        n: 40,
        d0: 1,
    };
    let r10 = calibrate(&est, &[zero_window(0)], 2_000, 0.10, 3).unwrap();
    let r05 = calibrate(&est, &[zero_window(0)], 2_000, 0.05, 3).unwrap();
    assert!(r05.ranks[0].ci.1 >= r10.ranks[0].ci.1);
    assert!(r05.ranks[0].ci.0 <= r10.ranks[0].ci.0);

    // Window wide enough to cover every policy: the tie average equals the
    // grand mean of each draw.
    let huge = TuningPair {
        c_l: 1e6,
        c_r: 1e6,
        ..zero_window(0)
    };
    let r = calibrate(&est, &[huge], 500, 0.05, 3).unwrap();
    for &f in &r.ranks[0].tie_frequency {
        assert_eq!(f, 1.0);
    }
}

#[test]
fn uniform_loss_quantile_t1_closed_form() {
    // T = 1: L = (U - 0.5)^2; the 0.975 quantile is (0.4875)^2.
    let g = uniform_loss_quantile(1, 0.975, 100_000, 11);
    assert!((g - 0.4875f64.powi(2)).abs() < 0.005, "g = {g}");
    let g0 = uniform_loss_quantile(1, 0.0, 1_000, 11);
    assert!(g0 >= 0.0);
}

#[test]
fn uniform_loss_quantile_stable_across_seeds() {
    let estimates: Vec<f64> = (0..10)
        .map(|s| uniform_loss_quantile(40, 0.975, 10_000, s))
        .collect();
    let mean = estimates.iter().sum::<f64>() / 10.0;
    let sd = (estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / 9.0).sqrt();
    for e in &estimates {
        assert!((e - mean).abs() < 4.0 * sd.max(1e-5), "e = {e}, mean = {mean}");
    }
}
