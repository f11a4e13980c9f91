//! Property tests for the projection algebra and order-statistic helpers.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use topeff_core::{
    build_annihilator, estimate_tie_set, observed_best_indices, select_d0_threshold,
    tie_averages, ProjectionMode,
};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observed_best_matches_argsort_oracle(vals in finite_vec(10)) {
        let beta = DVector::from_vec(vals.clone());
        let idx = observed_best_indices(&beta, 10);
        // Oracle: full stable argsort by descending value.
        let mut oracle: Vec<usize> = (0..10).collect();
        oracle.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(idx, oracle);
    }

    #[test]
    fn tie_set_contains_rank_attainer(vals in finite_vec(6), rank in 0usize..6, b in 0.0f64..5.0) {
        let beta = DVector::from_vec(vals.clone());
        let ts = estimate_tie_set(&beta, rank, b, b);
        prop_assert!(!ts.members.is_empty());
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let pivot = sorted[rank];
        // The attaining index is a member.
        let attainer = (0..6).find(|&k| vals[k] == pivot).unwrap();
        prop_assert!(ts.members.contains(&attainer));
        // All members lie inside the window.
        for &k in &ts.members {
            prop_assert!(vals[k] >= pivot - b - 1e-12 && vals[k] <= pivot + b + 1e-12);
        }
    }

    #[test]
    fn tie_average_is_mean_over_members(vals in finite_vec(5), rank in 0usize..5, b in 0.0f64..2.0) {
        let star = DVector::from_vec(vals.clone());
        let hat = DVector::from_vec(vals.iter().map(|v| v * 0.5).collect());
        let ts = estimate_tie_set(&star, rank, b, b);
        let (avg_star, avg_hat) = tie_averages(&star, &hat, &ts);
        let m = ts.members.len() as f64;
        let expect_star: f64 = ts.members.iter().map(|&k| vals[k]).sum::<f64>() / m;
        prop_assert!((avg_star - expect_star).abs() < 1e-9);
        prop_assert!((avg_hat - 0.5 * expect_star).abs() < 1e-9);
    }

    #[test]
    fn threshold_count_matches_brute_force(vals in finite_vec(8), c in -10.0f64..10.0, c1 in 0.0f64..5.0) {
        let beta = DVector::from_vec(vals.clone());
        let n = 10_000usize;
        let got = select_d0_threshold(&beta, c, c1, n);
        let thr = c + c1 * (n as f64).powf(-0.25);
        let brute = vals.iter().filter(|&&v| v > thr).count();
        prop_assert_eq!(got, brute);
    }

    #[test]
    fn annihilator_diag_bounds(seed in 0u64..1000, n in 6usize..30, q in 0usize..5) {
        use rand::SeedableRng;
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let p = build_annihilator(&w, n, ProjectionMode::Implicit).unwrap();
        let sum: f64 = p.m_diag.iter().sum();
        prop_assert!((sum - (n - p.rank_w) as f64).abs() < 1e-8 * n as f64);
        for &v in p.m_diag.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
