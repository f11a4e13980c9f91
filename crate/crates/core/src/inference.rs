//! Resampling calibration of the top-ranked policy effects.
//!
//! Replicates of the coefficient vector are drawn from a normal centered at
//! the estimate with the sandwich covariance. Each replicate contributes a
//! near-tie-averaged statistic per rank; empirical quantiles of those
//! statistics give the corrected confidence intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceEstimate;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, standard_normal_vector, STREAM_CALIBRATE};
use crate::tuning::TuningPair;

/// Inputs to calibration: the fitted coefficients and their covariance.
#[derive(Debug, Clone)]
pub struct PolicyEstimate {
    pub beta_hat: DVector<f64>,
    pub omega: CovarianceEstimate,
    pub n: usize,
    /// Number of top ranks to report on.
    pub d0: usize,
}

impl PolicyEstimate {
    pub fn d(&self) -> usize {
        self.beta_hat.len()
    }
}

/// Near-tie set around the rank-`rank` resampled value (ranks are 0-based).
#[derive(Debug, Clone)]
pub struct TieSet {
    pub rank: usize,
    /// Sorted policy indices inside the window.
    pub members: Vec<usize>,
    pub window: (f64, f64),
}

/// Per-rank calibration output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    /// 0-based rank.
    pub rank: usize,
    /// 0-based index of the policy attaining this rank in `beta_hat`.
    pub observed_index: usize,
    /// Mean over draws of the tie-averaged original coefficients.
    pub point_estimate_tilde: f64,
    /// Mean over draws of the tie-averaged resampled coefficients.
    pub point_estimate_tilde_star: f64,
    pub ci: (f64, f64),
    /// Fraction of draws in which each policy fell in the tie set.
    pub tie_frequency: Vec<f64>,
    /// Order statistic of `beta_hat` at this rank.
    pub uncalibrated_estimate: f64,
    /// Normal-approximation interval around the order statistic.
    pub uncalibrated_ci: (f64, f64),
    pub tuning: TuningPair,
    /// Sorted resampled statistics, kept for CI inversion (p-values).
    pub draws_sorted: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ranks: Vec<RankReport>,
    pub b_draws: usize,
    pub alpha: f64,
    pub psd_repaired: bool,
    pub seed: u64,
}

/// Indices of the `d0` largest entries, exact ties broken by smallest index.
pub fn observed_best_indices(beta_hat: &DVector<f64>, d0: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beta_hat.len()).collect();
    order.sort_by(|&a, &b| {
        beta_hat[b]
            .partial_cmp(&beta_hat[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(d0);
    order
}

/// Count of order statistics strictly above `C + C1 * n^{-0.25}`.
pub fn select_d0_threshold(beta_hat: &DVector<f64>, c: f64, c1: f64, n: usize) -> usize {
    let thr = c + c1 * (n as f64).powf(-0.25);
    beta_hat.iter().filter(|&&b| b > thr).count()
}

/// Symmetric factor of a PSD matrix, tolerant of semi-definiteness.
///
/// Tries a triangular factorization first and falls back to an eigen
/// square root with negative eigenvalues clipped at zero.
#[derive(Debug, Clone)]
pub struct NormalFactor {
    pub mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl NormalFactor {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Self {
        let factor = match covariance.clone().cholesky() {
            Some(chol) => chol.l(),
            None => {
                let eig = covariance.clone().symmetric_eigen();
                let sqrt = DVector::from_fn(eig.eigenvalues.len(), |i, _| {
                    eig.eigenvalues[i].max(0.0).sqrt()
                });
                &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
            }
        };
        Self { mean, factor }
    }

    pub fn draw<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(rng, self.mean.len());
        &self.mean + &self.factor * z
    }
}

/// One draw from `N(beta_hat, omega / n)`.
pub fn resample_draw<R: rand::Rng>(est: &PolicyEstimate, rng: &mut R) -> DVector<f64> {
    let cov = &est.omega.omega / est.n as f64;
    NormalFactor::new(est.beta_hat.clone(), &cov).draw(rng)
}

/// Members within `[b*_(rank) - b_l, b*_(rank) + b_r]` of the rank-th
/// largest resampled value (0-based rank).
pub fn estimate_tie_set(beta_star: &DVector<f64>, rank: usize, b_l: f64, b_r: f64) -> TieSet {
    let pivot = {
        let mut vals: Vec<f64> = beta_star.iter().cloned().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals[rank]
    };
    let members: Vec<usize> = (0..beta_star.len())
        .filter(|&k| beta_star[k] >= pivot - b_l && beta_star[k] <= pivot + b_r)
        .collect();
    TieSet {
        rank,
        members,
        window: (b_l, b_r),
    }
}

/// Averages of the resampled and original coefficients over the tie set.
pub fn tie_averages(
    beta_star: &DVector<f64>,
    beta_hat: &DVector<f64>,
    ts: &TieSet,
) -> (f64, f64) {
    let m = ts.members.len() as f64;
    let star: f64 = ts.members.iter().map(|&k| beta_star[k]).sum::<f64>() / m;
    let orig: f64 = ts.members.iter().map(|&k| beta_hat[k]).sum::<f64>() / m;
    (star, orig)
}

/// Empirical p-quantile of sorted values: the entry at 1-based index
/// `ceil(p * B)`, clamped into range.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let idx = ((p * b as f64).ceil() as usize).clamp(1, b);
    sorted[idx - 1]
}

/// Convert a tuning pair into realized window widths for rank `rank`.
///
/// `s` is the covariance diagonal at the observed index of the rank.
pub fn realized_window(pair: &TuningPair, s: f64, n: usize) -> (f64, f64) {
    let scale = (n as f64).powf(-pair.delta) * s.max(0.0).powf(pair.delta);
    (pair.c_l * scale, pair.c_r * scale)
}

/// Full calibration: `B` independent resample / tie-set / average pipelines
/// per rank, with quantile confidence intervals.
///
/// Per-draw RNG streams are derived from `(seed, rank, draw index)` so the
/// result does not depend on the parallel schedule.
pub fn calibrate(
    est: &PolicyEstimate,
    tuning: &[TuningPair],
    b_draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<CalibrationReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if tuning.len() < est.d0 {
        return Err(Error::InvalidTuning(format!(
            "need {} tuning pairs, got {}",
            est.d0,
            tuning.len()
        )));
    }
    for pair in &tuning[..est.d0] {
        if pair.c_l < 0.0 || pair.c_r < 0.0 {
            return Err(Error::InvalidTuning("negative window constant".into()));
        }
    }

    let d = est.d();
    let n = est.n;
    let cov = &est.omega.omega / n as f64;
    let factor = NormalFactor::new(est.beta_hat.clone(), &cov);
    let obs = observed_best_indices(&est.beta_hat, est.d0);
    let z_crit = statrs::distribution::ContinuousCDF::inverse_cdf(
        &statrs::distribution::Normal::new(0.0, 1.0).unwrap(),
        1.0 - alpha / 2.0,
    );

    let mut ranks = Vec::with_capacity(est.d0);
    for (jr, (&obs_idx, pair)) in obs.iter().zip(tuning.iter()).enumerate() {
        let s = est.omega.omega[(obs_idx, obs_idx)];
        let (b_l, b_r) = realized_window(pair, s, n);

        let per_draw: Vec<(f64, f64, Vec<usize>)> = (0..b_draws)
            .into_par_iter()
            .map(|r| {
                let mut rng = derive_rng(seed, STREAM_CALIBRATE, jr as u64, r as u64);
                let beta_star = factor.draw(&mut rng);
                let ts = estimate_tie_set(&beta_star, jr, b_l, b_r);
                let (star, orig) = tie_averages(&beta_star, &est.beta_hat, &ts);
                (star, orig, ts.members)
            })
            .collect();

        let mut stars: Vec<f64> = per_draw.iter().map(|t| t.0).collect();
        let mean_star = stars.iter().sum::<f64>() / b_draws as f64;
        let mean_orig = per_draw.iter().map(|t| t.1).sum::<f64>() / b_draws as f64;
        let mut tie_counts = vec![0usize; d];
        for (_, _, members) in &per_draw {
            for &k in members {
                tie_counts[k] += 1;
            }
        }
        stars.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ci = (
            empirical_quantile(&stars, alpha / 2.0),
            empirical_quantile(&stars, 1.0 - alpha / 2.0),
        );

        let beta_order = est.beta_hat[obs_idx];
        let se = (s.max(0.0) / n as f64).sqrt();
        ranks.push(RankReport {
            rank: jr,
            observed_index: obs_idx,
            point_estimate_tilde: mean_orig,
            point_estimate_tilde_star: mean_star,
            ci,
            tie_frequency: tie_counts
                .into_iter()
                .map(|c| c as f64 / b_draws as f64)
                .collect(),
            uncalibrated_estimate: beta_order,
            uncalibrated_ci: (beta_order - z_crit * se, beta_order + z_crit * se),
            tuning: pair.clone(),
            draws_sorted: stars,
        });
    }

    Ok(CalibrationReport {
        ranks,
        b_draws,
        alpha,
        psd_repaired: est.omega.psd_repaired,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::EstimatorKind;
    use crate::tuning::{SelectionMode, TuningPair};

    fn zero_cov(d: usize) -> CovarianceEstimate {
        CovarianceEstimate {
            omega: DMatrix::zeros(d, d),
            estimator: EstimatorKind::Kj,
            psd_repaired: false,
            min_eigenvalue_raw: 0.0,
        }
    }

    fn unit_pair(rank: usize) -> TuningPair {
        TuningPair {
            rank,
            c_l: 1.0,
            c_r: 1.0,
            delta: 0.25,
            loss: 0.0,
            selection_mode: SelectionMode::Minimizer,
            grid_size: 0,
        }
    }

    #[test]
    fn observed_best_indices_sorts_and_breaks_ties() {
        let b = DVector::from_column_slice(&[0.1, 0.9, 0.5]);
        assert_eq!(observed_best_indices(&b, 2), vec![1, 2]);
        let tied = DVector::from_column_slice(&[0.5, 0.5]);
        assert_eq!(observed_best_indices(&tied, 2), vec![0, 1]);
    }

    #[test]
    fn tie_set_window_arithmetic() {
        let b = DVector::from_column_slice(&[1.00, 0.99, 0.50]);
        let ts = estimate_tie_set(&b, 0, 0.02, 0.02);
        assert_eq!(ts.members, vec![0, 1]);

        let distinct = DVector::from_column_slice(&[0.3, 0.7, 0.1]);
        let ts0 = estimate_tie_set(&distinct, 1, 0.0, 0.0);
        assert_eq!(ts0.members, vec![0]);

        let equal = DVector::from_element(4, 2.0);
        let all = estimate_tie_set(&equal, 2, 0.0, 0.0);
        assert_eq!(all.members, vec![0, 1, 2, 3]);
    }

    #[test]
    fn tie_averages_arithmetic() {
        let star = DVector::from_column_slice(&[1.0, 0.9, 0.2]);
        let hat = DVector::from_column_slice(&[0.8, 0.6, 0.1]);
        let ts = TieSet {
            rank: 0,
            members: vec![0, 1],
            window: (0.0, 0.0),
        };
        let (s, h) = tie_averages(&star, &hat, &ts);
        assert!((s - 0.95).abs() < 1e-15);
        assert!((h - 0.70).abs() < 1e-15);
    }

    #[test]
    fn degenerate_covariance_collapses_ci() {
        let beta = DVector::from_column_slice(&[0.4, -0.2, 0.1]);
        let est = PolicyEstimate {
            beta_hat: beta.clone(),
            omega: zero_cov(3),
            n: 50,
            d0: 2,
        };
        let report = calibrate(&est, &[unit_pair(0), unit_pair(1)], 200, 0.05, 9).unwrap();
        // Zero covariance: every draw equals beta_hat; windows are zero too.
        assert_eq!(report.ranks[0].ci, (0.4, 0.4));
        assert!((report.ranks[0].point_estimate_tilde_star - 0.4).abs() < 1e-15);
        assert_eq!(report.ranks[1].ci, (0.1, 0.1));
    }

    #[test]
    fn threshold_rule_counts() {
        let b = DVector::from_column_slice(&[0.9, 0.5, 0.1]);
        assert_eq!(select_d0_threshold(&b, 0.3, 0.0, 100), 2);
        assert_eq!(select_d0_threshold(&b, 2.0, 0.0, 100), 0);
    }

    #[test]
    fn invalid_alpha_rejected() {
        let est = PolicyEstimate {
            beta_hat: DVector::from_column_slice(&[0.0]),
            omega: zero_cov(1),
            n: 10,
            d0: 1,
        };
        assert!(matches!(
            calibrate(&est, &[unit_pair(0)], 100, 1.5, 1),
            Err(Error::InvalidAlpha(_))
        ));
    }
}
