//! Sandwich covariance estimators for the partialled OLS coefficients.
//!
//! All four share the bread `gamma_hat^-1`; they differ in the meat:
//! KJ weights each row by `y * u_acute`, EW by `u^2`, HC3 by `u^2 / m_ii^2`,
//! and HCK reweights squared residuals by the inverse Hadamard square of the
//! annihilator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regression::{AnnihilatorProjection, FitResult, CONDITION_TOL, LEVERAGE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EstimatorKind {
    Kj,
    Hck,
    Ew,
    Hc3,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Kj => "KJ",
            EstimatorKind::Hck => "HCK",
            EstimatorKind::Ew => "EW",
            EstimatorKind::Hc3 => "HC3",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "kj" => Ok(EstimatorKind::Kj),
            "hck" => Ok(EstimatorKind::Hck),
            "ew" => Ok(EstimatorKind::Ew),
            "hc3" => Ok(EstimatorKind::Hc3),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

/// Estimated covariance of `sqrt(n) (beta_hat - beta)`.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub omega: DMatrix<f64>,
    pub estimator: EstimatorKind,
    pub psd_repaired: bool,
    pub min_eigenvalue_raw: f64,
}

fn bread(fit: &FitResult) -> Result<DMatrix<f64>> {
    let chol = fit
        .gamma_hat
        .clone()
        .cholesky()
        .ok_or(Error::SingularDesign)?;
    Ok(chol.inverse())
}

fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigen().eigenvalues.min()
}

fn sandwich(fit: &FitResult, meat: DMatrix<f64>, kind: EstimatorKind) -> Result<CovarianceEstimate> {
    let g_inv = bread(fit)?;
    let raw = &g_inv * meat * &g_inv;
    // Symmetrize; KJ and HCK meats are not symmetric by construction.
    let omega = (&raw + raw.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&omega);
    Ok(CovarianceEstimate {
        omega,
        estimator: kind,
        psd_repaired: false,
        min_eigenvalue_raw: min_eig,
    })
}

/// Row-weighted meat `(1/n) sum_i v_i v_i' * weight_i` over retained rows.
fn weighted_meat(fit: &FitResult, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let d = fit.d();
    let n = fit.n_retained() as f64;
    let mut meat = DMatrix::zeros(d, d);
    for &i in &fit.retained {
        let v = fit.v_hat.row(i);
        let wgt = weights(i);
        for a in 0..d {
            for b in 0..d {
                meat[(a, b)] += v[a] * v[b] * wgt;
            }
        }
    }
    meat / n
}

/// Kline-Jochmans style estimator: meat weight `y_i * u_acute_i`.
pub fn estimate_kj(fit: &FitResult) -> Result<CovarianceEstimate> {
    for &i in &fit.retained {
        if fit.m_diag[i] <= LEVERAGE_TOL {
            return Err(Error::LeverageOne);
        }
    }
    let meat = weighted_meat(fit, |i| fit.y[i] * fit.u_acute[i]);
    sandwich(fit, meat, EstimatorKind::Kj)
}

/// Eicker-White estimator: meat weight `u_i^2`.
pub fn estimate_ew(fit: &FitResult) -> Result<CovarianceEstimate> {
    let meat = weighted_meat(fit, |i| fit.u_hat[i] * fit.u_hat[i]);
    sandwich(fit, meat, EstimatorKind::Ew)
}

/// HC3 estimator: meat weight `u_i^2 / m_ii^2`.
pub fn estimate_hc3(fit: &FitResult) -> Result<CovarianceEstimate> {
    for &i in &fit.retained {
        if fit.m_diag[i] <= LEVERAGE_TOL {
            return Err(Error::LeverageOne);
        }
    }
    let meat = weighted_meat(fit, |i| {
        let r = fit.u_hat[i] / fit.m_diag[i];
        r * r
    });
    sandwich(fit, meat, EstimatorKind::Hc3)
}

/// Cattaneo-Jansson-Newey style estimator: squared residuals reweighted by
/// the inverse Hadamard square of `M`, computed through one linear solve
/// rather than materializing the inverse.
pub fn estimate_hck(fit: &FitResult, proj: &AnnihilatorProjection) -> Result<CovarianceEstimate> {
    let m = proj.dense_m().ok_or(Error::ImplicitModeUnsupported)?;
    let retained = &fit.retained;
    let k = retained.len();

    // (M o M) restricted to retained rows, against the retained u^2.
    let mut had = DMatrix::zeros(k, k);
    for (a, &i) in retained.iter().enumerate() {
        for (b, &j) in retained.iter().enumerate() {
            let mij = m[(i, j)];
            had[(a, b)] = mij * mij;
        }
    }
    let mut usq = DVector::zeros(k);
    for (a, &i) in retained.iter().enumerate() {
        usq[a] = fit.u_hat[i] * fit.u_hat[i];
    }

    let svd_check = had.clone().symmetric_eigen();
    let emax = svd_check.eigenvalues.amax();
    let emin = svd_check.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(emax > 0.0) || emin.abs() < CONDITION_TOL * emax {
        return Err(Error::HadamardSingular);
    }
    let weights = had
        .lu()
        .solve(&usq)
        .ok_or(Error::HadamardSingular)?;

    let mut w_full = vec![0.0; fit.m_diag.len()];
    for (a, &i) in retained.iter().enumerate() {
        w_full[i] = weights[a];
    }
    let meat = weighted_meat(fit, |i| w_full[i]);
    sandwich(fit, meat, EstimatorKind::Hck)
}

/// Clip negative eigenvalues to zero when the raw estimate is indefinite.
///
/// Matrices whose smallest eigenvalue is within `-1e-12 * max` of zero are
/// returned untouched.
pub fn ensure_psd(cov: CovarianceEstimate) -> CovarianceEstimate {
    let eig = cov.omega.clone().symmetric_eigen();
    let emax = eig.eigenvalues.amax();
    let emin = eig.eigenvalues.min();
    if emin >= -1e-12 * emax.max(1.0) {
        return cov;
    }
    let clipped = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(0.0));
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    let omega = (&rebuilt + rebuilt.transpose()) * 0.5;
    CovarianceEstimate {
        omega,
        estimator: cov.estimator,
        psd_repaired: true,
        min_eigenvalue_raw: cov.min_eigenvalue_raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::regression::{build_annihilator, partialled_ols, ProjectionMode};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn kj_hand_example() {
        // x = 1 vector, y = 1..4: beta = 2.5, M = I, meat = (1/4) sum y_i u_i.
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let data = Dataset::new(y, x, DMatrix::zeros(4, 0)).unwrap();
        let proj = build_annihilator(&data.w, 4, ProjectionMode::Dense).unwrap();
        let fit = partialled_ols(&data, &proj).unwrap();
        assert!((fit.beta_hat[0] - 2.5).abs() < 1e-12);
        let kj = estimate_kj(&fit).unwrap();
        assert!((kj.omega[(0, 0)] - 1.25).abs() < 1e-12);
        let ew = estimate_ew(&fit).unwrap();
        assert!((ew.omega[(0, 0)] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_gives_zero_omega() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = 3.0 * x.column(0).clone_owned();
        let data = Dataset::new(y, x, DMatrix::zeros(5, 0)).unwrap();
        let proj = build_annihilator(&data.w, 5, ProjectionMode::Dense).unwrap();
        let fit = partialled_ols(&data, &proj).unwrap();
        for est in [
            estimate_kj(&fit).unwrap(),
            estimate_ew(&fit).unwrap(),
            estimate_hc3(&fit).unwrap(),
            estimate_hck(&fit, &proj).unwrap(),
        ] {
            assert!(est.omega.abs().max() < 1e-18);
        }
    }

    #[test]
    fn ensure_psd_clips_diagonal() {
        let omega = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -0.1]));
        let cov = CovarianceEstimate {
            omega,
            estimator: EstimatorKind::Kj,
            psd_repaired: false,
            min_eigenvalue_raw: -0.1,
        };
        let fixed = ensure_psd(cov);
        assert!(fixed.psd_repaired);
        assert!((fixed.omega[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(fixed.omega[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn ensure_psd_keeps_psd_input() {
        let omega = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 0.5]));
        let cov = CovarianceEstimate {
            omega: omega.clone(),
            estimator: EstimatorKind::Ew,
            psd_repaired: false,
            min_eigenvalue_raw: 0.5,
        };
        let fixed = ensure_psd(cov);
        assert!(!fixed.psd_repaired);
        assert_eq!(fixed.omega, omega);
    }
}
