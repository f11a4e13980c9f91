//! Covariate annihilator and partialled least squares.
//!
//! The annihilator projects onto the orthogonal complement of the covariate
//! column space. Regressing the projected outcome on the projected policies
//! recovers the policy block of the full OLS fit (Frisch-Waugh-Lovell).

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Relative pivot threshold for dropping collinear covariate columns.
pub const COLLINEARITY_TOL: f64 = 1e-10;
/// Rows with annihilator diagonal at or below this are dropped.
pub const LEVERAGE_TOL: f64 = 1e-10;
/// Relative singular-value threshold for declaring the design singular.
pub const CONDITION_TOL: f64 = 1e-12;
/// Dense annihilators are refused above this sample size.
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    Dense,
    Implicit,
}

/// Projection onto the orthogonal complement of the covariate span.
///
/// Always stores an orthonormal basis `Q` of the retained covariate columns;
/// `Dense` mode additionally materializes `M = I - QQ'`.
#[derive(Debug, Clone)]
pub struct AnnihilatorProjection {
    basis: DMatrix<f64>,
    dense: Option<DMatrix<f64>>,
    pub m_diag: DVector<f64>,
    pub rank_w: usize,
    /// Covariate column indices removed as collinear (earliest kept).
    pub dropped_cols: Vec<usize>,
}

impl AnnihilatorProjection {
    pub fn n(&self) -> usize {
        self.m_diag.len()
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    /// Dense `M`, when materialized.
    pub fn dense_m(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref()
    }

    /// `M v = v - Q (Q'v)`.
    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank_w == 0 {
            return v.clone();
        }
        let coeffs = self.basis.transpose() * v;
        v - &self.basis * coeffs
    }

    /// Apply `M` to every column of `a`.
    pub fn apply_mat(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank_w == 0 {
            return a.clone();
        }
        let coeffs = self.basis.transpose() * a;
        a - &self.basis * coeffs
    }
}

/// Build the annihilator of `w`.
///
/// Collinear columns are dropped deterministically (earliest columns kept)
/// at relative threshold [`COLLINEARITY_TOL`]. The stated `n` is taken from
/// the row count of `w` itself when `q > 0`; for `q = 0` pass `n` explicitly.
pub fn build_annihilator(w: &DMatrix<f64>, n: usize, mode: ProjectionMode) -> Result<AnnihilatorProjection> {
    if w.ncols() > 0 && w.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "w has {} rows, expected {}",
            w.nrows(),
            n
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if mode == ProjectionMode::Dense && n > DENSE_LIMIT {
        return Err(Error::DimensionMismatch(format!(
            "dense annihilator refused for n = {n} > {DENSE_LIMIT}; use implicit mode"
        )));
    }

    // Modified Gram-Schmidt with a second orthogonalization pass per column.
    let mut basis_cols: Vec<DVector<f64>> = Vec::new();
    let mut dropped_cols = Vec::new();
    for j in 0..w.ncols() {
        let col = DVector::from_column_slice(w.column(j).as_slice());
        let norm0 = col.norm();
        if norm0 <= 0.0 {
            dropped_cols.push(j);
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for b in &basis_cols {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        let norm = v.norm();
        if norm <= COLLINEARITY_TOL * norm0 {
            dropped_cols.push(j);
        } else {
            basis_cols.push(v / norm);
        }
    }
    let rank_w = basis_cols.len();
    let basis = if rank_w == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis_cols)
    };

    // m_diag[i] = 1 - squared norm of row i of the orthonormal basis.
    let m_diag = DVector::from_fn(n, |i, _| {
        let r = basis.row(i).norm_squared();
        (1.0 - r).clamp(0.0, 1.0)
    });

    let dense = match mode {
        ProjectionMode::Implicit => None,
        ProjectionMode::Dense => {
            let mut m = DMatrix::identity(n, n);
            if rank_w > 0 {
                m -= &basis * basis.transpose();
            }
            Some(m)
        }
    };

    Ok(AnnihilatorProjection {
        basis,
        dense,
        m_diag,
        rank_w,
        dropped_cols,
    })
}

/// Partialled OLS fit of the outcome on the policies.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    /// Partialled policies `M x`, all rows (dropped rows are numerically zero).
    pub v_hat: DMatrix<f64>,
    /// Residuals `M (y - x beta)`, all rows.
    pub u_hat: DVector<f64>,
    /// Leverage-corrected residuals `u_hat / m_diag`; zero on dropped rows.
    pub u_acute: DVector<f64>,
    /// `(1/n) sum over retained rows of v v'`.
    pub gamma_hat: DMatrix<f64>,
    pub m_diag: DVector<f64>,
    /// Row indices kept in all estimator sums.
    pub retained: Vec<usize>,
    /// Rows removed because their annihilator diagonal is ~0.
    pub dropped_rows: Vec<usize>,
    /// Outcome copy (the KJ meat weights each row by `y * u_acute`).
    pub y: DVector<f64>,
}

impl FitResult {
    pub fn d(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn n_retained(&self) -> usize {
        self.retained.len()
    }
}

/// Fit the partialled normal equations by orthogonal least squares.
///
/// Rows with leverage one are removed from every downstream sum; their
/// projected rows carry no information on the policy coefficients.
pub fn partialled_ols(data: &Dataset, proj: &AnnihilatorProjection) -> Result<FitResult> {
    let n = data.n();
    if proj.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "projection built for n = {}, dataset has n = {}",
            proj.n(),
            n
        )));
    }
    let d = data.d();

    let v_hat = proj.apply_mat(&data.x);
    let my = proj.apply_vec(&data.y);

    let mut retained = Vec::with_capacity(n);
    let mut dropped_rows = Vec::new();
    for i in 0..n {
        if proj.m_diag[i] > LEVERAGE_TOL {
            retained.push(i);
        } else {
            dropped_rows.push(i);
        }
    }
    if retained.len() <= d + proj.rank_w {
        return Err(Error::InsufficientData {
            retained: retained.len(),
            params: d + proj.rank_w,
        });
    }

    let n_ret = retained.len();
    let mut v_ret = DMatrix::zeros(n_ret, d);
    let mut y_ret = DVector::zeros(n_ret);
    for (r, &i) in retained.iter().enumerate() {
        v_ret.set_row(r, &v_hat.row(i));
        y_ret[r] = my[i];
    }

    let svd = v_ret.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < CONDITION_TOL * smax {
        return Err(Error::SingularDesign);
    }
    let beta_hat = svd.solve(&y_ret, 0.0).map_err(|_| Error::SingularDesign)?;
    let beta_hat = DVector::from_column_slice(beta_hat.as_slice());

    let u_hat = &my - &v_hat * &beta_hat;
    let mut u_acute = DVector::zeros(n);
    for &i in &retained {
        u_acute[i] = u_hat[i] / proj.m_diag[i];
    }

    let gamma_hat = v_ret.transpose() * &v_ret / n_ret as f64;

    Ok(FitResult {
        beta_hat,
        v_hat,
        u_hat,
        u_acute,
        gamma_hat,
        m_diag: proj.m_diag.clone(),
        retained,
        dropped_rows,
        y: data.y.clone(),
    })
}
