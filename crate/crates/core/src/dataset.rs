use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A regression sample: outcome `y`, policy matrix `x` (the effects of
/// interest), and covariate matrix `w` (partialled out before inference).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl Dataset {
    /// Validate dimensions and finiteness. `w` may have zero columns.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || w.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, x has {}, w has {}",
                n,
                x.nrows(),
                w.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch("x must have at least one column".into()));
        }
        if n <= x.ncols() + w.ncols() {
            return Err(Error::InsufficientData {
                retained: n,
                params: x.ncols() + w.ncols(),
            });
        }
        let finite = y.iter().all(|v| v.is_finite())
            && x.iter().all(|v| v.is_finite())
            && w.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { y, x, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.w.ncols()
    }
}
