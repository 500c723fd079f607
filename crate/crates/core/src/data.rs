use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// An i.i.d. sample `Z_i = (W_i, X_i, Y_i)`: covariates `W`, predictors of
/// interest `X`, outcome `Y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub w: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(w: DMatrix<f64>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim("covariate rows", y.len(), w.nrows())?;
        check_dim("predictor rows", y.len(), x.nrows())?;
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("at least one predictor column is required".into()));
        }
        if let Some(i) = first_nonfinite_row(&w, &x, &y) {
            return Err(Error::InvalidInput(format!("non-finite value in row {i}")));
        }
        Ok(Self { w, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `[W | X]`, the input space of the function class.
    pub fn wx(&self) -> DMatrix<f64> {
        linalg::hstack(&self.w, &self.x)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            w: linalg::select_rows(&self.w, rows),
            x: linalg::select_rows(&self.x, rows),
            y: linalg::select_entries(&self.y, rows),
        }
    }
}

fn first_nonfinite_row(w: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Option<usize> {
    (0..y.len()).find(|&i| {
        !y[i].is_finite()
            || w.row(i).iter().any(|v| !v.is_finite())
            || x.row(i).iter().any(|v| !v.is_finite())
    })
}
