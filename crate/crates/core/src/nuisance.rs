//! Conditional-mean nuisances `mu_Y(w) = E[Y | W = w]` and
//! `mu_{h_j}(w) = E[h_j(W, X) | W = w]`, fitted by cross-validated kernel
//! ridge regression on `W`. Since `mu_f` is linear in `f`, the `J` basis
//! regressions give `mu_f = sum_j a_j mu_{h_j}` for every `f` at once.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::FunctionCoef;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::krr::{self, NystromFeatures, RidgeFit};
use crate::linalg;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub folds: usize,
    pub ridge_grid: Vec<f64>,
    /// Gaussian bandwidth on `W`; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    pub max_nodes: usize,
    /// Report out-of-fold fitted values instead of in-sample ones.
    pub cross_fit: bool,
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            ridge_grid: default_ridge_grid(),
            bandwidth: None,
            max_nodes: 200,
            cross_fit: true,
            seed: 0,
        }
    }
}

pub fn default_ridge_grid() -> Vec<f64> {
    (0..=7).map(|k| 10f64.powi(-k)).rev().collect()
}

/// Retained state for predicting the nuisances at new covariate values.
#[derive(Debug, Clone)]
pub struct NuisancePredictor {
    features: NystromFeatures,
    fit_y: RidgeFit,
    fit_h: RidgeFit,
}

impl NuisancePredictor {
    #[cfg(test)]
    pub(crate) fn from_parts(features: NystromFeatures, fit_y: RidgeFit, fit_h: RidgeFit) -> Self {
        Self { features, fit_y, fit_h }
    }

    pub fn predict_y(&self, w: &DMatrix<f64>) -> DVector<f64> {
        self.fit_y.predict(&self.features.transform(w)).column(0).into_owned()
    }

    pub fn predict_h(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.fit_h.predict(&self.features.transform(w))
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub mu_y: DVector<f64>,
    pub mu_h: DMatrix<f64>,
    pub ridge_y: f64,
    pub ridge_h: f64,
    pub predictor: NuisancePredictor,
}

impl NuisanceFits {
    pub fn subset(&self, rows: &[usize]) -> NuisanceFits {
        NuisanceFits {
            mu_y: linalg::select_entries(&self.mu_y, rows),
            mu_h: linalg::select_rows(&self.mu_h, rows),
            ridge_y: self.ridge_y,
            ridge_h: self.ridge_h,
            predictor: self.predictor.clone(),
        }
    }
}

pub fn fit_nuisances(
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    config: &NuisanceConfig,
) -> Result<NuisanceFits> {
    let n = data.n();
    check_dim("basis evaluation rows", n, basis_evals.nrows())?;
    if config.ridge_grid.is_empty() {
        return Err(Error::InvalidInput("ridge grid is empty".into()));
    }
    if config.ridge_grid.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput("ridge penalties must be positive".into()));
    }
    if config.folds < 2 || n < 2 * config.folds {
        return Err(Error::InvalidInput(format!(
            "nuisance fitting needs folds >= 2 and n >= 2 * folds (n = {n}, folds = {})",
            config.folds
        )));
    }
    let j = basis_evals.ncols();

    let bw = config
        .bandwidth
        .unwrap_or_else(|| linalg::median_pairwise_distance(&data.w));
    let nodes = crate::basis::select_nodes(&data.w, config.max_nodes, config.seed);
    let features = NystromFeatures::new(nodes, bw);
    let phi = features.transform(&data.w);

    let mut targets = DMatrix::zeros(n, j + 1);
    targets.set_column(0, &data.y);
    targets.columns_mut(1, j).copy_from(basis_evals);

    let labels = krr::fold_labels(n, config.folds, config.seed);
    let errs = krr::cv_errors(&phi, &targets, &labels, config.folds, &config.ridge_grid);
    let score_y: Vec<f64> = (0..config.ridge_grid.len()).map(|g| errs[(g, 0)]).collect();
    let score_h: Vec<f64> = (0..config.ridge_grid.len())
        .map(|g| {
            if j == 0 {
                0.0
            } else {
                errs.row(g).columns(1, j).mean()
            }
        })
        .collect();
    let no_score = || Error::Numerical("cross-validation produced no finite score".into());
    let ridge_y = config.ridge_grid[krr::argmin(&score_y).ok_or_else(no_score)?];
    let ridge_h = config.ridge_grid[krr::argmin(&score_h).ok_or_else(no_score)?];

    let y_mat = DMatrix::from_column_slice(n, 1, data.y.as_slice());
    let fit_y = RidgeFit::fit(&phi, &y_mat, ridge_y);
    let fit_h = RidgeFit::fit(&phi, basis_evals, ridge_h);

    let (mu_y, mu_h) = if config.cross_fit {
        (
            krr::out_of_fold(&phi, &y_mat, &labels, config.folds, ridge_y).column(0).into_owned(),
            krr::out_of_fold(&phi, basis_evals, &labels, config.folds, ridge_h),
        )
    } else {
        (fit_y.predict(&phi).column(0).into_owned(), fit_h.predict(&phi))
    };

    Ok(NuisanceFits {
        mu_y,
        mu_h,
        ridge_y,
        ridge_h,
        predictor: NuisancePredictor {
            features,
            fit_y,
            fit_h,
        },
    })
}

/// Fitted `E[f(W, X) | W]` at the sample points for `f = sum_j a_j h_j`.
pub fn mu_f(fits: &NuisanceFits, a: &FunctionCoef) -> Result<DVector<f64>> {
    check_dim("function coefficients", fits.mu_h.ncols(), a.len())?;
    Ok(&fits.mu_h * &a.0)
}
