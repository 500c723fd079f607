//! Kernel ridge regression on Nyström features.
//!
//! With nodes `Z` and node Gram matrix `K_zz = U diag(s) U^T`, the feature
//! map is `phi(x) = k(x, Z) U_r diag(s_r)^{-1/2}`, keeping the components
//! with non-negligible `s`. When every training row is a node this is exact
//! kernel ridge regression (`Phi Phi^T = K`); otherwise it is the standard
//! Nyström approximation. The intercept is unpenalized: features and targets
//! are centered on the training rows before the ridge solve.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct NystromFeatures {
    nodes: DMatrix<f64>,
    bandwidth: f64,
    proj: DMatrix<f64>,
}

impl NystromFeatures {
    pub fn new(nodes: DMatrix<f64>, bandwidth: f64) -> Self {
        if nodes.ncols() == 0 || nodes.nrows() == 0 {
            return Self {
                proj: DMatrix::zeros(nodes.nrows(), 0),
                nodes,
                bandwidth,
            };
        }
        let k = linalg::gaussian_kernel(&nodes, &nodes, bandwidth);
        let (s, u) = linalg::sym_eigen_desc(&k);
        let cutoff = 1e-9 * s[0].max(0.0);
        let r = s.iter().take_while(|&&v| v > cutoff).count();
        let mut proj = DMatrix::zeros(nodes.nrows(), r);
        for c in 0..r {
            let scale = 1.0 / s[c].sqrt();
            proj.set_column(c, &(u.column(c) * scale));
        }
        Self { nodes, bandwidth, proj }
    }

    pub fn rank(&self) -> usize {
        self.proj.ncols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(x.nrows(), 0);
        }
        linalg::gaussian_kernel(x, &self.nodes, self.bandwidth) * &self.proj
    }
}

/// Ridge solution for several targets sharing one penalty.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub ridge: f64,
    feature_mean: DVector<f64>,
    target_mean: DVector<f64>,
    beta: DMatrix<f64>,
}

/// Centered Gram eigensystem of a training design, reusable across penalties.
struct CenteredSystem {
    n: usize,
    feature_mean: DVector<f64>,
    target_mean: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    /// `V^T F_c^T Y_c`
    rotated_cross: DMatrix<f64>,
}

impl CenteredSystem {
    fn new(features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Self {
        let n = features.nrows();
        let feature_mean = linalg::column_means(features);
        let target_mean = linalg::column_means(targets);
        let mut fc = features.clone();
        for (mut col, m) in fc.column_iter_mut().zip(feature_mean.iter()) {
            col.add_scalar_mut(-m);
        }
        let mut yc = targets.clone();
        for (mut col, m) in yc.column_iter_mut().zip(target_mean.iter()) {
            col.add_scalar_mut(-m);
        }
        let gram = fc.transpose() * &fc;
        let (eigvals, eigvecs) = if gram.nrows() == 0 {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        } else {
            linalg::sym_eigen_desc(&gram)
        };
        let rotated_cross = eigvecs.transpose() * (fc.transpose() * yc);
        Self {
            n,
            feature_mean,
            target_mean,
            eigvals,
            eigvecs,
            rotated_cross,
        }
    }

    fn solve(&self, ridge: f64) -> RidgeFit {
        let shift = self.n as f64 * ridge;
        let mut scaled = self.rotated_cross.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let d = self.eigvals[i].max(0.0) + shift;
            row /= d;
        }
        RidgeFit {
            ridge,
            feature_mean: self.feature_mean.clone(),
            target_mean: self.target_mean.clone(),
            beta: &self.eigvecs * scaled,
        }
    }
}

impl RidgeFit {
    pub fn fit(features: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Self {
        CenteredSystem::new(features, targets).solve(ridge)
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let n = features.nrows();
        let t = self.target_mean.len();
        let mut out = DMatrix::from_fn(n, t, |_, c| self.target_mean[c]);
        if self.beta.nrows() > 0 {
            let mut fc = features.clone();
            for (mut col, m) in fc.column_iter_mut().zip(self.feature_mean.iter()) {
                col.add_scalar_mut(-m);
            }
            out += fc * &self.beta;
        }
        out
    }
}

/// Random balanced fold labels in `0..k`.
pub fn fold_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x666f_6c64_7321);
    idx.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        labels[i] = pos % k;
    }
    labels
}

pub fn split_by_fold(labels: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == fold {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// K-fold mean squared prediction error: entry `(g, t)` is the CV error of
/// target `t` at ridge `grid[g]`.
pub fn cv_errors(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    labels: &[usize],
    folds: usize,
    grid: &[f64],
) -> DMatrix<f64> {
    let n = features.nrows();
    let mut sse = DMatrix::zeros(grid.len(), targets.ncols());
    for fold in 0..folds {
        let (train, test) = split_by_fold(labels, fold);
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let f_tr = linalg::select_rows(features, &train);
        let y_tr = linalg::select_rows(targets, &train);
        let f_te = linalg::select_rows(features, &test);
        let y_te = linalg::select_rows(targets, &test);
        let system = CenteredSystem::new(&f_tr, &y_tr);
        for (g, &ridge) in grid.iter().enumerate() {
            let pred = system.solve(ridge).predict(&f_te);
            let resid = pred - &y_te;
            for c in 0..targets.ncols() {
                sse[(g, c)] += resid.column(c).norm_squared();
            }
        }
    }
    sse / n as f64
}

/// Out-of-fold predictions at a fixed ridge.
pub fn out_of_fold(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    labels: &[usize],
    folds: usize,
    ridge: f64,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(targets.nrows(), targets.ncols());
    for fold in 0..folds {
        let (train, test) = split_by_fold(labels, fold);
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let pred = RidgeFit::fit(&linalg::select_rows(features, &train), &linalg::select_rows(targets, &train), ridge)
            .predict(&linalg::select_rows(features, &test));
        for (r, &i) in test.iter().enumerate() {
            out.set_row(i, &pred.row(r));
        }
    }
    out
}

/// Index of the smallest finite score; ties go to the earlier entry.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// A cross-validated kernel ridge fit of several targets with one shared
/// penalty, chosen to minimize the CV error averaged over targets.
#[derive(Debug, Clone)]
pub struct KernelRidge {
    pub features: NystromFeatures,
    pub fit: RidgeFit,
    pub cv_error: Vec<f64>,
}

impl KernelRidge {
    pub fn fit_cv(
        x: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        bandwidth: Option<f64>,
        max_nodes: usize,
        folds: usize,
        grid: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("ridge grid is empty".into()));
        }
        let n = x.nrows();
        if n < 2 * folds || folds < 2 {
            return Err(Error::InvalidInput(format!(
                "kernel ridge needs folds >= 2 and n >= 2 * folds (n = {n}, folds = {folds})"
            )));
        }
        let bw = bandwidth.unwrap_or_else(|| linalg::median_pairwise_distance(x));
        let nodes = crate::basis::select_nodes(x, max_nodes, seed);
        let features = NystromFeatures::new(nodes, bw);
        let phi = features.transform(x);
        let labels = fold_labels(n, folds, seed);
        let errs = cv_errors(&phi, targets, &labels, folds, grid);
        let avg: Vec<f64> = (0..grid.len())
            .map(|g| errs.row(g).mean())
            .collect();
        let best = argmin(&avg)
            .ok_or_else(|| Error::Numerical("no finite cross-validation error".into()))?;
        let fit = RidgeFit::fit(&phi, targets, grid[best]);
        Ok(Self {
            features,
            fit,
            cv_error: avg,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.fit.predict(&self.features.transform(x))
    }
}
