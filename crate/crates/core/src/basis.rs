//! Empirical Gaussian-kernel eigenbasis.
//!
//! The function class searched over by the estimator is spanned by the
//! leading `J` Nyström eigenfunctions of a Gaussian kernel on a set of
//! anchor points (the nodes). With `K = U diag(s) U^T` the node Gram matrix,
//!
//! ```text
//! h_j(x) = (sqrt(m) / s_j) * sum_i U[i,j] * k(x, node_i),     gamma_j = s_j / m,
//! ```
//!
//! so that `h_j(node_i) = sqrt(m) U[i,j]` and the `h_j` are orthonormal in
//! the empirical inner product `(1/m) sum_i f(node_i) g(node_i)`. The
//! `gamma_j` are the eigenvalues of the empirical kernel operator.
//!
//! Complexity is the quadratic form `Gamma(f) = a^T L a`. The default form
//! is `L = diag(1 / gamma_j^2)`; the conventional RKHS norm
//! `L = diag(1 / gamma_j)` is available through [`ComplexityForm`], and any
//! PSD matrix can be supplied with [`Basis::with_complexity_matrix`].

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Which diagonal complexity form to attach to a freshly built basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityForm {
    /// `Gamma(f) = sum_j (a_j / gamma_j)^2`.
    #[default]
    InverseSquared,
    /// `Gamma(f) = sum_j a_j^2 / gamma_j`, the usual RKHS norm.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Gaussian length scale; `None` uses the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// Number of basis functions `J`.
    pub basis_size: usize,
    /// Diagonal Gram jitter; `None` uses `1e-10 * trace(K) / m`.
    pub jitter: Option<f64>,
    /// Upper bound on the number of Nyström nodes drawn from the data.
    pub max_nodes: usize,
    pub complexity: ComplexityForm,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            bandwidth: None,
            basis_size: 20,
            jitter: None,
            max_nodes: 300,
            complexity: ComplexityForm::InverseSquared,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
            }
        }
        if self.basis_size == 0 {
            return Err(Error::InvalidInput("basis size must be at least 1".into()));
        }
        if let Some(j) = self.jitter {
            if !(j >= 0.0 && j.is_finite()) {
                return Err(Error::InvalidInput(format!("jitter must be non-negative, got {j}")));
            }
        }
        if self.max_nodes < self.basis_size {
            return Err(Error::InvalidInput("max_nodes must be at least the basis size".into()));
        }
        Ok(())
    }
}

/// Coefficients `a` of `f = sum_j a_j h_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCoef(pub DVector<f64>);

impl FunctionCoef {
    pub fn zeros(j: usize) -> Self {
        Self(DVector::zeros(j))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self(DVector::from_column_slice(a))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Basis {
    pub nodes: DMatrix<f64>,
    /// `m x J`; column `j` expands `h_j` over the nodes.
    pub coef: DMatrix<f64>,
    /// Operator eigenvalues, largest first.
    pub gamma: DVector<f64>,
    /// Complexity quadratic form.
    pub complexity_matrix: DMatrix<f64>,
    pub bandwidth: f64,
    pub jitter: f64,
    /// `h_j` evaluated at the nodes (`m x J`).
    pub node_evals: DMatrix<f64>,
}

impl Basis {
    pub fn size(&self) -> usize {
        self.coef.ncols()
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    /// Replace the complexity form by an arbitrary symmetric PSD matrix.
    pub fn with_complexity_matrix(mut self, l: DMatrix<f64>) -> Result<Self> {
        check_dim("complexity matrix rows", self.size(), l.nrows())?;
        check_dim("complexity matrix cols", self.size(), l.ncols())?;
        self.complexity_matrix = linalg::symmetrize(&l);
        Ok(self)
    }
}

/// Draw up to `max_nodes` distinct rows of `points` as Nyström nodes.
/// Returns all rows (in order) when there are few enough.
pub fn select_nodes(points: &DMatrix<f64>, max_nodes: usize, seed: u64) -> DMatrix<f64> {
    let n = points.nrows();
    if n <= max_nodes {
        return points.clone();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e79_7374_726f_6d00);
    idx.shuffle(&mut rng);
    idx.truncate(max_nodes);
    idx.sort_unstable();
    linalg::select_rows(points, &idx)
}

/// Build the eigenbasis with the given points as nodes.
pub fn build_basis(points: &DMatrix<f64>, spec: &KernelSpec) -> Result<Basis> {
    spec.validate()?;
    let m = points.nrows();
    let j = spec.basis_size;
    if m == 0 {
        return Err(Error::InvalidInput("no points to build a basis on".into()));
    }
    if j > m {
        return Err(Error::InvalidInput(format!(
            "basis size {j} exceeds the number of nodes {m}"
        )));
    }
    if !linalg::all_finite(points) {
        return Err(Error::InvalidInput("basis points contain non-finite values".into()));
    }

    let bandwidth = spec
        .bandwidth
        .unwrap_or_else(|| linalg::median_pairwise_distance(points));
    let mut gram = linalg::gaussian_kernel(points, points, bandwidth);
    let jitter = spec
        .jitter
        .unwrap_or_else(|| 1e-10 * linalg::trace(&gram) / m as f64);
    for i in 0..m {
        gram[(i, i)] += jitter;
    }

    let (s, u) = linalg::sym_eigen_desc(&gram);
    let floor = 10.0 * f64::EPSILON * m as f64 * s[0].abs();
    if !(s[j - 1] > floor) {
        return Err(Error::DegenerateKernel(format!(
            "eigenvalue {} of the Gram matrix is {:.3e} (floor {:.3e}); \
             reduce the basis size or add jitter",
            j,
            s[j - 1],
            floor
        )));
    }

    let sqrt_m = (m as f64).sqrt();
    let mut coef = DMatrix::zeros(m, j);
    for c in 0..j {
        let scale = sqrt_m / s[c];
        for i in 0..m {
            coef[(i, c)] = u[(i, c)] * scale;
        }
    }
    let gamma = DVector::from_iterator(j, (0..j).map(|c| s[c] / m as f64));
    let complexity_matrix = complexity_from_gamma(&gamma, spec.complexity);

    let mut basis = Basis {
        nodes: points.clone(),
        coef,
        gamma,
        complexity_matrix,
        bandwidth,
        jitter,
        node_evals: DMatrix::zeros(0, 0),
    };
    basis.node_evals = eval_basis(&basis, points)?;
    Ok(basis)
}

pub fn complexity_from_gamma(gamma: &DVector<f64>, form: ComplexityForm) -> DMatrix<f64> {
    let diag = gamma.map(|g| match form {
        ComplexityForm::InverseSquared => 1.0 / (g * g),
        ComplexityForm::Inverse => 1.0 / g,
    });
    DMatrix::from_diagonal(&diag)
}

/// Evaluate every basis function at every query row (`q x J`).
pub fn eval_basis(basis: &Basis, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("query columns", basis.dim(), query.ncols())?;
    if query.nrows() == 0 {
        return Ok(DMatrix::zeros(0, basis.size()));
    }
    let k = linalg::gaussian_kernel(query, &basis.nodes, basis.bandwidth);
    Ok(k * &basis.coef)
}

/// `Gamma(f) = a^T L a`.
pub fn complexity(basis: &Basis, f: &FunctionCoef) -> Result<f64> {
    check_dim("function coefficients", basis.size(), f.len())?;
    let la = &basis.complexity_matrix * &f.0;
    Ok(f.0.dot(&la).max(0.0))
}
