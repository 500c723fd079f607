//! Small dense linear-algebra helpers shared by the basis, nuisance and
//! solver modules. Everything works on `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Squared Euclidean distance between row `i` of `a` and row `k` of `b`.
#[inline]
pub fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, k: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(k, c)];
        s += d * d;
    }
    s
}

/// Gaussian kernel matrix `K[i,k] = exp(-|a_i - b_k|^2 / (2 h^2))`.
pub fn gaussian_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let scale = -0.5 / (bandwidth * bandwidth);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, k| {
        (scale * row_sq_dist(a, i, b, k)).exp()
    })
}

/// Median pairwise Euclidean distance between rows. Large inputs are
/// thinned to at most `MAX_ROWS` evenly spaced rows first.
pub fn median_pairwise_distance(points: &DMatrix<f64>) -> f64 {
    const MAX_ROWS: usize = 400;
    let n = points.nrows();
    if n < 2 {
        return 1.0;
    }
    let rows: Vec<usize> = if n > MAX_ROWS {
        (0..MAX_ROWS).map(|i| i * n / MAX_ROWS).collect()
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (p, &i) in rows.iter().enumerate() {
        for &k in &rows[p + 1..] {
            d.push(row_sq_dist(points, i, points, k).sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let med = if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Cholesky factor of `m + jitter * I`, with the jitter grown tenfold up to
/// six times if the factorization fails.
pub fn cholesky_jittered(m: &DMatrix<f64>, jitter: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let base = symmetrize(m);
    let mut eps = jitter.max(0.0);
    for _ in 0..7 {
        let shifted = &base + DMatrix::identity(n, n) * eps;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch);
        }
        eps = if eps == 0.0 {
            1e-12 * (trace(&base).abs() / n.max(1) as f64).max(1e-300)
        } else {
            eps * 10.0
        };
    }
    Err(Error::Numerical("matrix is not positive definite".into()))
}

/// Lower-triangular solve `L x = b` for every column of `b`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor from a successful Cholesky is invertible")
}

/// Row subset of a matrix.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]))
}

/// Horizontal concatenation `[a | b]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
