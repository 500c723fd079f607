//! One-step bias-corrected goodness-of-fit for nonparametric regression,
//! held as an explicit quadratic in the sub-model parameter.
//!
//! Along the sub-model `mu_Y(w) + beta f(w, x)` with `f = sum_j a_j h_j`, the
//! one-step estimator
//!
//! ```text
//! G(beta) = (1/n) sum_i [ (r_i - beta f_i)^2 + 2 beta r_i mu_f(W_i) ],   r_i = Y_i - mu_Y(W_i)
//! ```
//!
//! expands to `const0 - 2 beta H2^T a + beta^2 a^T H1 a` with
//! `H1 = (1/n) sum_i h(Z_i) h(Z_i)^T` and `H2 = (1/n) sum_i r_i (h(Z_i) - mu_h(W_i))`.
//! `Phi[i, j]` is the estimated derivative of the influence function at
//! `beta = 0` in direction `h_j`, centered to mean zero.

use nalgebra::{DMatrix, DVector};

use crate::basis::FunctionCoef;
pub use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::nuisance::NuisanceFits;

#[derive(Debug, Clone)]
pub struct QuadraticGof {
    pub h1: DMatrix<f64>,
    pub h2: DVector<f64>,
    pub phi: DMatrix<f64>,
    /// `G(0)`, shared by every direction.
    pub const0: f64,
    pub n: usize,
}

impl QuadraticGof {
    pub fn basis_size(&self) -> usize {
        self.h2.len()
    }

    /// `a^T H1 a`.
    pub fn curvature(&self, a: &FunctionCoef) -> f64 {
        a.0.dot(&(&self.h1 * &a.0))
    }
}

/// Assemble `H1`, `H2`, `Phi` and `G(0)` from the sample, the basis evaluated
/// at `(W_i, X_i)`, and the fitted nuisances.
pub fn assemble(data: &Dataset, basis_evals: &DMatrix<f64>, fits: &NuisanceFits) -> Result<QuadraticGof> {
    let n = data.n();
    if n == 0 {
        return Err(Error::InvalidInput("cannot assemble on an empty sample".into()));
    }
    check_dim("basis evaluation rows", n, basis_evals.nrows())?;
    check_dim("fitted outcome rows", n, fits.mu_y.len())?;
    check_dim("fitted basis rows", n, fits.mu_h.nrows())?;
    check_dim("fitted basis columns", basis_evals.ncols(), fits.mu_h.ncols())?;

    let nf = n as f64;
    let resid = &data.y - &fits.mu_y;
    let centered = basis_evals - &fits.mu_h;

    let h1 = crate::linalg::symmetrize(&(basis_evals.transpose() * basis_evals / nf));
    let h2 = centered.transpose() * &resid / nf;
    let const0 = resid.norm_squared() / nf;

    let mut phi = centered;
    for (j, mut col) in phi.column_iter_mut().enumerate() {
        for (v, r) in col.iter_mut().zip(resid.iter()) {
            *v *= -2.0 * r;
        }
        col.add_scalar_mut(2.0 * h2[j]);
    }

    Ok(QuadraticGof {
        h1,
        h2,
        phi,
        const0,
        n,
    })
}

/// `G(beta) = const0 - 2 beta H2^T a + beta^2 a^T H1 a`.
pub fn gof_value(g: &QuadraticGof, a: &FunctionCoef, beta: f64) -> f64 {
    g.const0 - 2.0 * beta * g.h2.dot(&a.0) + beta * beta * g.curvature(a)
}

/// Exact minimizer `H2^T a / a^T H1 a` of the goodness-of-fit along `a`.
pub fn beta_hat(g: &QuadraticGof, a: &FunctionCoef) -> Result<f64> {
    check_dim("function coefficients", g.basis_size(), a.len())?;
    let curvature = g.curvature(a);
    let scale = g.h1.diagonal().abs().max() * a.0.norm_squared();
    if !(curvature > 1e-14 * scale) || curvature <= 0.0 {
        return Err(Error::DegenerateDirection { curvature });
    }
    Ok(g.h2.dot(&a.0) / curvature)
}

/// `d^2 G / d beta^2 = 2 a^T H1 a`, constant in `beta`.
pub fn second_derivative(g: &QuadraticGof, a: &FunctionCoef) -> f64 {
    2.0 * g.curvature(a)
}

/// `G(0) - G(beta_hat(a)) = (H2^T a)^2 / a^T H1 a`, or zero for a degenerate
/// direction.
pub fn improvement(g: &QuadraticGof, a: &FunctionCoef) -> f64 {
    match beta_hat(g, a) {
        Ok(b) => b * g.h2.dot(&a.0),
        Err(_) => 0.0,
    }
}

/// Estimated influence function of the goodness-of-fit along `a` at `beta`:
/// `(r - beta f)^2 + 2 beta r mu_f - G(beta)` per observation.
pub fn influence_column_full(
    g: &QuadraticGof,
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    fits: &NuisanceFits,
    a: &FunctionCoef,
    beta: f64,
) -> Result<DVector<f64>> {
    check_dim("sample size", g.n, data.n())?;
    check_dim("basis evaluation rows", g.n, basis_evals.nrows())?;
    check_dim("function coefficients", g.basis_size(), a.len())?;
    let f = basis_evals * &a.0;
    let mu_f = &fits.mu_h * &a.0;
    let level = gof_value(g, a, beta);
    Ok(DVector::from_fn(g.n, |i, _| {
        let r = data.y[i] - fits.mu_y[i];
        let e = r - beta * f[i];
        e * e + 2.0 * beta * r * mu_f[i] - level
    }))
}
