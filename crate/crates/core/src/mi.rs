//! Mutual-information independence test for two scalar variables.
//!
//! For a function `f` of the pair, the one-step objective is
//!
//! ```text
//! psi_f(beta) = -(beta / n) sum_i f(X_i, Y_i) + log( (1/n^2) sum_{i,k} exp(beta f(X_i, Y_k)) ),
//! ```
//!
//! with `psi_f'(0) = H^T a` and `psi_f''(0) = a^T Omega a` for `f = sum_j a_j h_j`.
//! The basis is the Gaussian eigenbasis on the standardized pairs. A
//! Gaussian kernel on the plane factors over the margins, so every pair
//! evaluation is `h_j(x_a, y_b) = sum_i C[i,j] Kx[a,i] Ky[b,i]` and all
//! summary moments come from `m x m` products without touching the `n^2`
//! pairs. Pair values are streamed in row blocks, so memory stays `O(n m)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, Basis, FunctionCoef, KernelSpec};
use crate::error::{check_dim, Error, Result};
use crate::inference::{p_value, pi_n, rademacher_table};
use crate::linalg;
use crate::qcqp::RatioCone;

const BLOCK_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_dim("y length", x.len(), y.len())?;
        if let Some(i) = x.iter().zip(&y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in pair {i}")));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Both margins centered and scaled to unit sample variance. A
    /// constant margin is centered only.
    pub fn standardized(&self) -> Self {
        fn z(v: &[f64]) -> Vec<f64> {
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            v.iter().map(|t| (t - mean) / sd).collect()
        }
        Self {
            x: z(&self.x),
            y: z(&self.y),
        }
    }

    fn points(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), 2, |i, c| if c == 0 { self.x[i] } else { self.y[i] })
    }
}

/// Pair moments of the basis for one sample.
#[derive(Debug, Clone)]
pub struct MiGof {
    /// `Kx[a,i] = k(x_a, node_x_i)`, `n x m`.
    kx: DMatrix<f64>,
    ky: DMatrix<f64>,
    /// Basis expansion over the nodes, `m x J`.
    coef: DMatrix<f64>,
    pub diag_means: DVector<f64>,
    pub pair_means: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub hvec: DVector<f64>,
    /// Empirical influence of `psi_f'(0)` for each basis function, `n x J`.
    pub phi: DMatrix<f64>,
    pub n: usize,
}

impl MiGof {
    pub fn assemble(sample: &PairSample, basis: &Basis) -> Result<Self> {
        check_dim("basis input dimension", 2, basis.dim())?;
        let n = sample.n();
        if n < 2 {
            return Err(Error::InvalidInput("need at least two pairs".into()));
        }
        let nodes = &basis.nodes;
        let col = |c: usize, v: &[f64]| {
            let pts = DMatrix::from_column_slice(v.len(), 1, v);
            let nd = DMatrix::from_fn(nodes.nrows(), 1, |i, _| nodes[(i, c)]);
            linalg::gaussian_kernel(&pts, &nd, basis.bandwidth)
        };
        let kx = col(0, &sample.x);
        let ky = col(1, &sample.y);
        let coef = basis.coef.clone();
        let nf = n as f64;
        let j = coef.ncols();

        let diag_prod = kx.component_mul(&ky);
        let diag_evals = &diag_prod * &coef;
        let diag_means = linalg::column_means(&diag_evals);
        let kx_bar = linalg::column_means(&kx);
        let ky_bar = linalg::column_means(&ky);
        // Row and column means of h_j over the pairs.
        let row_means = &kx * DMatrix::from_diagonal(&ky_bar) * &coef;
        let col_means = &ky * DMatrix::from_diagonal(&kx_bar) * &coef;
        let pair_means = coef.transpose() * kx_bar.component_mul(&ky_bar);
        let gx = kx.transpose() * &kx / nf;
        let gy = ky.transpose() * &ky / nf;
        let second = coef.transpose() * gx.component_mul(&gy) * &coef;
        let omega = linalg::symmetrize(&(second - &pair_means * pair_means.transpose()));
        let hvec = &pair_means - &diag_means;
        let phi = DMatrix::from_fn(n, j, |i, c| {
            -diag_evals[(i, c)] + diag_means[c] + row_means[(i, c)] + col_means[(i, c)] - 2.0 * pair_means[c]
        });

        let g = Self {
            kx,
            ky,
            coef,
            diag_means,
            pair_means,
            omega,
            hvec,
            phi,
            n,
        };
        Ok(g)
    }

    pub fn basis_size(&self) -> usize {
        self.coef.ncols()
    }

    /// `f(x_a, y_b)` for rows `a` in `r0..r1` and all `b`.
    fn pair_block(&self, a: &DVector<f64>, r0: usize, r1: usize) -> DMatrix<f64> {
        let w = &self.coef * a;
        let left = self.kx.rows(r0, r1 - r0) * DMatrix::from_diagonal(&w);
        left * self.ky.transpose()
    }

    /// `sum_{a,b} W[a,b] h_j(x_a, y_b)` for a block of rows.
    fn contract_block(&self, w: &DMatrix<f64>, r0: usize) -> DVector<f64> {
        let wk = w * &self.ky;
        let d = self.kx.rows(r0, w.nrows()).component_mul(&wk);
        let s = DVector::from_iterator(d.ncols(), d.column_iter().map(|c| c.sum()));
        self.coef.transpose() * s
    }

    /// Log-mean-exp of `beta f` over all pairs and, optionally, the
    /// softmax-weighted pair means of each `h_j`.
    fn log_mean_exp(&self, a: &DVector<f64>, beta: f64, grad: bool) -> (f64, Option<DVector<f64>>) {
        let n = self.n;
        let starts: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
        let parts: Vec<(f64, f64, Option<DVector<f64>>)> = starts
            .par_iter()
            .map(|&r0| {
                let r1 = (r0 + BLOCK_ROWS).min(n);
                let f = self.pair_block(a, r0, r1) * beta;
                let mx = f.max();
                let e = f.map(|v| (v - mx).exp());
                let s: f64 = e.column_iter().map(|c| c.sum()).collect::<Vec<f64>>().iter().sum();
                let g = grad.then(|| self.contract_block(&e, r0));
                (mx, s, g)
            })
            .collect();
        let mx = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut gsum = grad.then(|| DVector::zeros(self.basis_size()));
        for (m, s, g) in parts {
            let w = (m - mx).exp();
            total += w * s;
            if let (Some(acc), Some(g)) = (gsum.as_mut(), g) {
                *acc += g * w;
            }
        }
        let lme = mx + (total / (n * n) as f64).ln();
        (lme, gsum.map(|g| g / total))
    }

    /// Curvature `a^T Omega a`.
    pub fn curvature(&self, a: &DVector<f64>) -> f64 {
        a.dot(&(&self.omega * a)).max(0.0)
    }

    /// `f(x_a, y_b)` over all pairs, `n x n`. Intended for small samples.
    pub fn pair_values(&self, a: &FunctionCoef) -> Result<DMatrix<f64>> {
        check_dim("function coefficients", self.basis_size(), a.len())?;
        Ok(self.pair_block(&a.0, 0, self.n))
    }
}

/// `psi_f(beta)`.
pub fn mi_objective(g: &MiGof, a: &FunctionCoef, beta: f64) -> Result<f64> {
    check_dim("function coefficients", g.basis_size(), a.len())?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    let (lme, _) = g.log_mean_exp(&a.0, beta, false);
    Ok(-beta * g.diag_means.dot(&a.0) + lme)
}

/// `(psi_f'(0), psi_f''(0))`.
pub fn mi_grad_hess_at_zero(g: &MiGof, a: &FunctionCoef) -> Result<(f64, f64)> {
    check_dim("function coefficients", g.basis_size(), a.len())?;
    Ok((g.hvec.dot(&a.0), g.curvature(&a.0)))
}

/// Objective of the direct minimization, `b -> psi_{sum b_j h_j}(1)`, and its gradient.
pub fn dstar_objective(g: &MiGof, b: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    check_dim("coefficients", g.basis_size(), b.len())?;
    let (lme, soft) = g.log_mean_exp(b, 1.0, true);
    let soft = soft.expect("gradient requested");
    Ok((-g.diag_means.dot(b) + lme, soft - &g.diag_means))
}

fn vanishing(g: &MiGof) -> bool {
    let scale = 1.0 + g.diag_means.amax() + g.pair_means.amax();
    g.hvec.amax() <= 1e-12 * scale
}

/// `Psi* = sup psi_f'(0)^2 / (2 psi_f''(0))` over the cone
/// `a^T L a <= lambda a^T Omega a`.
pub fn estimate_psi_star(g: &MiGof, l: &DMatrix<f64>, lambda: f64) -> Result<(f64, FunctionCoef)> {
    let j = g.basis_size();
    if vanishing(g) {
        return Ok((0.0, FunctionCoef::zeros(j)));
    }
    let sol = RatioCone::new(l, &g.omega, lambda)?.solve(&g.hvec)?;
    Ok((sol.value / 2.0, FunctionCoef(sol.a_star)))
}

/// Null bootstrap draws of `Psi*` from Rademacher multipliers on the
/// empirical influence of `psi_f'(0)`.
pub fn bootstrap_t_mi(g: &MiGof, l: &DMatrix<f64>, lambda: f64, m: usize, seed: u64) -> Result<Vec<f64>> {
    if vanishing(g) && g.omega.amax() == 0.0 {
        return Ok(vec![0.0; m]);
    }
    let cone = RatioCone::new(l, &g.omega, lambda)?;
    let xi = rademacher_table(g.n, m, seed);
    let b = g.phi.transpose() * xi / g.n as f64;
    (0..m)
        .into_par_iter()
        .map(|k| Ok(cone.value(&b.column(k).into_owned())? / 2.0))
        .collect()
}

/// Euclidean projection onto `{b : b^T L b <= radius}`.
struct EllipsoidProjector {
    ell: DVector<f64>,
    vecs: DMatrix<f64>,
    radius: f64,
}

impl EllipsoidProjector {
    fn new(l: &DMatrix<f64>, radius: f64) -> Self {
        let (ell, vecs) = linalg::sym_eigen_desc(&linalg::symmetrize(l));
        Self {
            ell: ell.map(|v| v.max(0.0)),
            vecs,
            radius,
        }
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.vecs.transpose() * v;
        let form = |mu: f64| -> f64 {
            c.iter()
                .zip(self.ell.iter())
                .map(|(ck, lk)| lk * (ck / (1.0 + mu * lk)).powi(2))
                .sum()
        };
        if form(0.0) <= self.radius {
            return v.clone();
        }
        if self.radius <= 0.0 {
            // Only the null space of L survives.
            let z = DVector::from_iterator(c.len(), c.iter().zip(self.ell.iter()).map(|(ck, lk)| if *lk > 0.0 { 0.0 } else { *ck }));
            return &self.vecs * z;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while form(hi) > self.radius {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if form(mid) > self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let z = DVector::from_iterator(c.len(), c.iter().zip(self.ell.iter()).map(|(ck, lk)| ck / (1.0 + hi * lk)));
        &self.vecs * z
    }
}

/// Outcome of the direct minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstarSolution {
    /// Non-negative improvement `-min psi`.
    pub value: f64,
    pub b_star: Vec<f64>,
    pub iterations: usize,
}

/// `Psi** = -inf { psi_{sum b_j h_j}(1) : b^T L b <= sigma lambda }` by
/// accelerated projected gradient with backtracking and restarts.
pub fn estimate_psi_dstar(g: &MiGof, l: &DMatrix<f64>, lambda: f64, sigma: f64) -> Result<DstarSolution> {
    const MAX_ITER: usize = 10_000;
    const TOL: f64 = 1e-8;
    if !(lambda > 0.0 && sigma > 0.0 && lambda.is_finite() && sigma.is_finite()) {
        return Err(Error::InvalidInput("lambda and sigma must be positive".into()));
    }
    let j = g.basis_size();
    check_dim("complexity matrix", j, l.nrows())?;
    // Work in coordinates u with b = T^T u, where Omega + ridge = R R^T and
    // T = R^{-1}, so the objective has roughly unit curvature at the origin.
    // The ridge bounds the conditioning of T.
    let tr = g.omega.trace();
    let t = if tr > 0.0 {
        let mut s = g.omega.clone();
        for k in 0..j {
            s[(k, k)] += 1e-3 * tr / j as f64;
        }
        let r = linalg::cholesky_jittered(&s, 0.0)?.l();
        r.try_inverse().ok_or_else(|| Error::Numerical("curvature factor is singular".into()))?
    } else {
        DMatrix::identity(j, j)
    };
    let to_b = |u: &DVector<f64>| t.transpose() * u;
    let eval = |u: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (f, grad) = dstar_objective(g, &to_b(u))?;
        Ok((f, &t * grad))
    };
    let proj = EllipsoidProjector::new(&(&t * l * t.transpose()), sigma * lambda);

    let mut x = DVector::zeros(j);
    let mut fx = 0.0;
    let mut y = x.clone();
    let mut t_acc: f64 = 1.0;
    let mut step = 1.0;
    for it in 1..=MAX_ITER {
        let (fy, gy) = eval(&y)?;
        // Allowance for rounding in the log-mean-exp over n^2 pairs.
        let slack = 1e-12 * fy.abs();
        // Gradient mapping at a unit step, which matches the curvature scale.
        let mapping = (proj.project(&(&y - &gy)) - &y).norm();
        if mapping <= TOL {
            let (x, f) = if fy <= fx { (y, fy) } else { (x, fx) };
            return Ok(DstarSolution {
                value: (-f).max(0.0),
                b_star: to_b(&x).iter().copied().collect(),
                iterations: it,
            });
        }
        let (x_new, f_new) = loop {
            let cand = proj.project(&(&y - &gy * step));
            let d = &cand - &y;
            let fc = if d.amax() == 0.0 { fy } else { eval(&cand)?.0 };
            if fc <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * step) + slack {
                break (cand, fc);
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(Error::Numerical("step size collapsed in projected gradient".into()));
            }
        };
        if f_new > fx + slack {
            // Restart momentum when the objective goes up.
            t_acc = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
        y = &x_new + (&x_new - &x) * ((t_acc - 1.0) / t_next);
        t_acc = t_next;
        x = x_new;
        fx = f_new;
        step *= 1.25;
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        best_value: (-fx).max(0.0),
        best_iterate: to_b(&x).iter().copied().collect(),
    })
}

/// `pi Psi* + (1 - pi) Psi**`.
pub fn estimate_psi_check(psi_star: f64, psi_dstar: f64, pi: f64) -> f64 {
    pi * psi_star + (1.0 - pi) * psi_dstar
}

/// Middle of the whitened spectrum of `(L, Omega)` on a log scale.
pub fn default_mi_lambda(g: &MiGof, l: &DMatrix<f64>) -> Result<f64> {
    let cone = RatioCone::new(l, &g.omega, 1.0)?;
    let ell: Vec<f64> = cone.whitened_spectrum().iter().copied().filter(|v| *v > 0.0).collect();
    if ell.is_empty() {
        return Ok(1.0);
    }
    let mean_log = ell.iter().map(|v| v.ln()).sum::<f64>() / ell.len() as f64;
    Ok(mean_log.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    pub kernel: KernelSpec,
    /// Cone level; `None` picks [`default_mi_lambda`].
    pub lambda: Option<f64>,
    pub sigma: f64,
    pub m: usize,
    pub alpha: f64,
    pub seed: u64,
    pub standardize: bool,
    /// Also run the direct minimization for `Psi**` and the mixture.
    pub direct: bool,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec {
                basis_size: 8,
                max_nodes: 60,
                ..KernelSpec::default()
            },
            lambda: None,
            sigma: 1.0,
            m: 500,
            alpha: 0.05,
            seed: 0,
            standardize: true,
            direct: true,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.m == 0 {
            return Err(Error::InvalidInput("need at least one bootstrap draw".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub n: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub psi_star: f64,
    pub a_star: Vec<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub pi_star: f64,
    pub psi_dstar: Option<f64>,
    pub b_star: Option<Vec<f64>>,
    pub psi_check: Option<f64>,
    pub draws_t: Vec<f64>,
}

/// Basis on (a subsample of) the observed pairs.
pub fn build_pair_basis(sample: &PairSample, spec: &KernelSpec, seed: u64) -> Result<Basis> {
    let nodes = basis::select_nodes(&sample.points(), spec.max_nodes, seed);
    basis::build_basis(&nodes, spec)
}

pub fn run_mi_test(sample: &PairSample, config: &MiConfig) -> Result<MiResult> {
    config.validate()?;
    let sample = if config.standardize { sample.standardized() } else { sample.clone() };
    let n = sample.n();
    if n < config.kernel.basis_size.max(4) {
        return Err(Error::InvalidInput(format!(
            "need at least {} pairs, got {n}",
            config.kernel.basis_size.max(4)
        )));
    }
    let basis = build_pair_basis(&sample, &config.kernel, config.seed)?;
    let g = MiGof::assemble(&sample, &basis)?;
    let l = &basis.complexity_matrix;
    let lambda = match config.lambda {
        Some(v) => v,
        None => default_mi_lambda(&g, l)?,
    };
    let (psi_star, a_star) = estimate_psi_star(&g, l, lambda)?;
    let draws_t = bootstrap_t_mi(&g, l, lambda, config.m, config.seed)?;
    let p = p_value(psi_star, &draws_t);
    let pi_star = pi_n(psi_star, &draws_t, n);
    let (psi_dstar, b_star, psi_check) = if config.direct {
        let d = estimate_psi_dstar(&g, l, lambda, config.sigma)?;
        (Some(d.value), Some(d.b_star), Some(estimate_psi_check(psi_star, d.value, pi_star)))
    } else {
        (None, None, None)
    };
    Ok(MiResult {
        n,
        lambda,
        sigma: config.sigma,
        psi_star,
        a_star: a_star.0.iter().copied().collect(),
        p_value: p,
        reject: p < config.alpha,
        pi_star,
        psi_dstar,
        b_star,
        psi_check,
        draws_t,
    })
}
