//! Improvement-in-fit estimate, multiplier bootstrap, adaptive confidence
//! interval and cross-validated choice of the smoothness level `lambda`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, eval_basis, select_nodes, FunctionCoef, KernelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gof::{self, QuadraticGof};
use crate::krr::{argmin, fold_labels, split_by_fold};
use crate::linalg;
use crate::nuisance::{fit_nuisances, NuisanceConfig, NuisanceFits};
use crate::qcqp::RatioCone;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Cv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub lambda: LambdaChoice,
    /// Candidate levels for cross-validation; empty means a data-driven grid.
    pub lambda_grid: Vec<f64>,
    pub m: usize,
    pub alpha: f64,
    pub seed: u64,
    pub folds: usize,
    /// Choose `lambda` on one half of the sample and infer on the other.
    pub split: bool,
    pub nuisance: NuisanceConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaChoice::Cv,
            lambda_grid: Vec::new(),
            m: 500,
            alpha: 0.05,
            seed: 0,
            folds: 5,
            split: false,
            nuisance: NuisanceConfig::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("lambda must be positive, got {l}")));
            }
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("lambda grid entries must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidInput("number of bootstrap draws must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput("at least two folds are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub psi_hat: f64,
    pub a_hat: Vec<f64>,
    pub beta_hat_at_a: f64,
    pub p_value: f64,
    pub pi_n: f64,
    pub ci: (f64, f64),
    pub draws_t: Vec<f64>,
    pub draws_u: Vec<f64>,
    pub draws_v: Vec<f64>,
    pub lambda_used: f64,
}

/// `sup (H2^T a)^2 / a^T H1 a` over `{a : a^T L a <= 2 lambda a^T H1 a}`,
/// with the maximizer normalized to `a^T H1 a = 1`.
pub fn estimate_psi(g: &QuadraticGof, l: &DMatrix<f64>, lambda: f64) -> Result<(f64, FunctionCoef)> {
    let sol = RatioCone::new(l, &g.h1, 2.0 * lambda)?.solve(&g.h2)?;
    Ok((sol.value, FunctionCoef(sol.a_star)))
}

/// `n x M` table of Rademacher multipliers, one column per draw.
pub fn rademacher_table(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6465_6d61_6368);
    DMatrix::from_fn(n, m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Bootstrap functionals `Phi^T xi_m / n`, one column per draw.
fn multiplier_functionals(phi: &DMatrix<f64>, xi: &DMatrix<f64>) -> DMatrix<f64> {
    phi.transpose() * xi / phi.nrows() as f64
}

pub fn bootstrap_t(g: &QuadraticGof, l: &DMatrix<f64>, lambda: f64, m: usize, seed: u64) -> Result<Vec<f64>> {
    bootstrap_t_with(g, l, lambda, &rademacher_table(g.n, m, seed))
}

/// `T_m = sup (b_m^T a)^2 / (4 a^T H1 a)` over the same cone as
/// [`estimate_psi`], with `b_m = Phi^T xi_m / n`.
pub fn bootstrap_t_with(g: &QuadraticGof, l: &DMatrix<f64>, lambda: f64, xi: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::error::check_dim("multiplier rows", g.n, xi.nrows())?;
    let cone = RatioCone::new(l, &g.h1, 2.0 * lambda)?;
    let b = multiplier_functionals(&g.phi, xi);
    (0..b.ncols())
        .into_par_iter()
        .map(|k| Ok(cone.value(&b.column(k).into_owned())? / 4.0))
        .collect()
}

/// Share of draws exceeding the estimate.
pub fn p_value(psi_hat: f64, draws_t: &[f64]) -> f64 {
    exceed_share(draws_t, psi_hat)
}

/// Share of draws exceeding `psi_hat / ln n`.
pub fn pi_n(psi_hat: f64, draws_t: &[f64], n: usize) -> f64 {
    let ln = (n.max(2) as f64).ln();
    exceed_share(draws_t, psi_hat / ln)
}

fn exceed_share(draws: &[f64], level: f64) -> f64 {
    if draws.is_empty() {
        return 1.0;
    }
    draws.iter().filter(|&&t| t > level).count() as f64 / draws.len() as f64
}

pub fn bootstrap_u(
    g: &QuadraticGof,
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    fits: &NuisanceFits,
    a_hat: &FunctionCoef,
    beta_hat_at_a: f64,
    xi: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    crate::error::check_dim("multiplier rows", g.n, xi.nrows())?;
    let at_zero = gof::influence_column_full(g, data, basis_evals, fits, a_hat, 0.0)?;
    let at_beta = gof::influence_column_full(g, data, basis_evals, fits, a_hat, beta_hat_at_a)?;
    let diff = at_zero - at_beta;
    let n = g.n as f64;
    Ok((xi.transpose() * diff).iter().map(|v| (v / n).abs()).collect())
}

/// Order statistic `V_(k)` with `k = ceil((1 - alpha) M)`.
pub fn upper_quantile(draws: &[f64], alpha: f64) -> f64 {
    if draws.is_empty() {
        return 0.0;
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let k = (((1.0 - alpha) * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    sorted[k - 1]
}

pub fn mixture_draws(draws_t: &[f64], draws_u: &[f64], pi: f64) -> Vec<f64> {
    draws_t
        .iter()
        .zip(draws_u)
        .map(|(t, u)| pi * t + (1.0 - pi) * u)
        .collect()
}

pub fn confidence_interval(psi_hat: f64, draws_t: &[f64], draws_u: &[f64], pi: f64, alpha: f64) -> (f64, f64) {
    let s = upper_quantile(&mixture_draws(draws_t, draws_u, pi), alpha).max(0.0);
    ((psi_hat - s).max(0.0), psi_hat + s)
}

/// Candidate levels placed between consecutive eigenvalues of the pencil
/// `(L, 2 H1)`, so that successive levels admit one more direction, plus a
/// level at which the complexity constraint is inactive.
pub fn default_lambda_grid(g: &QuadraticGof, l: &DMatrix<f64>) -> Result<Vec<f64>> {
    let cone = RatioCone::new(l, &g.h1, 1.0)?;
    let spec = cone.whitened_spectrum();
    let floor = spec.max() * 1e-300;
    let mut grid: Vec<f64> = spec
        .as_slice()
        .windows(2)
        .map(|w| 0.5 * (w[0].max(floor) * w[1].max(floor)).sqrt())
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    let top = spec.max().max(f64::MIN_POSITIVE);
    grid.push(top);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    Ok(grid)
}

/// Pick `lambda` by K-fold cross-validation of the held-out one-step
/// goodness-of-fit at the training maximizer. Ties go to the smallest level.
pub fn select_lambda(
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    fits: &NuisanceFits,
    l: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    CvPlan::new(data, basis_evals, fits, l, grid, folds, seed)?.select()
}

/// Mean held-out loss per grid entry, in the order of the sorted grid.
pub fn cv_losses(
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    fits: &NuisanceFits,
    l: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    CvPlan::new(data, basis_evals, fits, l, grid, folds, seed)?.losses()
}

struct FoldForms {
    train: Vec<usize>,
    test: Vec<usize>,
    cone: RatioCone,
    h1_train: DMatrix<f64>,
    h1_test: DMatrix<f64>,
    h2_train: DVector<f64>,
    h2_test: DVector<f64>,
    const0_test: f64,
}

/// Fold structure of the `lambda` cross-validation. Keeping the per-fold
/// curvature forms lets the bootstrap repeat the selection with perturbed
/// linear terms.
pub struct CvPlan {
    grid: Vec<f64>,
    folds: Vec<FoldForms>,
    n: usize,
}

impl CvPlan {
    pub fn new(
        data: &Dataset,
        basis_evals: &DMatrix<f64>,
        fits: &NuisanceFits,
        l: &DMatrix<f64>,
        grid: &[f64],
        folds: usize,
        seed: u64,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("lambda grid is empty".into()));
        }
        if grid.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("lambda grid entries must be positive".into()));
        }
        let n = data.n();
        if folds < 2 || n < 2 * folds {
            return Err(Error::InvalidInput(format!(
                "lambda selection needs folds >= 2 and n >= 2 * folds (n = {n}, folds = {folds})"
            )));
        }
        let mut sorted = grid.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let labels = fold_labels(n, folds, seed ^ 0x6c61_6d62);
        let mut forms = Vec::with_capacity(folds);
        for fold in 0..folds {
            let (train, test) = split_by_fold(&labels, fold);
            let g_train = assemble_rows(data, basis_evals, fits, &train)?;
            let g_test = assemble_rows(data, basis_evals, fits, &test)?;
            forms.push(FoldForms {
                cone: RatioCone::new(l, &g_train.h1, 1.0)?,
                train,
                test,
                h1_train: g_train.h1,
                h1_test: g_test.h1,
                h2_train: g_train.h2,
                h2_test: g_test.h2,
                const0_test: g_test.const0,
            });
        }
        Ok(Self {
            grid: sorted,
            folds: forms,
            n,
        })
    }

    /// Sorted candidate levels.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Held-out loss of one fold for every grid level, dropping the part
    /// that does not depend on the direction.
    fn fold_terms(&self, f: &FoldForms, h2_train: &DVector<f64>, h2_test: &DVector<f64>) -> Result<Vec<f64>> {
        let c = f.cone.rotate(h2_train)?;
        self.grid
            .iter()
            .map(|&lambda| {
                let (_, z, _) = f.cone.solve_rotated(&c, 2.0 * lambda);
                let Some(z) = z else { return Ok(0.0) };
                let a = f.cone.unrotate(&z)?;
                let curvature = a.dot(&(&f.h1_train * &a));
                if !(curvature > 0.0) {
                    return Ok(0.0);
                }
                let beta = h2_train.dot(&a) / curvature;
                Ok(-2.0 * beta * h2_test.dot(&a) + beta * beta * a.dot(&(&f.h1_test * &a)))
            })
            .collect()
    }

    pub fn losses(&self) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.grid.len()];
        for f in &self.folds {
            let terms = self.fold_terms(f, &f.h2_train, &f.h2_test)?;
            let w = f.test.len() as f64;
            for (t, v) in total.iter_mut().zip(terms) {
                *t += w * (f.const0_test + v);
            }
        }
        Ok(total.into_iter().map(|t| t / self.n as f64).collect())
    }

    pub fn select(&self) -> Result<f64> {
        let losses = self.losses()?;
        let best = argmin(&losses).ok_or_else(|| Error::Numerical("no finite cross-validation loss".into()))?;
        Ok(self.grid[best])
    }

    /// Grid index chosen by each bootstrap draw when the linear terms are
    /// replaced by their multiplier analogues `-Phi^T xi / (2 n)` per fold.
    fn select_draws(&self, phi: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<Vec<usize>> {
        let m = xi.ncols();
        let perturbed = |rows: &[usize]| -> DMatrix<f64> {
            let p = linalg::select_rows(phi, rows);
            let x = linalg::select_rows(xi, rows);
            p.transpose() * x * (-0.5 / rows.len() as f64)
        };
        let per_fold: Vec<(DMatrix<f64>, DMatrix<f64>)> =
            self.folds.iter().map(|f| (perturbed(&f.train), perturbed(&f.test))).collect();
        (0..m)
            .into_par_iter()
            .map(|k| {
                let mut total = vec![0.0; self.grid.len()];
                for (f, (btr, bte)) in self.folds.iter().zip(&per_fold) {
                    let terms = self.fold_terms(f, &btr.column(k).into_owned(), &bte.column(k).into_owned())?;
                    let w = f.test.len() as f64;
                    for (t, v) in total.iter_mut().zip(terms) {
                        *t += w * v;
                    }
                }
                Ok(argmin(&total).unwrap_or(0))
            })
            .collect()
    }
}

/// Multiplier bootstrap that repeats the cross-validated choice of `lambda`
/// on every draw. Returns the draws and the level used by each.
pub fn bootstrap_t_reselect(
    g: &QuadraticGof,
    l: &DMatrix<f64>,
    plan: &CvPlan,
    xi: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    crate::error::check_dim("multiplier rows", g.n, xi.nrows())?;
    let choice = plan.select_draws(&g.phi, xi)?;
    let cone = RatioCone::new(l, &g.h1, 1.0)?;
    let b = multiplier_functionals(&g.phi, xi);
    let draws: Result<Vec<f64>> = (0..b.ncols())
        .into_par_iter()
        .map(|k| Ok(cone.solve_at(&b.column(k).into_owned(), 2.0 * plan.grid[choice[k]])?.value / 4.0))
        .collect();
    Ok((draws?, choice.iter().map(|&c| plan.grid[c]).collect()))
}

fn assemble_rows(data: &Dataset, basis_evals: &DMatrix<f64>, fits: &NuisanceFits, rows: &[usize]) -> Result<QuadraticGof> {
    gof::assemble(&data.subset(rows), &linalg::select_rows(basis_evals, rows), &fits.subset(rows))
}

/// Everything the estimator computes on a sample before inference.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub basis: crate::basis::Basis,
    pub basis_evals: DMatrix<f64>,
    pub fits: NuisanceFits,
}

/// Basis on `[W | X]` and nuisance fits on `W`.
pub fn prepare(data: &Dataset, spec: &KernelSpec, config: &InferenceConfig) -> Result<Prepared> {
    spec.validate()?;
    let points = data.wx();
    let nodes = select_nodes(&points, spec.max_nodes, config.seed);
    let basis = build_basis(&nodes, spec)?;
    let basis_evals = eval_basis(&basis, &points)?;
    let mut ncfg = config.nuisance.clone();
    ncfg.seed = config.seed;
    let fits = fit_nuisances(data, &basis_evals, &ncfg)?;
    Ok(Prepared {
        basis,
        basis_evals,
        fits,
    })
}

/// Basis, nuisances, goodness-of-fit, `lambda`, estimate and bootstrap.
pub fn run_inference(data: &Dataset, spec: &KernelSpec, config: &InferenceConfig) -> Result<InferenceResult> {
    config.validate()?;
    let n = data.n();
    if n < 4 * config.folds {
        return Err(Error::InvalidInput(format!(
            "sample size {n} is below 4 x folds = {}",
            4 * config.folds
        )));
    }
    let prep = prepare(data, spec, config)?;
    infer_prepared(data, &prep, &prep.basis.complexity_matrix, config)
}

/// Inference given a prepared basis and nuisances and a complexity form.
pub fn infer_prepared(data: &Dataset, prep: &Prepared, l: &DMatrix<f64>, config: &InferenceConfig) -> Result<InferenceResult> {
    config.validate()?;
    let n = data.n();
    let (select_rows, infer_rows): (Vec<usize>, Vec<usize>) = if config.split {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x7370_6c69_74));
        let half = n / 2;
        let mut a = idx[..half].to_vec();
        let mut b = idx[half..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    } else {
        ((0..n).collect(), (0..n).collect())
    };

    let sub = data.subset(&infer_rows);
    let evals = linalg::select_rows(&prep.basis_evals, &infer_rows);
    let fits = prep.fits.subset(&infer_rows);
    let g = gof::assemble(&sub, &evals, &fits)?;

    match config.lambda {
        LambdaChoice::Fixed(lambda) => infer_with_lambda(&g, &sub, &evals, &fits, l, lambda, None, config),
        LambdaChoice::Cv => {
            let sel_data = data.subset(&select_rows);
            let sel_evals = linalg::select_rows(&prep.basis_evals, &select_rows);
            let sel_fits = prep.fits.subset(&select_rows);
            let grid = if config.lambda_grid.is_empty() {
                let g_sel = gof::assemble(&sel_data, &sel_evals, &sel_fits)?;
                default_lambda_grid(&g_sel, l)?
            } else {
                config.lambda_grid.clone()
            };
            let plan = CvPlan::new(&sel_data, &sel_evals, &sel_fits, l, &grid, config.folds, config.seed)?;
            let lambda = plan.select()?;
            // With splitting the level is independent of the inference half.
            let reselect = if config.split { None } else { Some(&plan) };
            infer_with_lambda(&g, &sub, &evals, &fits, l, lambda, reselect, config)
        }
    }
}

/// Estimate, bootstrap draws, p-value and interval at a fixed `lambda`.
pub fn infer_with_lambda(
    g: &QuadraticGof,
    data: &Dataset,
    basis_evals: &DMatrix<f64>,
    fits: &NuisanceFits,
    l: &DMatrix<f64>,
    lambda: f64,
    reselect: Option<&CvPlan>,
    config: &InferenceConfig,
) -> Result<InferenceResult> {
    let (psi_hat, a_hat) = estimate_psi(g, l, lambda)?;
    let beta = if psi_hat > 0.0 { gof::beta_hat(g, &a_hat).unwrap_or(0.0) } else { 0.0 };
    let xi = rademacher_table(g.n, config.m, config.seed);
    let draws_t = match reselect {
        Some(plan) => bootstrap_t_reselect(g, l, plan, &xi)?.0,
        None => bootstrap_t_with(g, l, lambda, &xi)?,
    };
    let draws_u = bootstrap_u(g, data, basis_evals, fits, &a_hat, beta, &xi)?;
    let p = p_value(psi_hat, &draws_t);
    let pi = pi_n(psi_hat, &draws_t, g.n);
    let draws_v = mixture_draws(&draws_t, &draws_u, pi);
    let s = upper_quantile(&draws_v, config.alpha).max(0.0);
    Ok(InferenceResult {
        psi_hat,
        a_hat: a_hat.0.iter().copied().collect(),
        beta_hat_at_a: beta,
        p_value: p,
        pi_n: pi,
        ci: ((psi_hat - s).max(0.0), psi_hat + s),
        draws_t,
        draws_u,
        draws_v,
        lambda_used: lambda,
    })
}
