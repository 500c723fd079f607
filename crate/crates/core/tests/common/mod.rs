#![allow(dead_code)]

use boundary_infer::basis::{build_basis, eval_basis, KernelSpec};
use boundary_infer::data::Dataset;
use boundary_infer::gof::{assemble, QuadraticGof};
use boundary_infer::nuisance::{fit_nuisances, NuisanceConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn quad(m: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.dot(&(m * a))
}

/// Unit vector for angles on the sphere in dimension 1..=3.
pub fn direction(j: usize, theta: f64, phi: f64) -> DVector<f64> {
    match j {
        1 => DVector::from_element(1, 1.0),
        2 => DVector::from_column_slice(&[theta.cos(), theta.sin()]),
        3 => DVector::from_column_slice(&[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]),
        _ => panic!("direction grid only for J <= 3"),
    }
}

/// Dense grid over directions maximizing a homogeneous score. Coarse sweep
/// followed by a fine sweep around the best coarse point.
pub fn direction_grid_max<F: Fn(&DVector<f64>) -> f64>(j: usize, step: f64, score: F) -> (f64, DVector<f64>) {
    let pi = std::f64::consts::PI;
    let mut best = (f64::NEG_INFINITY, DVector::zeros(j));
    let consider = |u: DVector<f64>, best: &mut (f64, DVector<f64>)| {
        let s = score(&u);
        if s > best.0 {
            *best = (s, u);
        }
    };
    match j {
        1 => consider(direction(1, 0.0, 0.0), &mut best),
        2 => {
            let n = (pi / step).ceil() as usize;
            let mut best_theta = 0.0;
            let mut best_val = f64::NEG_INFINITY;
            for i in 0..=n {
                let t = i as f64 * step;
                let s = score(&direction(2, t, 0.0));
                if s > best_val {
                    best_val = s;
                    best_theta = t;
                }
            }
            let fine = step * 1e-3;
            for i in 0..=6000 {
                consider(direction(2, best_theta - 3.0 * step + i as f64 * fine, 0.0), &mut best);
            }
        }
        3 => {
            // Fine sweeps around every coarse local maximum: at a kink where
            // both constraints bind the coarse values are only first-order
            // accurate, so ranking by coarse value can miss the peak.
            let coarse = 1e-2;
            let nt = (pi / coarse).ceil() as usize;
            let np = 2 * (pi / coarse).ceil() as usize;
            let grid: Vec<Vec<f64>> = (0..=nt)
                .map(|i| (0..np).map(|k| score(&direction(3, i as f64 * coarse, k as f64 * coarse))).collect())
                .collect();
            let mut ranked = Vec::new();
            for i in 0..=nt {
                for k in 0..np {
                    let v = grid[i][k];
                    let is_peak = (-1i64..=1).all(|di| {
                        (-1i64..=1).all(|dk| {
                            let ii = i as i64 + di;
                            if ii < 0 || ii > nt as i64 {
                                return true;
                            }
                            let kk = (k as i64 + dk).rem_euclid(np as i64) as usize;
                            grid[ii as usize][kk] <= v
                        })
                    });
                    if is_peak {
                        ranked.push((v, i as f64 * coarse, k as f64 * coarse));
                    }
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let window = 3.0 * coarse;
            let nf = (2.0 * window / step).ceil() as usize;
            for &(_, t0, p0) in ranked.iter().take(12) {
                for i in 0..=nf {
                    for k in 0..=nf {
                        let t = t0 - window + i as f64 * step;
                        let p = p0 - window + k as f64 * step;
                        consider(direction(3, t, p), &mut best);
                    }
                }
            }
        }
        _ => panic!("direction grid only for J <= 3"),
    }
    best
}

/// Random PSD matrix of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, j: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(rank, j, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a
}

pub fn random_vector(rng: &mut ChaCha8Rng, j: usize) -> DVector<f64> {
    DVector::from_fn(j, |_, _| rng.random_range(-2.0..2.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rank-1 QCQP value by a dense grid over directions: along `u` the largest
/// feasible multiple is `1/sqrt(max(u'Lu/c_L, u'Qu/c_Q))`.
pub fn qcqp_grid_value(b: &DVector<f64>, l: &DMatrix<f64>, q: &DMatrix<f64>, c_l: f64, c_q: f64, step: f64) -> f64 {
    direction_grid_max(b.len(), step, |u| {
        let gauge = (quad(l, u) / c_l).max(quad(q, u) / c_q);
        b.dot(u).powi(2) / gauge
    })
    .0
}

/// Ratio `(b'a)^2 / a'Qa` maximized over grid directions satisfying `a'La <= c a'Qa`.
pub fn cone_grid_value(b: &DVector<f64>, l: &DMatrix<f64>, q: &DMatrix<f64>, level: f64, step: f64) -> f64 {
    direction_grid_max(b.len(), step, |u| {
        let qu = quad(q, u);
        if quad(l, u) <= level * qu {
            b.dot(u).powi(2) / qu
        } else {
            0.0
        }
    })
    .0
    .max(0.0)
}

/// Small regression problem `y = sin(2x) + w + noise` with its basis
/// evaluations, assembled quadratic and complexity form.
pub fn regression_instance(seed: u64, n: usize, j: usize) -> (Dataset, DMatrix<f64>, QuadraticGof, DMatrix<f64>) {
    let mut r = rng(seed);
    let w = DMatrix::<f64>::from_fn(n, 1, |_, _| r.random_range(-1.0..1.0));
    let x = DMatrix::<f64>::from_fn(n, 1, |_, _| r.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |i, _| (2.0 * x[(i, 0)]).sin() + w[(i, 0)] + r.random_range(-0.5..0.5));
    let data = Dataset::new(w, x, y).unwrap();
    let spec = KernelSpec {
        basis_size: j,
        max_nodes: n.min(60),
        ..KernelSpec::default()
    };
    let basis = build_basis(&data.wx(), &spec).unwrap();
    let evals = eval_basis(&basis, &data.wx()).unwrap();
    let fits = fit_nuisances(&data, &evals, &NuisanceConfig::default()).unwrap();
    let g = assemble(&data, &evals, &fits).unwrap();
    let l = basis.complexity_matrix.clone();
    (data, evals, g, l)
}

