//! Rank-1 quadratically constrained maximization.
//!
//! [`solve`] handles `max (b^T a)^2` subject to `a^T L a <= c_L` and
//! `a^T Q a <= c_Q` through its one-dimensional convex dual
//! `min_t b^T (t L/c_L + (1-t) Q/c_Q)^{-1} b`. After one simultaneous
//! diagonalization of the two forms every dual evaluation costs `O(J)`.
//!
//! [`RatioCone`] handles the scale-free variant
//! `sup (b^T a)^2 / a^T Q a` over the cone `a^T L a <= c a^T Q a`, which is
//! the form taken by the improvement-in-fit statistics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::optim::golden_section;

const DUAL_TOL: f64 = 1e-10;
const JITTER: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Rank1Problem {
    pub b: DVector<f64>,
    pub l: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub c_l: f64,
    pub c_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Active {
    None,
    Complexity,
    Curvature,
    Both,
}

#[derive(Debug, Clone)]
pub struct Rank1Solution {
    pub a_star: DVector<f64>,
    pub value: f64,
    pub t_star: f64,
    pub active: Active,
    /// Set when the dual certificate failed and a primal search produced the answer.
    pub fallback: bool,
}

/// Factorized constraint pair, reusable across linear functionals.
#[derive(Debug, Clone)]
pub struct Rank1Solver {
    /// `S = L/c_L + Q/c_Q = R^T R`, stored as `R^T` (lower).
    r_lower: DMatrix<f64>,
    basis: DMatrix<f64>,
    /// Eigenvalues of the whitened complexity form, in `[0, 1]`.
    e: DVector<f64>,
    l_scaled: DMatrix<f64>,
    q_scaled: DMatrix<f64>,
}

fn validate_forms(l: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<usize> {
    let j = l.nrows();
    check_dim("complexity form columns", j, l.ncols())?;
    check_dim("curvature form rows", j, q.nrows())?;
    check_dim("curvature form columns", j, q.ncols())?;
    if !linalg::all_finite(l) || !linalg::all_finite(q) {
        return Err(Error::InvalidInput("constraint forms must be finite".into()));
    }
    Ok(j)
}

impl Rank1Solver {
    pub fn new(l: &DMatrix<f64>, q: &DMatrix<f64>, c_l: f64, c_q: f64) -> Result<Self> {
        let j = validate_forms(l, q)?;
        if !(c_l > 0.0 && c_l.is_finite() && c_q > 0.0 && c_q.is_finite()) {
            return Err(Error::InvalidInput("constraint levels must be positive and finite".into()));
        }
        let l_scaled = linalg::symmetrize(l) / c_l;
        let q_scaled = linalg::symmetrize(q) / c_q;
        let s = &l_scaled + &q_scaled;
        let tr = linalg::trace(&s);
        if j > 0 {
            let (ev, _) = linalg::sym_eigen_desc(&s);
            if !(tr > 0.0) || ev[j - 1] <= 1e-13 * tr {
                return Err(Error::JointlySingular);
            }
        }
        let chol = linalg::cholesky_jittered(&s, JITTER * tr.max(0.0)).map_err(|_| Error::JointlySingular)?;
        let r_lower = chol.l();
        let whitened = whiten(&r_lower, &l_scaled);
        let (mut e, basis) = if j == 0 {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        } else {
            linalg::sym_eigen_desc(&whitened)
        };
        e.apply(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self {
            r_lower,
            basis,
            e,
            l_scaled,
            q_scaled,
        })
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    /// Dual objective `b^T M(t)^{-1} b` in rotated coordinates.
    fn dual(&self, c: &DVector<f64>, t: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..c.len() {
            let ck2 = c[k] * c[k];
            if ck2 == 0.0 {
                continue;
            }
            let d = t * self.e[k] + (1.0 - t) * (1.0 - self.e[k]);
            if d <= 0.0 {
                return f64::INFINITY;
            }
            total += ck2 / d;
        }
        total
    }

    /// Evaluate the dual function at `t` for functional `b`.
    pub fn dual_at(&self, b: &DVector<f64>, t: f64) -> f64 {
        self.dual(&self.rotate(b), t)
    }

    fn rotate(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .r_lower
            .solve_lower_triangular(b)
            .unwrap_or_else(|| DVector::zeros(b.len()));
        self.basis.transpose() * y
    }

    fn unrotate(&self, z: &DVector<f64>) -> DVector<f64> {
        let y = &self.basis * z;
        self.r_lower
            .transpose()
            .solve_upper_triangular(&y)
            .unwrap_or_else(|| DVector::zeros(z.len()))
    }

    /// Whitened constraint values `(sum e z^2, sum (1-e) z^2)`.
    fn constraint_values(&self, z: &DVector<f64>) -> (f64, f64) {
        let mut pl = 0.0;
        let mut pq = 0.0;
        for k in 0..z.len() {
            let z2 = z[k] * z[k];
            pl += self.e[k] * z2;
            pq += (1.0 - self.e[k]) * z2;
        }
        (pl, pq)
    }

    fn scale_to_boundary(&self, z: &DVector<f64>) -> DVector<f64> {
        let (pl, pq) = self.constraint_values(z);
        let m = pl.max(pq);
        if m > 0.0 {
            z / m.sqrt()
        } else {
            z.clone()
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<Rank1Solution> {
        check_dim("linear functional", self.dim(), b.len())?;
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("linear functional must be finite".into()));
        }
        if b.iter().all(|&v| v == 0.0) {
            return Ok(Rank1Solution {
                a_star: DVector::zeros(b.len()),
                value: 0.0,
                t_star: 0.5,
                active: Active::None,
                fallback: false,
            });
        }
        let c = self.rotate(b);
        let best = golden_section(|t| self.dual(&c, t), 0.0, 1.0, DUAL_TOL);
        let t = best.x;
        let dual_value = best.value;

        let z = DVector::from_fn(c.len(), |k, _| {
            let d = t * self.e[k] + (1.0 - t) * (1.0 - self.e[k]);
            if d > 0.0 {
                c[k] / d
            } else {
                0.0
            }
        });
        let z = self.scale_to_boundary(&z);
        let primal = c.dot(&z).powi(2);

        if dual_value.is_finite() && (dual_value - primal).abs() <= 1e-6 * dual_value.max(1.0) {
            return Ok(self.finish(b, z, t, false));
        }
        let z = self.primal_search(&c, z);
        Ok(self.finish(b, z, t, true))
    }

    fn finish(&self, b: &DVector<f64>, z: DVector<f64>, t: f64, fallback: bool) -> Rank1Solution {
        let mut a = self.unrotate(&z);
        if b.dot(&a) < 0.0 {
            a = -a;
        }
        let value = b.dot(&a).powi(2);
        let pl = a.dot(&(&self.l_scaled * &a));
        let pq = a.dot(&(&self.q_scaled * &a));
        let active = match (pl >= 1.0 - 1e-8, pq >= 1.0 - 1e-8) {
            (true, true) => Active::Both,
            (true, false) => Active::Complexity,
            (false, true) => Active::Curvature,
            (false, false) => Active::None,
        };
        Rank1Solution {
            a_star: a,
            value,
            t_star: t,
            active,
            fallback,
        }
    }

    /// Projected ascent over boundary directions with random restarts.
    fn primal_search(&self, c: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
        let j = c.len();
        let objective = |z: &DVector<f64>| c.dot(z).powi(2);
        let mut candidates = vec![start, self.scale_to_boundary(c)];
        for step in 0..=200 {
            let t = step as f64 / 200.0;
            let z = DVector::from_fn(j, |k, _| {
                let d = t * self.e[k] + (1.0 - t) * (1.0 - self.e[k]);
                if d > 0.0 {
                    c[k] / d
                } else {
                    0.0
                }
            });
            candidates.push(self.scale_to_boundary(&z));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20 {
            let z = DVector::from_fn(j, |_, _| rng.random_range(-1.0..1.0));
            candidates.push(self.scale_to_boundary(&z));
        }
        let mut best = candidates[0].clone();
        let mut best_val = objective(&best);
        let cnorm = c.norm().max(f64::MIN_POSITIVE);
        for cand in candidates {
            let mut z = cand;
            let mut val = objective(&z);
            let mut eta = 1.0 / cnorm;
            for _ in 0..500 {
                let sign = if c.dot(&z) >= 0.0 { 1.0 } else { -1.0 };
                let trial = self.scale_to_boundary(&(&z + c * (sign * eta)));
                let tv = objective(&trial);
                if tv > val {
                    z = trial;
                    val = tv;
                    eta *= 1.5;
                } else {
                    eta *= 0.5;
                    if eta < 1e-14 / cnorm {
                        break;
                    }
                }
            }
            if val > best_val {
                best = z;
                best_val = val;
            }
        }
        best
    }
}

fn whiten(r_lower: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    // R^{-T} M R^{-1} with R^T = r_lower.
    let left = linalg::solve_lower(r_lower, m);
    let both = linalg::solve_lower(r_lower, &left.transpose());
    linalg::symmetrize(&both)
}

pub fn solve(p: &Rank1Problem) -> Result<Rank1Solution> {
    Rank1Solver::new(&p.l, &p.q, p.c_l, p.c_q)?.solve(&p.b)
}

/// Solve for several functionals sharing `L`, `Q` and the constraint levels.
pub fn solve_batch(
    l: &DMatrix<f64>,
    q: &DMatrix<f64>,
    c_l: f64,
    c_q: f64,
    bs: &[DVector<f64>],
) -> Result<Vec<Rank1Solution>> {
    let solver = Rank1Solver::new(l, q, c_l, c_q)?;
    bs.par_iter().map(|b| solver.solve(b)).collect()
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    /// Maximizer normalized to `a^T Q a = 1`; zero when the value is zero.
    pub a_star: DVector<f64>,
    pub value: f64,
    /// Whether the cone constraint binds at the maximizer.
    pub constrained: bool,
}

/// `sup (b^T a)^2 / (a^T Q a)` over `{a : a^T L a <= c a^T Q a}` for a fixed
/// positive-definite `Q` and PSD `L`.
#[derive(Debug, Clone)]
pub struct RatioCone {
    r_lower: DMatrix<f64>,
    basis: DMatrix<f64>,
    /// Ascending eigenvalues of `R^{-T} L R^{-1}`.
    ell: DVector<f64>,
    level: f64,
}

impl RatioCone {
    pub fn new(l: &DMatrix<f64>, q: &DMatrix<f64>, level: f64) -> Result<Self> {
        let j = validate_forms(l, q)?;
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::InvalidInput("cone level must be positive and finite".into()));
        }
        let q = linalg::symmetrize(q);
        let tr = linalg::trace(&q);
        if j > 0 && !(tr > 0.0) {
            return Err(Error::DegenerateDirection { curvature: tr });
        }
        let chol = linalg::cholesky_jittered(&q, JITTER * tr.max(0.0))?;
        let r_lower = chol.l();
        let (ell, basis) = if j == 0 {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        } else {
            let (d, v) = linalg::sym_eigen_desc(&whiten(&r_lower, &linalg::symmetrize(l)));
            let order: Vec<usize> = (0..j).rev().collect();
            (
                DVector::from_fn(j, |k, _| d[order[k]].max(0.0)),
                DMatrix::from_fn(j, j, |r, k| v[(r, order[k])]),
            )
        };
        Ok(Self {
            r_lower,
            basis,
            ell,
            level,
        })
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Eigenvalues of the whitened complexity form, ascending.
    pub fn whitened_spectrum(&self) -> &DVector<f64> {
        &self.ell
    }

    pub fn value(&self, b: &DVector<f64>) -> Result<f64> {
        Ok(self.solve(b)?.value)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<ConeSolution> {
        self.solve_at(b, self.level)
    }

    /// Solve with a different cone level, reusing the factorization.
    pub fn solve_at(&self, b: &DVector<f64>, level: f64) -> Result<ConeSolution> {
        let c = self.rotate(b)?;
        let (value, z, constrained) = self.solve_rotated(&c, level);
        let j = self.dim();
        let mut a = match z {
            Some(z) => self.unrotate(&z)?,
            None => DVector::zeros(j),
        };
        if b.dot(&a) < 0.0 {
            a = -a;
        }
        Ok(ConeSolution {
            a_star: a,
            value,
            constrained,
        })
    }

    /// Whitened, rotated coordinates `V^T R^{-T} b` of a functional.
    pub fn rotate(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("linear functional", self.dim(), b.len())?;
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("linear functional must be finite".into()));
        }
        if self.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let y = self
            .r_lower
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(self.basis.transpose() * y)
    }

    /// Map a rotated unit vector back to coefficients with `a^T Q a = 1`.
    pub fn unrotate(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if self.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        self.r_lower
            .transpose()
            .solve_upper_triangular(&(&self.basis * z))
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))
    }

    /// Value, unit maximizer in rotated coordinates (absent when the value
    /// is zero) and whether the cone constraint binds.
    pub fn solve_rotated(&self, c: &DVector<f64>, level: f64) -> (f64, Option<DVector<f64>>, bool) {
        let j = self.dim();
        if j == 0 || self.ell[0] > level * (1.0 + 1e-12) {
            return (0.0, None, false);
        }
        let cnorm2 = c.norm_squared();
        if cnorm2 == 0.0 {
            return (0.0, None, false);
        }
        let ratio: f64 = (0..j).map(|k| self.ell[k] * c[k] * c[k]).sum::<f64>() / cnorm2;
        let (z, constrained) = if ratio <= level {
            (c.clone(), false)
        } else {
            (self.constrained_direction(c, level), true)
        };
        let z = &z / z.norm();
        (c.dot(&z).powi(2), Some(z), constrained)
    }

    /// Maximizer on the boundary `z^T D z = level |z|^2`.
    fn constrained_direction(&self, c: &DVector<f64>, level: f64) -> DVector<f64> {
        let j = c.len();
        let ell_min = self.ell[0];
        let scale = self.ell[j - 1].max(level).max(1e-300);
        let h = |delta: f64| {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..j {
                let w = (c[k] / (self.ell[k] - ell_min + delta)).powi(2);
                num += self.ell[k] * w;
                den += w;
            }
            num / den
        };

        // h decreases as delta shrinks toward zero.
        let mut hi = scale;
        while h(hi) <= level && hi < 1e300 {
            hi *= 2.0;
        }
        let lo_floor = 1e-30 * scale;
        if h(lo_floor) > level {
            return self.hard_case(c, level);
        }
        let (mut lo, mut up) = (lo_floor.ln(), hi.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if h(mid.exp()) > level {
                up = mid;
            } else {
                lo = mid;
            }
            if up - lo < 1e-13 {
                break;
            }
        }
        let delta = lo.exp();
        DVector::from_fn(j, |k, _| c[k] / (self.ell[k] - ell_min + delta))
    }

    /// The functional has no weight on the smallest whitened eigenvalue, so
    /// the boundary is reached by mixing in that eigenvector.
    fn hard_case(&self, c: &DVector<f64>, level: f64) -> DVector<f64> {
        let j = c.len();
        let ell_min = self.ell[0];
        let tol = 1e-12 * self.ell[j - 1].max(level);
        let mut u = DVector::zeros(j);
        let mut k_min = 0;
        for k in 0..j {
            let gap = self.ell[k] - ell_min;
            if gap > tol {
                u[k] = c[k] / gap;
            } else {
                k_min = k;
            }
        }
        let u_norm2 = u.norm_squared();
        let u_d: f64 = (0..j).map(|k| self.ell[k] * u[k] * u[k]).sum();
        let slack = level - ell_min;
        if slack <= tol || u_norm2 == 0.0 {
            let mut e = DVector::zeros(j);
            e[k_min] = 1.0;
            return e;
        }
        let t2 = ((u_d - level * u_norm2) / slack).max(0.0);
        u[k_min] += t2.sqrt();
        u
    }
}
