//! Rank-1 two-constraint QCQP and the ratio cone used by the estimators.
//!
//!     cargo run --release --example qcqp

use boundary_infer::qcqp::{solve, Rank1Problem, Rank1Solver, RatioCone};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let l = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0, 16.0]));
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
    let b = DVector::from_column_slice(&[0.5, -1.0, 2.0]);

    for c_l in [0.1, 1.0, 10.0] {
        let sol = solve(&Rank1Problem {
            b: b.clone(),
            l: l.clone(),
            q: q.clone(),
            c_l,
            c_q: 1.0,
        })?;
        println!(
            "c_L = {c_l:>4}: value {:.5}, active {:?}, a* = {:.4?}",
            sol.value,
            sol.active,
            sol.a_star.as_slice()
        );
    }

    // One factorization serves many right-hand sides.
    let solver = Rank1Solver::new(&l, &q, 1.0, 1.0)?;
    let values: Vec<f64> = (0..4)
        .map(|k| solver.solve(&DVector::from_column_slice(&[1.0, k as f64, -1.0])).map(|s| s.value))
        .collect::<Result<_, _>>()?;
    println!("batch values {values:.4?}");

    // sup (b'a)^2 / a'Qa over the cone a'La <= c a'Qa.
    for level in [0.5, 2.0, 50.0] {
        let cone = RatioCone::new(&l, &q, level)?;
        let s = cone.solve(&b)?;
        println!("cone level {level:>4}: value {:.5}, constrained {}", s.value, s.constrained);
    }
    Ok(())
}
