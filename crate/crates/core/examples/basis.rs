//! Build an eigenfunction basis on scattered 2-D points, inspect its
//! spectrum, and evaluate a function of the span at new locations.
//!
//!     cargo run --release --example basis

use boundary_infer::basis::{build_basis, complexity, eval_basis, FunctionCoef, KernelSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points = DMatrix::from_fn(400, 2, |_, _| rng.random_range(-1.0..1.0));
    let spec = KernelSpec {
        basis_size: 8,
        ..KernelSpec::default()
    };
    let basis = build_basis(&points, &spec)?;
    println!("nodes {}, bandwidth {:.3}", basis.nodes.nrows(), basis.bandwidth);
    println!("eigenvalues {:.4?}", basis.gamma.as_slice());

    // Sample-orthonormality of the basis on the nodes.
    let evals = eval_basis(&basis, &basis.nodes)?;
    let gram = evals.transpose() * &evals / evals.nrows() as f64;
    println!("max |gram - I| on nodes {:.2e}", (gram - DMatrix::identity(8, 8)).abs().max());

    // Rougher directions cost more.
    for j in [0, 3, 7] {
        let mut a = FunctionCoef::zeros(8);
        a.0[j] = 1.0;
        println!("complexity of h_{} = {:.3}", j + 1, complexity(&basis, &a)?);
    }

    let query = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, -0.5, 0.9, 0.9]);
    let f = eval_basis(&basis, &query)? * FunctionCoef::from_slice(&[1.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25]).0;
    println!("f at query points {:.4?}", f.as_slice());
    Ok(())
}
