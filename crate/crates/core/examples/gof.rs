//! One-step goodness-of-fit quadratic along a direction of the basis span.
//!
//!     cargo run --release --example gof

use boundary_infer::basis::{build_basis, eval_basis, FunctionCoef, KernelSpec};
use boundary_infer::data::Dataset;
use boundary_infer::gof::{assemble, beta_hat, gof_value, improvement, second_derivative};
use boundary_infer::nuisance::{fit_nuisances, NuisanceConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let x = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |i, _| w[(i, 0)] + (2.0 * x[(i, 0)]).sin() + rng.random_range(-0.5..0.5));
    let data = Dataset::new(w, x, y)?;
    let spec = KernelSpec {
        basis_size: 10,
        ..KernelSpec::default()
    };
    let basis = build_basis(&data.wx(), &spec)?;
    let evals = eval_basis(&basis, &data.wx())?;
    let fits = fit_nuisances(&data, &evals, &NuisanceConfig::default())?;
    let g = assemble(&data, &evals, &fits)?;
    println!("G(0) = {:.4}, |H2| = {:.4}", g.const0, g.h2.norm());

    // Nodes are the sample itself, so H1 = I and the step along H2 is exactly 1.
    println!("max |H1 - I| = {:.1e}", (&g.h1 - DMatrix::identity(10, 10)).abs().max());
    let a = FunctionCoef(g.h2.clone());
    let beta = beta_hat(&g, &a)?;
    println!("along H2: beta = {beta:.6}, G'' = {:.4}", second_derivative(&g, &a));
    for b in [0.0, 0.5 * beta, beta, 1.5 * beta] {
        println!("  G({b:.4}) = {:.5}", gof_value(&g, &a, b));
    }
    println!("improvement G(0) - G(beta) = {:.5}", improvement(&g, &a));
    Ok(())
}
