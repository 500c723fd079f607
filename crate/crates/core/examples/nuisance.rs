//! Cross-fitted kernel ridge estimates of E[Y | W] and E[h_j(W, X) | W].
//!
//!     cargo run --release --example nuisance

use boundary_infer::basis::{build_basis, eval_basis, KernelSpec};
use boundary_infer::data::Dataset;
use boundary_infer::nuisance::{fit_nuisances, NuisanceConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let x = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let truth = DVector::from_fn(n, |i, _| (3.0 * w[(i, 0)]).sin());
    let y = DVector::from_fn(n, |i, _| truth[i] + 0.5 * x[(i, 0)] + rng.random_range(-0.5..0.5));
    let data = Dataset::new(w, x, y)?;

    let basis = build_basis(&data.wx(), &KernelSpec::default())?;
    let evals = eval_basis(&basis, &data.wx())?;
    for cross_fit in [false, true] {
        let config = NuisanceConfig {
            cross_fit,
            ..NuisanceConfig::default()
        };
        let fits = fit_nuisances(&data, &evals, &config)?;
        let rmse = ((&fits.mu_y - &truth).norm_squared() / n as f64).sqrt();
        println!(
            "cross_fit={cross_fit}: ridge_y {:.0e}, ridge_h {:.0e}, rmse of E[Y|W] {:.4}",
            fits.ridge_y, fits.ridge_h, rmse
        );
    }

    // Predictions at new covariate values come from the full-sample fit.
    let fits = fit_nuisances(&data, &evals, &NuisanceConfig::default())?;
    let grid = DMatrix::from_column_slice(5, 1, &[-0.8, -0.4, 0.0, 0.4, 0.8]);
    let pred = fits.predictor.predict_y(&grid);
    for (w, p) in grid.iter().zip(pred.iter()) {
        println!("w = {w:+.1}: predicted {p:+.3}, true {:+.3}", (3.0 * w).sin());
    }
    Ok(())
}
