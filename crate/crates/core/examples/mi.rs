//! Independence test between two scalar variables.
//!
//!     cargo run --release --example mi

use boundary_infer::mi::{run_mi_test, MiConfig, PairSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases: Vec<(&str, Vec<f64>, Vec<f64>)> = Vec::new();

    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    cases.push(("independent uniforms", x, y));

    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| 0.5 * v + 0.75f64.sqrt() * { let e: f64 = StandardNormal.sample(&mut rng); e })
        .collect();
    cases.push(("gaussian, rho = 0.5", x, y));

    // Uncorrelated but dependent.
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v + rng.random_range(-0.2..0.2)).collect();
    cases.push(("y = x^2 + noise", x, y));

    let config = MiConfig::default();
    for (name, x, y) in cases {
        let r = run_mi_test(&PairSample::new(x, y)?, &config)?;
        println!(
            "{name:>21}: psi* {:.5}, psi** {:.5}, p-value {:.3}, reject {}",
            r.psi_star,
            r.psi_dstar.unwrap_or(f64::NAN),
            r.p_value,
            r.reject
        );
    }
    Ok(())
}
