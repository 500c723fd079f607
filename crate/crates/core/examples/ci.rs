//! Confidence intervals from the bootstrap mixture, with a cross-validated
//! level, a fixed level, and the sample-splitting variant.
//!
//!     cargo run --release --example ci

use boundary_infer::basis::KernelSpec;
use boundary_infer::inference::{run_inference, InferenceConfig, LambdaChoice};
use boundary_infer::sim::{generate, true_psi};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate(800, 5).dataset(1)?;
    let spec = KernelSpec {
        basis_size: 30,
        ..KernelSpec::default()
    };
    println!("truth {:.4}", true_psi(1)?);
    let variants = [
        ("cross-validated", InferenceConfig::default()),
        (
            "fixed lambda = 1000",
            InferenceConfig {
                lambda: LambdaChoice::Fixed(1000.0),
                ..InferenceConfig::default()
            },
        ),
        (
            "split selection",
            InferenceConfig {
                split: true,
                ..InferenceConfig::default()
            },
        ),
    ];
    for (name, config) in variants {
        let r = run_inference(&data, &spec, &config)?;
        println!(
            "{name:>16}: psi_hat {:.4}, 95% CI [{:.4}, {:.4}], pi {:.3}",
            r.psi_hat, r.ci.0, r.ci.1, r.pi_n
        );
    }
    Ok(())
}
