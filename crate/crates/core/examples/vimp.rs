//! Variable importance test on the simulation design: X1 matters, X3 does not.
//!
//!     cargo run --release --example vimp

use boundary_infer::basis::KernelSpec;
use boundary_infer::inference::{run_inference, InferenceConfig};
use boundary_infer::sim::{generate, true_psi};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = generate(600, 2024);
    let spec = KernelSpec {
        basis_size: 30,
        ..KernelSpec::default()
    };
    let config = InferenceConfig {
        seed: 1,
        ..InferenceConfig::default()
    };
    for predictor in [1, 3] {
        let data = sample.dataset(predictor)?;
        let r = run_inference(&data, &spec, &config)?;
        println!(
            "X{predictor}: psi_hat {:.4} (truth {:.4}), p-value {:.3}, lambda {:.3}, pi {:.3}",
            r.psi_hat,
            true_psi(predictor)?,
            r.p_value,
            r.lambda_used,
            r.pi_n
        );
    }
    Ok(())
}
