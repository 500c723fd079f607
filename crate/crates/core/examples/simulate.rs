//! A small Monte Carlo study comparing the oracle, adaptive and split
//! estimators; prints the summary table as CSV.
//!
//!     cargo run --release --example simulate [reps]

use boundary_infer::sim::{run_study_with_progress, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let config = SimConfig {
        n_grid: vec![200, 400],
        reps,
        predictors: vec![1, 3],
        m: 200,
        ..SimConfig::default()
    };
    let report = run_study_with_progress(&config, |line| eprintln!("{line}"))?;
    report.to_csv(std::io::stdout().lock())?;
    Ok(())
}
