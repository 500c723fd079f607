//! Drive the command-line interface in-process: write a CSV, run `vimp` and
//! `mi-test` on it, and show the exit code for a malformed request.
//!
//!     cargo run --release --example cli

use boundary_infer::cli::main_with_args;
use boundary_infer::sim::generate;
use std::fmt::Write;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("boundary-infer-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let input = dir.join("data.csv");
    let sample = generate(300, 1);
    let mut text = String::from("y,x1,x2,x3\n");
    for i in 0..sample.n() {
        writeln!(text, "{},{},{},{}", sample.y[i], sample.x[(i, 0)], sample.x[(i, 1)], sample.x[(i, 2)])?;
    }
    std::fs::write(&input, text)?;
    let input = input.to_str().expect("utf-8 path");

    let code = main_with_args(["boundary-infer", "vimp", "--input", input, "--y", "y", "--x", "x1", "--M", "200", "--format", "csv"]);
    println!("vimp exit code {code}");
    let code = main_with_args(["boundary-infer", "mi-test", "--input", input, "--x", "x1", "--y", "x2", "--M", "200", "--format", "csv"]);
    println!("mi-test exit code {code}");
    let code = main_with_args(["boundary-infer", "vimp", "--input", input, "--y", "y", "--x", "y"]);
    println!("overlapping roles exit code {code}");

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
