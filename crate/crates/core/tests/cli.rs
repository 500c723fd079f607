use std::path::Path;
use std::process::{Command, Output};

use boundary_infer::cli::{CliError, EXIT_INPUT, EXIT_NUMERICAL};
use boundary_infer::error::Error;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundary-infer"))
        .args(args)
        .env_remove("BOUNDARY_INFER_THREADS")
        .output()
        .unwrap()
}

fn write_regression(path: &Path, n: usize) {
    let mut text = String::from("y,a,b,c\n");
    for i in 0..n {
        let t = i as f64 / n as f64;
        let a = (7.3 * t).sin();
        let b = (11.1 * t + 1.0).cos();
        let c = (3.7 * t * t).sin();
        text += &format!("{},{a},{b},{c}\n", a + 0.5 * b + 0.3 * ((13.0 * t).sin()));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn vimp_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_regression(&input, 50);
    let out = run(&["vimp", "--input", input.to_str().unwrap(), "--y", "y", "--x", "a", "--M", "50", "--basis-size", "6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "schema_version", "command", "psi_hat", "p_value", "ci", "pi_n", "lambda_used", "seed", "n", "J", "a_hat",
        "beta_hat_at_a", "draws_t", "draws_u", "draws_v", "config",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["n"], 50);
    assert_eq!(v["J"], 6);
    assert_eq!(v["config"]["w"], serde_json::json!(["b", "c"]));
    assert_eq!(v["config"]["kernel"]["basis_size"], 6);
    assert_eq!(v["config"]["inference"]["m"], 50);
}

#[test]
fn output_file_and_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    let output = dir.path().join("r.csv");
    write_regression(&input, 60);
    let out = run(&[
        "ci", "--input", input.to_str().unwrap(), "--y", "y", "--x", "b,c", "--w", "a", "--M", "40", "--lambda", "2.5",
        "--format", "csv", "--output", output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(output).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "psi_hat,p_value,ci_lower,ci_upper,pi_n,lambda_used,alpha,seed,n,J");
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[5], "2.5");
}

#[test]
fn bad_cells_report_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    std::fs::write(&input, "y,x,w\n1,2,3\n2,3,4\n3,NaN,5\n").unwrap();
    let out = run(&["vimp", "--input", input.to_str().unwrap(), "--y", "y", "--x", "x"]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    std::fs::write(&input, "y,x,w\n1,2,3\n2,,4\n").unwrap();
    let out = run(&["vimp", "--input", input.to_str().unwrap(), "--y", "y", "--x", "x"]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_regression(&input, 40);
    let p = input.to_str().unwrap();
    for args in [
        vec!["vimp", "--input", p, "--y", "y", "--x", "y"],
        vec!["vimp", "--input", p, "--y", "y", "--x", "missing"],
        vec!["vimp", "--input", p, "--y", "y", "--x", "a", "--lambda", "zero"],
        vec!["vimp", "--input", p, "--y", "y", "--x", "a", "--alpha", "1.5"],
        vec!["vimp", "--input", "/nonexistent/file.csv", "--y", "y", "--x", "a"],
        vec!["vimp", "--input", p, "--y", "y", "--x", "a", "--basis-size", "100"],
        vec!["--threads", "0", "vimp", "--input", p, "--y", "y", "--x", "a"],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(&args).status.code(), Some(EXIT_INPUT), "{args:?}");
    }
}

#[test]
fn numerical_failures_map_to_three() {
    assert_eq!(CliError::Estimation(Error::DegenerateKernel("x".into())).exit_code(), EXIT_NUMERICAL);
    assert_eq!(CliError::Estimation(Error::InvalidInput("x".into())).exit_code(), EXIT_INPUT);
}

#[test]
fn mi_test_needs_two_columns_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    std::fs::write(&one, "u\n1\n2\n3\n").unwrap();
    assert_eq!(run(&["mi-test", "--input", one.to_str().unwrap()]).status.code(), Some(EXIT_INPUT));

    let two = dir.path().join("two.csv");
    let mut text = String::from("u,v\n");
    for i in 0..80 {
        let t = i as f64 * 0.61;
        text += &format!("{},{}\n", t.sin(), (t * 1.7).cos());
    }
    std::fs::write(&two, text).unwrap();
    let args = ["mi-test", "--input", two.to_str().unwrap(), "--M", "60", "--seed", "4"];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run(&args).stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    for key in ["psi_check", "psi_star", "psi_dstar", "p_value", "pi_star", "lambda", "sigma", "config"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_regression(&input, 40);
    let out = Command::new(env!("CARGO_BIN_EXE_boundary-infer"))
        .args(["vimp", "--input", input.to_str().unwrap(), "--y", "y", "--x", "a", "--M", "30"])
        .env("BOUNDARY_INFER_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let bad = Command::new(env!("CARGO_BIN_EXE_boundary-infer"))
        .args(["vimp", "--input", input.to_str().unwrap(), "--y", "y", "--x", "a"])
        .env("BOUNDARY_INFER_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_INPUT));
}

#[test]
fn simulate_writes_both_files_and_refuses_to_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("study");
    let d = out_dir.to_str().unwrap();
    let args = ["simulate", "--output", d, "--n-grid", "100", "--reps", "1", "--predictors", "3", "--M", "30"];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stderr.is_empty(), "progress goes to standard error");
    let csv = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(csv.starts_with("n,predictor,method,reps,failures,warnings,truth,mean_psi_hat,rmse"));
    assert_eq!(csv.lines().count(), 4);
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["reps"], 1);
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);

    let again = run(&args);
    assert_eq!(again.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&again.stderr).contains("resum"));
}
