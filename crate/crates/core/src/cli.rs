//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::basis::KernelSpec;
use crate::data::Dataset;
use crate::error::Error;
use crate::inference::{self, InferenceConfig, InferenceResult, LambdaChoice};
use crate::mi::{self, MiConfig, PairSample};
use crate::sim::{self, Method, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "BOUNDARY_INFER_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "boundary-infer", version, about = "Variable importance and independence testing with adaptive function classes")]
pub struct Cli {
    /// Worker threads; falls back to BOUNDARY_INFER_THREADS, then all cores.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test whether the predictors in --x improve on --w.
    Vimp(RegressionArgs),
    /// Confidence interval for the improvement in fit from --x.
    Ci(RegressionArgs),
    /// Independence test between two columns.
    MiTest(MiArgs),
    /// Monte Carlo study on the built-in simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Gaussian length scale of the function class (default: median distance).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Number of basis functions J.
    #[arg(long = "basis-size")]
    pub basis_size: Option<usize>,
    /// Maximum number of kernel nodes drawn from the data.
    #[arg(long = "max-nodes")]
    pub max_nodes: Option<usize>,
}

impl KernelArgs {
    fn apply(&self, mut spec: KernelSpec) -> KernelSpec {
        if let Some(b) = self.bandwidth {
            spec.bandwidth = Some(b);
        }
        if let Some(j) = self.basis_size {
            spec.basis_size = j;
            spec.max_nodes = spec.max_nodes.max(j);
        }
        if let Some(m) = self.max_nodes {
            spec.max_nodes = m;
        }
        spec
    }
}

#[derive(Debug, Clone, Args)]
pub struct RegressionArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Write the result here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    pub y: String,
    /// Comma-separated predictor columns whose importance is assessed.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub w: Vec<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Smoothness level: a positive number or `cv`.
    #[arg(long, default_value = "cv")]
    pub lambda: String,
    /// Comma-separated candidate levels for `--lambda cv`.
    #[arg(long = "lambda-grid", value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    /// Bootstrap draws.
    #[arg(long = "M", default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validation folds for the level and the nuisances.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Select the level on one half of the data and infer on the other.
    #[arg(long)]
    pub split: bool,
    /// Use in-sample nuisance fits instead of cross-fitted ones.
    #[arg(long = "in-sample-nuisance")]
    pub in_sample_nuisance: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct MiArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// First variable (default: first column).
    #[arg(long)]
    pub x: Option<String>,
    /// Second variable (default: second column).
    #[arg(long)]
    pub y: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Cone level: a positive number or `auto`.
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long = "M", default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the direct minimization and the mixture estimate.
    #[arg(long = "no-direct")]
    pub no_direct: bool,
    /// Keep the raw margins instead of standardizing them.
    #[arg(long = "raw-margins")]
    pub raw_margins: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Directory for `summary.csv` and `report.json`; standard output if absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long = "n-grid", value_delimiter = ',', default_values_t = vec![400usize, 800, 1600])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3])]
    pub predictors: Vec<usize>,
    /// Comma-separated subset of oracle, adaptive, split.
    #[arg(long, value_delimiter = ',', default_value = "oracle,adaptive,split")]
    pub methods: Vec<String>,
    #[arg(long = "alpha-grid", value_delimiter = ',', default_values_t = vec![0.05])]
    pub alpha_grid: Vec<f64>,
    /// Level of the reported intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "M", default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Include per-replicate records in the JSON report.
    #[arg(long)]
    pub replicates: bool,
    /// Format written to standard output when --output is absent.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Failure of a CLI run, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Estimation(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Estimation(e) if e.is_validation() => EXIT_INPUT,
            CliError::Estimation(_) => EXIT_NUMERICAL,
        }
    }
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// A numeric table read from CSV.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| input_err(format!("column `{name}` not found; available: {}", self.headers.join(", "))))
    }

    fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>, CliError> {
        let cols = names.iter().map(|c| self.column(c)).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(self.rows(), cols.len(), |i, j| cols[j][i]))
    }
}

/// Read a headed, comma-separated numeric table. Empty, non-numeric and
/// non-finite cells are rejected with their data row (1-based) and column.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| input_err(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(input_err(format!("{} has no header row", path.display())));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_err(format!("row {}: {e}", row + 1)))?;
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .map_err(|_| input_err(format!("row {}, column `{}`: `{cell}` is not a number", row + 1, headers[c])))?;
            if !value.is_finite() {
                return Err(input_err(format!("row {}, column `{}`: non-finite value `{cell}`", row + 1, headers[c])));
            }
            columns[c].push(value);
        }
    }
    if columns[0].is_empty() {
        return Err(input_err(format!("{} has no data rows", path.display())));
    }
    Ok(Table { headers, columns })
}

fn parse_lambda(raw: &str, keyword: &str) -> Result<Option<f64>, CliError> {
    if raw.eq_ignore_ascii_case(keyword) {
        return Ok(None);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| input_err(format!("--lambda must be a positive number or `{keyword}`, got `{raw}`")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(input_err(format!("--lambda must be positive, got {v}")));
    }
    Ok(Some(v))
}

fn check_disjoint(y: &str, x: &[String], w: &[String]) -> Result<(), CliError> {
    let mut seen = std::collections::BTreeSet::new();
    for name in std::iter::once(y).chain(x.iter().map(String::as_str)).chain(w.iter().map(String::as_str)) {
        if !seen.insert(name) {
            return Err(input_err(format!("column `{name}` is assigned more than one role")));
        }
    }
    Ok(())
}

/// Resolved inputs of a regression command.
pub struct RegressionRun {
    pub data: Dataset,
    pub kernel: KernelSpec,
    pub config: InferenceConfig,
    pub y: String,
    pub x: Vec<String>,
    pub w: Vec<String>,
}

pub fn resolve_regression(args: &RegressionArgs) -> Result<RegressionRun, CliError> {
    let table = read_table(&args.input)?;
    let w: Vec<String> = if args.w.is_empty() {
        table
            .headers
            .iter()
            .filter(|h| **h != args.y && !args.x.contains(h))
            .cloned()
            .collect()
    } else {
        args.w.clone()
    };
    check_disjoint(&args.y, &args.x, &w)?;
    let y = DVector::from_column_slice(table.column(&args.y)?);
    let data = Dataset::new(table.matrix(&w)?, table.matrix(&args.x)?, y)?;
    let lambda = match parse_lambda(&args.lambda, "cv")? {
        Some(v) => LambdaChoice::Fixed(v),
        None => LambdaChoice::Cv,
    };
    let mut config = InferenceConfig {
        lambda,
        lambda_grid: args.lambda_grid.clone(),
        m: args.m,
        alpha: args.alpha,
        seed: args.seed,
        folds: args.folds,
        split: args.split,
        ..InferenceConfig::default()
    };
    config.nuisance.folds = args.folds;
    config.nuisance.cross_fit = !args.in_sample_nuisance;
    config.validate()?;
    let kernel = args.kernel.apply(KernelSpec::default());
    kernel.validate()?;
    Ok(RegressionRun {
        data,
        kernel,
        config,
        y: args.y.clone(),
        x: args.x.clone(),
        w,
    })
}

fn regression_payload(command: &str, run: &RegressionRun, args: &RegressionArgs, result: &InferenceResult) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "n": run.data.n(),
        "J": run.kernel.basis_size,
        "seed": run.config.seed,
        "alpha": run.config.alpha,
        "psi_hat": result.psi_hat,
        "p_value": result.p_value,
        "ci": [result.ci.0, result.ci.1],
        "pi_n": result.pi_n,
        "lambda_used": result.lambda_used,
        "a_hat": result.a_hat,
        "beta_hat_at_a": result.beta_hat_at_a,
        "draws_t": result.draws_t,
        "draws_u": result.draws_u,
        "draws_v": result.draws_v,
        "config": {
            "input": args.input.display().to_string(),
            "y": run.y,
            "x": run.x,
            "w": run.w,
            "kernel": run.kernel,
            "inference": run.config,
        },
    })
}

const REGRESSION_CSV: [&str; 10] = ["psi_hat", "p_value", "ci_lower", "ci_upper", "pi_n", "lambda_used", "alpha", "seed", "n", "J"];

fn regression_csv(payload: &Value) -> Result<String, CliError> {
    let get = |k: &str| -> String {
        match k {
            "ci_lower" => payload["ci"][0].to_string(),
            "ci_upper" => payload["ci"][1].to_string(),
            _ => payload[k].to_string(),
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REGRESSION_CSV).map_err(|e| input_err(e.to_string()))?;
    w.write_record(REGRESSION_CSV.iter().map(|k| get(k))).map_err(|e| input_err(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| input_err(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| input_err(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| input_err(format!("cannot write to standard output: {e}")))
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn cmd_regression(command: &str, args: &RegressionArgs) -> Result<Value, CliError> {
    let run = resolve_regression(args)?;
    let result = inference::run_inference(&run.data, &run.kernel, &run.config)?;
    let payload = regression_payload(command, &run, args, &result);
    let text = match args.format {
        Format::Json => pretty(&payload),
        Format::Csv => regression_csv(&payload)?,
    };
    emit(&text, args.output.as_deref())?;
    Ok(payload)
}

pub fn cmd_mi_test(args: &MiArgs) -> Result<Value, CliError> {
    let table = read_table(&args.input)?;
    let (xn, yn) = match (&args.x, &args.y) {
        (Some(x), Some(y)) => (x.clone(), y.clone()),
        _ if table.headers.len() < 2 => {
            return Err(input_err("the independence test needs two columns"));
        }
        (x, y) => (
            x.clone().unwrap_or_else(|| table.headers[0].clone()),
            y.clone().unwrap_or_else(|| table.headers[1].clone()),
        ),
    };
    if xn == yn {
        return Err(input_err("--x and --y must name different columns"));
    }
    let sample = PairSample::new(table.column(&xn)?.to_vec(), table.column(&yn)?.to_vec())?;
    let defaults = MiConfig::default();
    let config = MiConfig {
        kernel: args.kernel.apply(defaults.kernel.clone()),
        lambda: parse_lambda(&args.lambda, "auto")?,
        sigma: args.sigma,
        m: args.m,
        alpha: args.alpha,
        seed: args.seed,
        standardize: !args.raw_margins,
        direct: !args.no_direct,
    };
    let r = mi::run_mi_test(&sample, &config)?;
    let payload = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "mi-test",
        "n": r.n,
        "J": config.kernel.basis_size,
        "seed": config.seed,
        "alpha": config.alpha,
        "psi_check": r.psi_check,
        "psi_star": r.psi_star,
        "psi_dstar": r.psi_dstar,
        "pi_star": r.pi_star,
        "p_value": r.p_value,
        "reject": r.reject,
        "lambda": r.lambda,
        "sigma": r.sigma,
        "a_star": r.a_star,
        "b_star": r.b_star,
        "draws_t": r.draws_t,
        "config": {
            "input": args.input.display().to_string(),
            "x": xn,
            "y": yn,
            "mi": config,
        },
    });
    let text = match args.format {
        Format::Json => pretty(&payload),
        Format::Csv => {
            let keys = ["psi_check", "psi_star", "psi_dstar", "pi_star", "p_value", "lambda", "sigma", "alpha", "seed", "n", "J"];
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(keys).map_err(|e| input_err(e.to_string()))?;
            w.write_record(keys.iter().map(|k| payload[*k].to_string())).map_err(|e| input_err(e.to_string()))?;
            String::from_utf8(w.into_inner().map_err(|e| input_err(e.to_string()))?).expect("csv output is utf-8")
        }
    };
    emit(&text, args.output.as_deref())?;
    Ok(payload)
}

pub const SIM_CSV_FILE: &str = "summary.csv";
pub const SIM_JSON_FILE: &str = "report.json";

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Value, CliError> {
    let methods = args
        .methods
        .iter()
        .map(|m| Method::parse(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let defaults = SimConfig::default();
    let config = SimConfig {
        n_grid: args.n_grid.clone(),
        reps: args.reps,
        predictors: args.predictors.clone(),
        methods,
        alpha_grid: args.alpha_grid.clone(),
        ci_alpha: args.alpha,
        seed: args.seed,
        m: args.m,
        kernel: args.kernel.apply(defaults.kernel.clone()),
        keep_draws: false,
        ..defaults
    };
    config.validate()?;
    if let Some(dir) = &args.output {
        for f in [SIM_CSV_FILE, SIM_JSON_FILE] {
            if dir.join(f).exists() {
                return Err(input_err(format!(
                    "{} already exists; resuming a partial study is not supported, choose an empty directory",
                    dir.join(f).display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| input_err(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut report = sim::run_study_with_progress(&config, |line| eprintln!("{line}"))?;
    if !args.replicates {
        report.replicates.clear();
    }
    let mut csv_bytes = Vec::new();
    report.to_csv(&mut csv_bytes)?;
    let csv_text = String::from_utf8(csv_bytes).expect("csv output is utf-8");
    let payload = serde_json::to_value(&report).expect("report serializes");
    match &args.output {
        Some(dir) => {
            emit(&csv_text, Some(&dir.join(SIM_CSV_FILE)))?;
            emit(&pretty(&payload), Some(&dir.join(SIM_JSON_FILE)))?;
        }
        None => match args.format {
            Format::Csv => emit(&csv_text, None)?,
            Format::Json => emit(&pretty(&payload), None)?,
        },
    }
    Ok(payload)
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(input_err("--threads must be at least 1"));
        }
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = configure_threads(cli.threads).and_then(|_| match &cli.command {
        Command::Vimp(a) => cmd_regression("vimp", a),
        Command::Ci(a) => cmd_regression("ci", a),
        Command::MiTest(a) => cmd_mi_test(a),
        Command::Simulate(a) => cmd_simulate(a),
    });
    match outcome {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parse arguments (including the program name) and run.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
