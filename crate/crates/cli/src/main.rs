//! `qbr` command line: quantize / moments / fit / sketch / likelihood / sim.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure. Failures print a machine-readable JSON object to
//! stderr: `{"error":{"code":..,"kind":..,"message":..}}`.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::Deserialize;
use serde_json::json;

use qbr::likelihood::{fisher_information, ScalarModel};
use qbr::moments::estimate_moments;
use qbr::quantize::{ClampMode, QuantizedDataset, ResolvedRanges};
use qbr::regress::fit_quantized;
use qbr::simlab::{
    run_are_study, run_coverage_study, run_mse_study, run_sketch_study, transmission_model,
    with_threads, ExperimentReport, Scenario, TransmissionScheme,
};
use qbr::sketch::{sketch_then_quantize, SketchConfig, SketchKind};
use qbr::sparse::{
    compute_debias_matrix, compute_debias_matrix_auto, debias, default_debias_mu, fit_lasso,
    LassoConfig,
};
use qbr::{format, Error as CoreError};

#[derive(Parser)]
#[command(name = "qbr", version, about = "Linear regression from 1-bit quantized data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a CSV dataset into a .qbr container
    Quantize(QuantizeArgs),
    /// Print moment estimates of a .qbr dataset as JSON
    Moments {
        /// Input .qbr file
        input: PathBuf,
    },
    /// Fit the regression estimator on a .qbr dataset
    Fit(FitArgs),
    /// Sketch a CSV dataset down to m rows, then quantize into .qbr
    Sketch(SketchArgs),
    /// Collision probability, its derivative, and Fisher information (d = 1)
    Likelihood(LikelihoodArgs),
    /// Run a simulation study from a JSON config
    Sim(SimArgs),
}

#[derive(Args)]
struct CsvInput {
    /// CSV input path, or '-' for stdin
    #[arg(long)]
    input: String,
    /// Treat the first row as a header
    #[arg(long)]
    has_header: bool,
    /// Zero-based response column (default: last column)
    #[arg(long)]
    y_col: Option<usize>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    csv: CsvInput,
    /// Predictor range bound
    #[arg(long = "R")]
    r: f64,
    /// Response range bound
    #[arg(long = "L")]
    l: f64,
    /// Master seed for the dither streams
    #[arg(long)]
    seed: u64,
    /// Error on out-of-range values instead of clamping
    #[arg(long)]
    strict: bool,
    /// Output .qbr path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input .qbr file
    input: PathBuf,
    /// Confidence level for intervals
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Solve the l1-penalized problem instead of the plain plug-in fit
    #[arg(long)]
    lasso: bool,
    /// Penalty strength (required with --lasso)
    #[arg(long, requires = "lasso")]
    lambda: Option<f64>,
    /// Optional l1-ball radius constraint
    #[arg(long, requires = "lasso")]
    radius: Option<f64>,
    /// Debias the penalized estimate and report intervals
    #[arg(long, requires = "lasso")]
    debias: bool,
    /// Slack for the approximate inverse (default 0.1 sqrt(log d / n))
    #[arg(long, requires = "debias")]
    mu: Option<f64>,
}

#[derive(Args)]
struct SketchArgs {
    #[command(flatten)]
    csv: CsvInput,
    /// Number of sketched rows
    #[arg(long)]
    m: usize,
    /// Sketch distribution: gaussian | ternary
    #[arg(long, default_value = "gaussian")]
    kind: String,
    /// Master seed for sketch and dither streams
    #[arg(long)]
    seed: u64,
    /// Predictor range bound for quantization
    #[arg(long = "R")]
    r: f64,
    /// Response range bound for quantization
    #[arg(long = "L")]
    l: f64,
    /// Output .qbr path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LikelihoodArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long = "R")]
    r: f64,
    #[arg(long = "L")]
    l: f64,
}

#[derive(Args)]
struct SimArgs {
    /// Study name: mse | sketch | coverage | are | transmission
    study: String,
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size (default: available parallelism)
    #[arg(long)]
    threads: Option<usize>,
    /// Write per-replication records as CSV
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Write the full report as JSON (default: stdout)
    #[arg(long)]
    out_json: Option<PathBuf>,
}

enum AppError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AppError::Usage(_) => "usage",
            AppError::Data(_) => "data",
            AppError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numeric(m) => m,
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::NotPositiveDefinite { .. }
            | CoreError::QuadratureNonConvergence { .. }
            | CoreError::Infeasible { .. }
            | CoreError::NoInteriorMaximum { .. }
            | CoreError::DegenerateProbability { .. }
            | CoreError::SingularDesign => AppError::Numeric(msg),
            CoreError::InvalidConfig(_) => AppError::Usage(msg),
            _ => AppError::Data(msg),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion
            ) {
                print!("{e}");
                std::process::exit(0);
            }
            report_error(&AppError::Usage(e.to_string()));
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            report_error(&e);
            std::process::exit(e.code());
        }
    }
}

fn report_error(e: &AppError) {
    let payload = json!({
        "error": { "code": e.code(), "kind": e.kind(), "message": e.message() }
    });
    eprintln!("{payload}");
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Quantize(args) => cmd_quantize(args),
        Command::Moments { input } => cmd_moments(&input),
        Command::Fit(args) => cmd_fit(args),
        Command::Sketch(args) => cmd_sketch(args),
        Command::Likelihood(args) => cmd_likelihood(args),
        Command::Sim(args) => cmd_sim(args),
    }
}

fn read_csv(input: &CsvInput) -> Result<(Array2<f64>, Array1<f64>), AppError> {
    let text = if input.input == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| AppError::Data(format!("reading stdin: {e}")))?;
        buf
    } else {
        std::fs::read_to_string(&input.input)
            .map_err(|e| AppError::Data(format!("reading {}: {e}", input.input)))?
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && input.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(AppError::Data(format!(
                    "missing value at line {}, column {}",
                    lineno + 1,
                    col + 1
                )));
            }
            let value: f64 = cell.parse().map_err(|_| {
                AppError::Data(format!(
                    "unparseable value '{cell}' at line {}, column {}",
                    lineno + 1,
                    col + 1
                ))
            })?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(AppError::Data(format!(
                    "ragged CSV: line {} has {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(AppError::Data("empty CSV input".into()));
    }
    let cols = rows[0].len();
    if cols < 2 {
        return Err(AppError::Data(
            "need at least one predictor column and one response column".into(),
        ));
    }
    let y_col = input.y_col.unwrap_or(cols - 1);
    if y_col >= cols {
        return Err(AppError::Usage(format!(
            "--y-col {y_col} out of range for {cols} columns"
        )));
    }
    let n = rows.len();
    let d = cols - 1;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == y_col {
                y[i] = v;
            } else {
                x[(i, k)] = v;
                k += 1;
            }
        }
    }
    Ok((x, y))
}

fn cmd_quantize(args: QuantizeArgs) -> Result<(), AppError> {
    let (x, y) = read_csv(&args.csv)?;
    let ranges = ResolvedRanges::from_rl(args.r, args.l).map_err(AppError::from)?;
    let mode = if args.strict {
        ClampMode::Strict
    } else {
        ClampMode::Clamp
    };
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, args.seed, mode)?;
    format::write_dataset(&args.out, &ds)?;
    let summary = json!({
        "n": ds.n(),
        "d": ds.d(),
        "R": args.r,
        "L": args.l,
        "seed": args.seed,
        "clampEvents": ds.clamp_events(),
        "payloadBytes": format::payload_len(ds.n(), ds.d()),
        "out": args.out,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn cmd_moments(input: &Path) -> Result<(), AppError> {
    let ds = format::read_dataset::<f64>(input)?;
    let moments = estimate_moments(&ds)?;
    println!("{}", serde_json::to_string_pretty(&moments).unwrap());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), AppError> {
    let ds = format::read_dataset::<f64>(&args.input)?;
    if !args.lasso {
        let fit = fit_quantized(&ds, args.level)?;
        println!("{}", serde_json::to_string_pretty(&fit).unwrap());
        return Ok(());
    }
    let lambda = args
        .lambda
        .ok_or_else(|| AppError::Usage("--lasso requires --lambda".into()))?;
    let moments = estimate_moments(&ds)?;
    let mut cfg = LassoConfig::new(lambda);
    cfg.ball_radius = args.radius;
    let lasso_fit = fit_lasso(&moments, &cfg)?;
    let mut output = json!({
        "beta": lasso_fit.beta.to_vec(),
        "support": lasso_fit.support(),
        "converged": lasso_fit.converged,
        "iterations": lasso_fit.iterations,
        "objective": lasso_fit.objective,
        "lambda": lambda,
        "n": ds.n(),
        "d": ds.d(),
    });
    if args.debias {
        let (m_matrix, mu_used) = match args.mu {
            Some(mu) => (compute_debias_matrix(&moments, mu)?, mu),
            None => compute_debias_matrix_auto(&moments, default_debias_mu(ds.d(), ds.n()))?,
        };
        let result = debias(&moments, lasso_fit.beta.view(), &ds, &m_matrix, args.level)?;
        let se: Vec<f64> = result.per_coord_var.iter().map(|v| v.sqrt()).collect();
        output["betaDb"] = json!(result.beta_db);
        output["se"] = json!(se);
        output["ci"] = json!(result.ci);
        output["level"] = json!(args.level);
        output["infNormResidual"] = json!(result.inf_norm_residual);
        output["mu"] = json!(mu_used);
    }
    println!("{}", serde_json::to_string_pretty(&output).unwrap());
    Ok(())
}

fn cmd_sketch(args: SketchArgs) -> Result<(), AppError> {
    let (x, y) = read_csv(&args.csv)?;
    let kind = match args.kind.as_str() {
        "gaussian" => SketchKind::GaussianIid,
        "ternary" => SketchKind::TernaryAchlioptas,
        other => {
            return Err(AppError::Usage(format!(
                "unknown sketch kind '{other}' (use gaussian or ternary)"
            )))
        }
    };
    let cfg = SketchConfig {
        m: args.m,
        kind,
        seed: args.seed,
    };
    let policy = qbr::quantize::RangePolicy::Fixed {
        r: args.r,
        l: args.l,
    };
    let ds = sketch_then_quantize(x.view(), y.view(), &cfg, &policy, ClampMode::Clamp)?;
    format::write_dataset(&args.out, &ds)?;
    let summary = json!({
        "m": ds.n(),
        "d": ds.d(),
        "kind": args.kind,
        "seed": args.seed,
        "clampEvents": ds.clamp_events(),
        "out": args.out,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn cmd_likelihood(args: LikelihoodArgs) -> Result<(), AppError> {
    let model = ScalarModel::new(args.beta, args.sigma, args.r, args.l)?;
    let fi = fisher_information(&model)?;
    let output = json!({
        "pi": fi.pi,
        "piDot": fi.pi_dot,
        "fisherInfo": fi.info,
    });
    println!("{}", serde_json::to_string_pretty(&output).unwrap());
    Ok(())
}

#[derive(Deserialize)]
struct MseStudyFile {
    scenario: Scenario<f64>,
    sigma_grid: Vec<f64>,
    reps: u32,
}

#[derive(Deserialize)]
struct SketchStudyFile {
    scenario: Scenario<f64>,
    m_grid: Vec<usize>,
    reps: u32,
}

#[derive(Deserialize)]
struct CoverageStudyFile {
    scenario: Scenario<f64>,
    reps: u32,
    #[serde(default = "default_level")]
    level: f64,
    #[serde(default)]
    lasso: Option<LassoConfig<f64>>,
    #[serde(default)]
    debias_mu: Option<f64>,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Deserialize)]
struct AreStudyFile {
    snr_grid: Vec<(f64, f64)>,
    n: usize,
    reps: u32,
    range_multiplier: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct TransmissionFile {
    n: u64,
    d: u64,
    rate_bps: f64,
    #[serde(default)]
    m: Option<u64>,
    #[serde(default)]
    header_bits: u64,
}

fn cmd_sim(args: SimArgs) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| AppError::Data(format!("reading {}: {e}", args.config.display())))?;

    if args.study == "transmission" {
        let cfg: TransmissionFile =
            serde_json::from_str(&text).map_err(|e| AppError::Data(format!("bad config: {e}")))?;
        let full =
            transmission_model(cfg.n, cfg.d, cfg.rate_bps, TransmissionScheme::Full64)?;
        let quant = transmission_model(
            cfg.n,
            cfg.d,
            cfg.rate_bps,
            TransmissionScheme::Quantized {
                header_bits: cfg.header_bits,
            },
        )?;
        let mut output = json!({
            "full64Seconds": full,
            "quantizedSeconds": quant,
            "ratioQuantizedToFull": quant / full,
        });
        if let Some(m) = cfg.m {
            let sk = transmission_model(
                cfg.n,
                cfg.d,
                cfg.rate_bps,
                TransmissionScheme::SketchQuantized {
                    m,
                    header_bits: cfg.header_bits,
                },
            )?;
            output["sketchQuantizedSeconds"] = json!(sk);
        }
        emit_report_text(&serde_json::to_string_pretty(&output).unwrap(), None, &args)?;
        return Ok(());
    }

    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    let seed_override = args.seed;
    let report: ExperimentReport = with_threads(threads, || -> Result<_, AppError> {
        match args.study.as_str() {
            "mse" => {
                let mut cfg: MseStudyFile = serde_json::from_str(&text)
                    .map_err(|e| AppError::Data(format!("bad config: {e}")))?;
                if let Some(seed) = seed_override {
                    cfg.scenario.seed = seed;
                }
                Ok(run_mse_study(&cfg.scenario, &cfg.sigma_grid, cfg.reps)?)
            }
            "sketch" => {
                let mut cfg: SketchStudyFile = serde_json::from_str(&text)
                    .map_err(|e| AppError::Data(format!("bad config: {e}")))?;
                if let Some(seed) = seed_override {
                    cfg.scenario.seed = seed;
                }
                Ok(run_sketch_study(&cfg.scenario, &cfg.m_grid, cfg.reps)?)
            }
            "coverage" => {
                let mut cfg: CoverageStudyFile = serde_json::from_str(&text)
                    .map_err(|e| AppError::Data(format!("bad config: {e}")))?;
                if let Some(seed) = seed_override {
                    cfg.scenario.seed = seed;
                }
                Ok(run_coverage_study(
                    &cfg.scenario,
                    cfg.reps,
                    cfg.level,
                    cfg.lasso,
                    cfg.debias_mu,
                )?)
            }
            "are" => {
                let mut cfg: AreStudyFile = serde_json::from_str(&text)
                    .map_err(|e| AppError::Data(format!("bad config: {e}")))?;
                if let Some(seed) = seed_override {
                    cfg.seed = seed;
                }
                Ok(run_are_study(
                    &cfg.snr_grid,
                    cfg.n,
                    cfg.reps,
                    cfg.range_multiplier,
                    cfg.seed,
                )?)
            }
            other => Err(AppError::Usage(format!(
                "unknown study '{other}' (use mse, sketch, coverage, are, or transmission)"
            ))),
        }
    })?;

    emit_report_text(&report.to_json(), Some(&report), &args)?;
    Ok(())
}

fn emit_report_text(
    json_text: &str,
    report: Option<&ExperimentReport>,
    args: &SimArgs,
) -> Result<(), AppError> {
    if let Some(path) = &args.out_json {
        std::fs::write(path, json_text)
            .map_err(|e| AppError::Data(format!("writing {}: {e}", path.display())))?;
    } else {
        println!("{json_text}");
    }
    if let Some(path) = &args.out_csv {
        let csv = report.map(ExperimentReport::to_csv).unwrap_or_default();
        std::fs::write(path, csv)
            .map_err(|e| AppError::Data(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}
