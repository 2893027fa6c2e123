//! Command-line front end: matrix loading, solver runs, JSON/CSV reports and
//! trace linting.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};
use thiserror::Error;

use crate::error::LewisError;
use crate::linalg::DenseMatrix;
use crate::solver::{solve, SolverConfig, SolverReport, Variant};
use crate::verify::ellipsoid_containment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Csv,
    MatrixMarket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Parallel,
    Sequential,
    OneStep,
    CohenPeng,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Parallel => Variant::Parallel,
            VariantArg::Sequential => Variant::Sequential,
            VariantArg::OneStep => Variant::OneStep,
            VariantArg::CohenPeng => Variant::CohenPeng,
        }
    }
}

/// Problems reading an input matrix.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("dimension error: {rows} rows and {cols} columns (need rows >= cols >= 1)")]
    Dimension { rows: usize, cols: usize },
    #[error("row {0} is zero")]
    ZeroRow(usize),
}

pub fn load_matrix(path: &Path, format: InputFormat) -> Result<DenseMatrix, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    match format {
        InputFormat::Csv => parse_csv(&text),
        InputFormat::MatrixMarket => parse_matrix_market(&text),
    }
}

fn parse_value(field: &str, line: u64, column: usize) -> Result<f64, LoadError> {
    let v: f64 = field.trim().parse().map_err(|_| LoadError::Parse {
        line,
        column,
        message: format!("not a number: {:?}", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(LoadError::Parse {
            line,
            column,
            message: format!("non-finite value {v}"),
        });
    }
    Ok(v)
}

fn build(rows: usize, cols: usize, data: Vec<f64>) -> Result<DenseMatrix, LoadError> {
    if cols == 0 || rows < cols {
        return Err(LoadError::Dimension { rows, cols });
    }
    DenseMatrix::new(rows, cols, data).map_err(|e| match e {
        LewisError::ZeroRow(i) => LoadError::ZeroRow(i),
        LewisError::Dimension { rows, cols } => LoadError::Dimension { rows, cols },
        other => LoadError::Parse {
            line: 0,
            column: 0,
            message: other.to_string(),
        },
    })
}

/// Comma-separated values, one matrix row per line, no header.
pub fn parse_csv(text: &str) -> Result<DenseMatrix, LoadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| LoadError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(LoadError::Parse {
                    line,
                    column: record.len().min(c) + 1,
                    message: format!("expected {c} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            data.push(parse_value(field, line, j + 1)?);
        }
        rows += 1;
    }
    build(rows, cols.unwrap_or(0), data)
}

/// Matrix Market `array` (dense, column-major) or `coordinate` files with a
/// `real` or `integer` field and `general` symmetry.
pub fn parse_matrix_market(text: &str) -> Result<DenseMatrix, LoadError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    let (_, header) = lines.next().ok_or(LoadError::Parse {
        line: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(LoadError::Parse {
            line: 1,
            column: 1,
            message: "expected a '%%MatrixMarket matrix <format> <field> <symmetry>' header".into(),
        });
    }
    let dense = match tokens[2].as_str() {
        "array" => true,
        "coordinate" => false,
        other => {
            return Err(LoadError::Parse {
                line: 1,
                column: 3,
                message: format!("unsupported format {other}"),
            })
        }
    };
    if !matches!(tokens[3].as_str(), "real" | "integer" | "double") {
        return Err(LoadError::Parse {
            line: 1,
            column: 4,
            message: format!("unsupported field {}", tokens[3]),
        });
    }
    if tokens[4] != "general" {
        return Err(LoadError::Parse {
            line: 1,
            column: 5,
            message: format!("unsupported symmetry {}", tokens[4]),
        });
    }
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or(LoadError::Parse {
        line: 2,
        column: 1,
        message: "missing size line".into(),
    })?;
    let size: Vec<&str> = size.split_whitespace().collect();
    let want = if dense { 2 } else { 3 };
    if size.len() != want {
        return Err(LoadError::Parse {
            line: size_line,
            column: 1,
            message: format!("size line needs {want} integers"),
        });
    }
    let parse_count = |s: &str, column: usize| {
        s.parse::<usize>().map_err(|_| LoadError::Parse {
            line: size_line,
            column,
            message: format!("not a count: {s:?}"),
        })
    };
    let rows = parse_count(size[0], 1)?;
    let cols = parse_count(size[1], 2)?;
    if cols == 0 || rows < cols {
        return Err(LoadError::Dimension { rows, cols });
    }
    let mut data = vec![0.0; rows * cols];
    if dense {
        let mut k = 0;
        for (line, l) in body {
            for (j, tok) in l.split_whitespace().enumerate() {
                if k == rows * cols {
                    return Err(LoadError::Parse {
                        line,
                        column: j + 1,
                        message: "more entries than the size line declares".into(),
                    });
                }
                let v = parse_value(tok, line, j + 1)?;
                data[(k % rows) * cols + k / rows] = v;
                k += 1;
            }
        }
        if k != rows * cols {
            return Err(LoadError::Parse {
                line: size_line,
                column: 1,
                message: format!("expected {} entries, found {k}", rows * cols),
            });
        }
    } else {
        let nnz = parse_count(size[2], 3)?;
        let mut seen = 0;
        for (line, l) in body {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(LoadError::Parse {
                    line,
                    column: 1,
                    message: "coordinate entries need 'row col value'".into(),
                });
            }
            let index = |s: &str, column: usize, bound: usize| -> Result<usize, LoadError> {
                match s.parse::<usize>() {
                    Ok(i) if i >= 1 && i <= bound => Ok(i - 1),
                    _ => Err(LoadError::Parse {
                        line,
                        column,
                        message: format!("index {s:?} outside 1..={bound}"),
                    }),
                }
            };
            let i = index(t[0], 1, rows)?;
            let j = index(t[1], 2, cols)?;
            data[i * cols + j] = parse_value(t[2], line, 3)?;
            seen += 1;
        }
        if seen != nnz {
            return Err(LoadError::Parse {
                line: size_line,
                column: 3,
                message: format!("expected {nnz} entries, found {seen}"),
            });
        }
    }
    build(rows, cols, data)
}

/// Everything needed for one CLI solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub input: PathBuf,
    pub format: InputFormat,
    pub p: f64,
    pub eps: f64,
    pub variant: Variant,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub max_iters_scale: f64,
    pub threads: Option<usize>,
    pub time_limit: Option<Duration>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

/// Maps a solver error to a process exit code.
pub fn exit_code_for(e: &LewisError) -> i32 {
    match e {
        LewisError::NotPositiveDefinite { .. }
        | LewisError::NonFiniteInput { .. }
        | LewisError::DimensionMismatch(_)
        | LewisError::Dimension { .. }
        | LewisError::ZeroRow(_)
        | LewisError::UnsupportedP { .. }
        | LewisError::DomainError(_) => EXIT_INPUT,
        LewisError::IterationCapExceeded { .. }
        | LewisError::TimeLimitExceeded { .. }
        | LewisError::OracleStalled { .. } => EXIT_CONVERGENCE,
        _ => EXIT_INVARIANT,
    }
}

/// Writes `f64` values with 17 significant digits.
struct RoundTripFormatter;

impl Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_17<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, RoundTripFormatter);
    value.serialize(&mut ser).map_err(io::Error::other)?;
    buf.push(b'\n');
    Ok(buf)
}

#[derive(Serialize)]
struct ReportResiduals {
    lewis_residual: f64,
    optimality_residual: f64,
    rho_max: f64,
    suboptimality_certificate: Option<f64>,
    certified_log_error: Option<f64>,
    sum_definition_weights: f64,
    ellipsoid_contained: bool,
}

#[derive(Serialize)]
struct ReportConfig<'a> {
    input: String,
    format: InputFormat,
    seed: u64,
    #[serde(flatten)]
    solver: &'a SolverConfig,
}

#[derive(Serialize)]
struct ReportIterations {
    #[serde(flatten)]
    counts: crate::solver::IterationCounts,
    t_total: usize,
    early_stopped: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    weights_optimizer: &'a [f64],
    weights_definition: &'a [f64],
    residuals: ReportResiduals,
    iterations: ReportIterations,
    trace_path: Option<String>,
    wall_ms: f64,
    converged: bool,
    config: ReportConfig<'a>,
}

/// Number of random directions in the report's containment check.
pub const CONTAINMENT_TRIALS: usize = 100;

fn report_json(manifest: &RunManifest, report: &SolverReport, a: &DenseMatrix) -> Result<Vec<u8>, String> {
    let params = report.config.params();
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    let contained = ellipsoid_containment(a, &report.weights_rounded, &params, CONTAINMENT_TRIALS, &mut rng)
        .map_err(|e| e.to_string())?;
    let r = Report {
        weights_optimizer: report.weights_optimizer.as_slice(),
        weights_definition: report.weights_definition.as_slice(),
        residuals: ReportResiduals {
            lewis_residual: report.residuals.max_relative_fixed_point_residual,
            optimality_residual: report.residuals.optimality_residual,
            rho_max: report.residuals.rho_max,
            suboptimality_certificate: report.residuals.suboptimality_certificate,
            certified_log_error: report.certified_log_error,
            sum_definition_weights: report.weights_definition.as_slice().iter().sum(),
            ellipsoid_contained: contained,
        },
        iterations: ReportIterations {
            counts: report.iterations,
            t_total: report.config.t_total,
            early_stopped: report.early_stopped,
        },
        trace_path: manifest.trace.as_ref().map(|p| p.display().to_string()),
        wall_ms: report.wall_ms,
        converged: report.converged(),
        config: ReportConfig {
            input: manifest.input.display().to_string(),
            format: manifest.format,
            seed: manifest.seed,
            solver: &report.config,
        },
    };
    to_json_17(&r).map_err(|e| e.to_string())
}

/// Trace CSV: `iter, step_type, F, rho_max, opt_residual`.
pub fn write_trace(path: &Path, report: &SolverReport) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "step_type", "F", "rho_max", "opt_residual"])?;
    for t in &report.trace {
        w.write_record([
            t.iter.to_string(),
            t.step_type.name().to_string(),
            format!("{:.16e}", t.objective),
            format!("{:.16e}", t.rho_max),
            format!("{:.16e}", t.opt_residual),
        ])?;
    }
    w.flush()
}

fn solve_in_pool(a: &DenseMatrix, cfg: &SolverConfig, threads: Option<usize>) -> Result<SolverReport, LewisError> {
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| solve(a, cfg)),
            Err(_) => solve(a, cfg),
        },
        None => solve(a, cfg),
    }
}

/// Executes a manifest; diagnostics go to standard error. Returns the exit code.
pub fn run(manifest: &RunManifest) -> i32 {
    let a = match load_matrix(&manifest.input, manifest.format) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let cfg = match SolverConfig::schedule(manifest.p, a.rows(), a.cols(), manifest.eps, manifest.variant) {
        Ok(c) => c.with_max_iters_scale(manifest.max_iters_scale),
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let cfg = match manifest.time_limit {
        Some(t) => cfg.with_time_limit(t),
        None => cfg,
    };
    let report = match solve_in_pool(&a, &cfg, manifest.threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    if let Some(path) = &manifest.trace {
        if let Err(e) = write_trace(path, &report) {
            eprintln!("error: cannot write trace {}: {e}", path.display());
            return EXIT_INPUT;
        }
    }
    let json = match report_json(manifest, &report, &a) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVARIANT;
        }
    };
    let written = match &manifest.out {
        Some(path) => fs::write(path, &json),
        None => io::stdout().write_all(&json),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write report: {e}");
        return EXIT_INPUT;
    }
    if report.converged() {
        EXIT_OK
    } else {
        eprintln!(
            "error: fixed-point residual {:.3e} exceeds eps = {:.3e}",
            report.residuals.max_relative_fixed_point_residual, cfg.eps
        );
        EXIT_CONVERGENCE
    }
}

/// Outcome of checking that a trace's objective column never increases.
#[derive(Debug, Clone, PartialEq)]
pub struct LintReport {
    pub rows: usize,
    /// `(row, increase)` for every row whose `F` exceeds its predecessor by more than the tolerance.
    pub violations: Vec<(usize, f64)>,
}

/// Checks the `F` column of a trace CSV; `fixed_point` rows are ignored.
pub fn lint_trace(path: &Path, tol: f64) -> Result<LintReport, LoadError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| LoadError::Parse {
        line: 1,
        column: 0,
        message: e.to_string(),
    })?;
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| LoadError::Parse {
            line: 1,
            column: 0,
            message: format!("missing column {name}"),
        })
    };
    let f_col = find("F")?;
    let kind_col = find("step_type")?;
    let mut previous: Option<f64> = None;
    let mut violations = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LoadError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows += 1;
        if record.get(kind_col) == Some("fixed_point") {
            continue;
        }
        let f = parse_value(record.get(f_col).unwrap_or(""), line, f_col + 1)?;
        if let Some(prev) = previous {
            if f > prev + tol {
                violations.push((i, f - prev));
            }
        }
        previous = Some(f);
    }
    Ok(LintReport { rows, violations })
}

#[derive(Debug, Parser)]
#[command(name = "lewis", version, about = "High-precision l_p Lewis weights for p > 2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute Lewis weights of a matrix.
    Solve(SolveArgs),
    /// Check that the objective column of a trace never increases.
    Lint(LintArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: InputFormat,
    #[arg(short = 'p', long = "p")]
    pub p: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "parallel")]
    pub variant: VariantArg,
    /// Report JSON path (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace CSV path.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Seed for the randomized containment check in the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub max_iters_scale: f64,
    /// Worker threads for row-parallel leverage scores (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Abort after this many seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

fn manifest_from(args: SolveArgs) -> Result<RunManifest, String> {
    if !(args.p.is_finite() && args.p > 2.0) {
        return Err(format!("p must be a finite number above 2, got {}", args.p));
    }
    if !(args.eps > 0.0 && args.eps < 1.0) {
        return Err(format!("eps must lie in (0, 1), got {}", args.eps));
    }
    if !(args.max_iters_scale > 0.0 && args.max_iters_scale.is_finite()) {
        return Err(format!("max-iters-scale must be positive, got {}", args.max_iters_scale));
    }
    if !args.input.is_file() {
        return Err(format!("input {} does not exist", args.input.display()));
    }
    for path in [&args.out, &args.trace].into_iter().flatten() {
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(format!("output directory {} does not exist", parent.display()));
        }
    }
    let time_limit = match args.time_limit {
        Some(s) if s > 0.0 && s.is_finite() => Some(Duration::from_secs_f64(s)),
        Some(s) => return Err(format!("time-limit must be positive, got {s}")),
        None => None,
    };
    Ok(RunManifest {
        input: args.input,
        format: args.format,
        p: args.p,
        eps: args.eps,
        variant: args.variant.into(),
        seed: args.seed,
        out: args.out,
        trace: args.trace,
        max_iters_scale: args.max_iters_scale,
        threads: args.threads,
        time_limit,
    })
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Solve(args) => match manifest_from(args) {
            Ok(m) => run(&m),
            Err(msg) => {
                eprintln!("error: {msg}");
                EXIT_INPUT
            }
        },
        Command::Lint(args) => match lint_trace(&args.trace, args.tol) {
            Ok(r) if r.violations.is_empty() => {
                println!("ok: {} rows, objective non-increasing", r.rows);
                EXIT_OK
            }
            Ok(r) => {
                for (row, inc) in &r.violations {
                    eprintln!("row {row}: objective increased by {inc:.3e}");
                }
                EXIT_INVARIANT
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INPUT
            }
        },
    }
}
