//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage, 3 parse, 4 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::blockquant::{compute_scales, measure_sqnr, quantize_dequantize, ScalingStrategy};
use crate::curves::{build_curve, CurveKind, CurveRequest, GridSpec, Spacing};
use crate::error::{Error, Result};
use crate::fitter::{fit, staged_fit, FitProblem, FitResult, LawModel, LossKind, StagedReport};
use crate::fpformat::{decode, FpCode, FpFormat, ENUMERATION_LIMIT};
use crate::implications::{self, ComputeBudget, DEFAULT_K, DEFAULT_LOG2B};
use crate::lawmodels::{LawConstants, RunRecord, TensorEquivParams, PRESET_CAPYBARA_PAPER};
use crate::qlinear::TargetSet;
use crate::runlog;
use crate::tensor_io;
use crate::toy::{run_toy_training, OptimizerConfig, ToyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Directory searched for `<name>.txt` preset files before the built-ins.
pub const PRESET_DIR_ENV: &str = "FPSCALE_PRESET_DIR";

#[derive(Debug, Parser)]
#[command(name = "fpscale", version, about = "Floating-point quantization and scaling-law toolkit")]
pub struct Cli {
    /// JSON file whose keys supply default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a loss law to a run log.
    Fit(FitArgs),
    /// Evaluate a loss law at given points.
    Predict(PredictArgs),
    /// Emit plot data series.
    Curves(CurvesArgs),
    /// Quantize and dequantize a tensor file.
    Quantize(QuantizeArgs),
    /// List every value of a format.
    Enumerate(EnumerateArgs),
    /// Train a toy MLP with quantized GEMMs next to a full-precision twin.
    Simulate(SimulateArgs),
    /// Optimal layouts, critical data size and compute-optimal precision.
    #[command(subcommand)]
    Implications(ImplicationsCommand),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConstantsArgs {
    /// Preset file (`key = value` per line).
    #[arg(long, value_name = "FILE")]
    pub constants: Option<PathBuf>,
    /// JSON report written by `fit`.
    #[arg(long, value_name = "FILE")]
    pub fit_report: Option<PathBuf>,
    /// Named preset (default: capybara-paper).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Huber,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "CSV")]
    pub runlog: PathBuf,
    #[arg(long, default_value = "capybara")]
    pub model: LawModel,
    /// Run the three-stage procedure (unified model only).
    #[arg(long)]
    pub staged: bool,
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    #[arg(long, default_value_t = crate::fitter::DEFAULT_HUBER_THRESHOLD)]
    pub huber_threshold: f64,
    #[arg(long, default_value_t = crate::fitter::DEFAULT_STARTS)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tensor: TensorArgs,
}

/// `log2 B ≈ N^omega / (xi D^eta_t)` for tensor-wise rows with blank log2B.
#[derive(Debug, Args, Clone, Default)]
pub struct TensorArgs {
    #[arg(long)]
    pub tensor_omega: Option<f64>,
    #[arg(long)]
    pub tensor_xi: Option<f64>,
    #[arg(long)]
    pub tensor_eta_t: Option<f64>,
}

impl TensorArgs {
    fn params(&self) -> Result<Option<TensorEquivParams>> {
        match (self.tensor_omega, self.tensor_xi, self.tensor_eta_t) {
            (None, None, None) => Ok(None),
            (Some(omega), Some(xi), Some(eta_t)) => Ok(Some(TensorEquivParams { omega, xi, eta_t })),
            _ => Err(Error::Config(
                "--tensor-omega, --tensor-xi and --tensor-eta-t go together".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub source: ConstantsArgs,
    /// Law to evaluate with the constants (a fit report uses its own model).
    #[arg(long)]
    pub model: Option<LawModel>,
    /// `N,D,E,M,log2B`; repeatable.
    #[arg(long, value_name = "N,D,E,M,LOG2B")]
    pub point: Vec<String>,
    /// CSV with columns N, D, E, M, log2B (others ignored).
    #[arg(long, value_name = "CSV")]
    pub batch: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeriesFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub kind: CurveKind,
    #[arg(long)]
    pub min: Option<f64>,
    #[arg(long)]
    pub max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, value_enum, default_value = "log")]
    pub spacing: SpacingArg,
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_LOG2B)]
    pub log2b: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: f64,
    #[arg(long, value_delimiter = ',', default_value = "E8M7,E4M3,E2M1")]
    pub formats: Vec<FpFormat>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    pub bits: Vec<u32>,
    #[arg(long, value_enum, default_value = "csv")]
    pub output_format: SeriesFormat,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub source: ConstantsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    Log,
    Linear,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Text tensor, or binary when the extension is `.bin`/`.f32`.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[arg(long)]
    pub fmt: FpFormat,
    /// `block`, `block:B`, `channel` or `tensor`.
    #[arg(long, default_value = "block")]
    pub strategy: String,
    /// Block size for `--strategy block`.
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    /// Writes one scale per line.
    #[arg(long, value_name = "FILE")]
    pub scales: Option<PathBuf>,
    /// Writes the summary as JSON.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub fmt: FpFormat,
    /// Emit `bits,sign,exponent,mantissa,value` CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "E4M3")]
    pub fmt: FpFormat,
    #[arg(long, default_value = "block")]
    pub strategy: String,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    #[arg(long, default_value = "P2,P4,P6")]
    pub targets: TargetSet,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Layer widths, input first.
    #[arg(long, value_delimiter = ',', default_value = "32,64,64,32")]
    pub arch: Vec<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub bf16_output: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ImplicationsCommand {
    /// Integer exponent/mantissa split per total bit width.
    OptimalLayout(LayoutArgs),
    /// Token count beyond which more data raises loss.
    CriticalData(CriticalArgs),
    /// Loss-minimizing precision under a compute budget.
    OptimalPrecision(PrecisionArgs),
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub bits: Vec<u32>,
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub source: ConstantsArgs,
}

#[derive(Debug, Args)]
pub struct CriticalArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub n: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub fmt: Vec<FpFormat>,
    #[arg(long, default_value_t = DEFAULT_LOG2B)]
    pub log2b: f64,
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub source: ConstantsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionMode {
    FixedD,
    FixedN,
    Joint,
}

#[derive(Debug, Args)]
pub struct PrecisionArgs {
    #[arg(long, value_enum)]
    pub mode: PrecisionMode,
    /// Compute budgets in FLOPs.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub budget: Vec<f64>,
    /// Model sizes for `fixed-n`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n: Vec<f64>,
    /// Token counts for `fixed-d`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub d: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_LOG2B)]
    pub log2b: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: f64,
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub source: ConstantsArgs,
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } => EXIT_PARSE,
        Error::Io(_) => EXIT_IO,
        Error::Underdetermined(_)
        | Error::InsufficientSpan(_)
        | Error::NoCriticalPoint(_)
        | Error::InvalidConstants(_)
        | Error::Numeric(_) => EXIT_NUMERIC,
        Error::InvalidFormat(_)
        | Error::EnumerationRefused { .. }
        | Error::InvalidInput(_)
        | Error::Config(_)
        | Error::Shape(_) => EXIT_USAGE,
    }
}

fn command() -> clap::Command {
    fn override_self(cmd: clap::Command) -> clap::Command {
        let subs: Vec<_> = cmd.get_subcommands().cloned().collect();
        let mut cmd = cmd.args_override_self(true);
        for sub in subs {
            let name = sub.get_name().to_string();
            let sub = override_self(sub);
            cmd = cmd.mut_subcommand(name, |_| sub);
        }
        cmd
    }
    override_self(Cli::command())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Removes `--config FILE` and splices the file's flags in right after the
/// subcommand path, so flags given on the command line win.
///
/// The JSON object may hold flags directly or nest them under subcommand
/// names, e.g. `{"implications": {"critical-data": {"n": [1e9]}}}`.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::Config("--config needs a file".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(path) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path)?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(e.line(), e.column(), format!("config: {e}")))?;

    let cmd = Cli::command();
    let mut cur = &cmd;
    let mut path_names = Vec::new();
    let mut insert_at = 1.min(rest.len());
    for (i, a) in rest.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if s.starts_with('-') {
            break;
        }
        match cur.find_subcommand(s.as_ref()) {
            Some(sub) => {
                path_names.push(sub.get_name().to_string());
                cur = sub;
                insert_at = i + 1;
            }
            None => break,
        }
    }
    let mut obj = root
        .as_object()
        .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
    for name in &path_names {
        if let Some(Value::Object(inner)) = obj.get(name) {
            obj = inner;
        }
    }
    let mut flags = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> Result<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                Value::Bool(b) => Ok(b.to_string()),
                _ => Err(Error::Config(format!("config key {key:?} has an unsupported value"))),
            }
        };
        match value {
            Value::Object(_) | Value::Null => {}
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) => {}
            Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
                flags.push(flag);
                flags.push(joined);
            }
            v => {
                flags.push(flag);
                flags.push(scalar(v)?);
            }
        }
    }
    let tail = rest.split_off(insert_at);
    rest.extend(flags.into_iter().map(OsString::from));
    rest.extend(tail);
    Ok(rest)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Curves(a) => cmd_curves(&a),
        Command::Quantize(a) => cmd_quantize(&a),
        Command::Enumerate(a) => cmd_enumerate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Implications(ImplicationsCommand::OptimalLayout(a)) => cmd_layout(&a),
        Command::Implications(ImplicationsCommand::CriticalData(a)) => cmd_critical(&a),
        Command::Implications(ImplicationsCommand::OptimalPrecision(a)) => cmd_precision(&a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Tokens with a `T` (10^12) suffix from 1e12 up, raw below.
pub fn format_tokens(d: f64) -> String {
    if d >= 1e12 {
        format!("{:.4}T", d / 1e12)
    } else {
        format!("{d:.0}")
    }
}

/// Where law constants come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstantsSource {
    Constants(LawConstants),
    /// A fit report's model and parameters.
    Fit(FitResult),
}

impl ConstantsSource {
    pub fn law_constants(&self) -> Result<LawConstants> {
        match self {
            ConstantsSource::Constants(c) => Ok(*c),
            ConstantsSource::Fit(r) => r.constants().ok_or_else(|| {
                Error::Config(format!(
                    "fit report holds a {} fit, which does not determine all eight constants",
                    r.model
                ))
            }),
        }
    }
}

/// Resolves a preset by name: `$FPSCALE_PRESET_DIR/<name>.txt` first, then
/// the built-ins.
pub fn resolve_preset(name: &str) -> Result<LawConstants> {
    if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
        let path = Path::new(&dir).join(format!("{name}.txt"));
        if path.is_file() {
            return LawConstants::parse_preset(&fs::read_to_string(path)?);
        }
    }
    LawConstants::preset(name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
}

pub fn resolve_constants(a: &ConstantsArgs) -> Result<ConstantsSource> {
    let given = [a.constants.is_some(), a.fit_report.is_some(), a.preset.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given > 1 {
        return Err(Error::Config(
            "give at most one of --constants, --fit-report and --preset".into(),
        ));
    }
    if let Some(p) = &a.constants {
        return Ok(ConstantsSource::Constants(LawConstants::parse_preset(&fs::read_to_string(p)?)?));
    }
    if let Some(p) = &a.fit_report {
        let text = fs::read_to_string(p)?;
        let report: FitReport = serde_json::from_str(&text)
            .map_err(|e| Error::parse(e.line(), e.column(), format!("fit report: {e}")))?;
        return Ok(ConstantsSource::Fit(report.result));
    }
    let name = a.preset.as_deref().unwrap_or(PRESET_CAPYBARA_PAPER);
    Ok(ConstantsSource::Constants(resolve_preset(name)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FitReport {
    pub runlog: String,
    pub rows: usize,
    pub result: FitResult,
    pub constants: Option<LawConstants>,
    pub staged: Option<StagedReport>,
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let data = runlog::read_runlog(&a.runlog, a.tensor.params()?.as_ref())?;
    let loss = match a.loss {
        LossArg::Squared => LossKind::Squared,
        LossArg::Huber => LossKind::Huber {
            threshold: a.huber_threshold,
        },
    };
    let (result, staged) = if a.staged {
        if a.model != LawModel::Capybara {
            return Err(Error::Config("--staged fits the unified (capybara) model only".into()));
        }
        let report = staged_fit(&data, a.seed, a.starts)?;
        (report.stage3.clone(), Some(report))
    } else {
        let problem = FitProblem::new(a.model, data.clone())
            .with_seed(a.seed)
            .with_starts(a.starts)
            .with_loss(loss);
        (fit(&problem)?, None)
    };
    let converged = result.converged;
    let report = FitReport {
        runlog: a.runlog.display().to_string(),
        rows: data.len(),
        constants: result.constants(),
        result,
        staged,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Numeric(e.to_string()))?;
    emit(a.out.as_deref(), &(json + "\n"))?;
    if converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: fit did not converge within the iteration limit");
        Ok(EXIT_NUMERIC)
    }
}

fn parse_point(s: &str) -> Result<RunRecord> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!("point {s:?} must be N,D,E,M,log2B")));
    }
    let v = parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.parse::<f64>()
                .map_err(|_| Error::parse(1, i + 1, format!("bad number {p:?} in point")))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = RunRecord::new(v[0], v[1], v[2], v[3], v[4], 1.0);
    r.validate()?;
    Ok(r)
}

fn parse_batch(src: &str) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(src.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(1, 1, e.to_string()))?.clone();
    let cols = ["N", "D", "E", "M", "log2B"]
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::parse(1, 1, format!("batch header lacks column {name}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(0, 1, e.to_string()))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let v = cols
            .iter()
            .map(|&c| {
                let field = row.get(c).unwrap_or("");
                field
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line, c + 1, format!("bad number {field:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let r = RunRecord::new(v[0], v[1], v[2], v[3], v[4], 1.0);
        r.validate().map_err(|e| Error::parse(line, 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

fn cmd_predict(a: &PredictArgs) -> Result<i32> {
    let source = resolve_constants(&a.source)?;
    let mut points = Vec::new();
    for p in &a.point {
        points.push(parse_point(p)?);
    }
    if let Some(path) = &a.batch {
        points.extend(parse_batch(&fs::read_to_string(path)?)?);
    }
    if points.is_empty() {
        return Err(Error::Config("give --point or --batch".into()));
    }
    let (model, params) = match (&source, a.model) {
        (ConstantsSource::Fit(r), None) => (r.model, r.params.clone()),
        (ConstantsSource::Fit(r), Some(m)) if m == r.model => (r.model, r.params.clone()),
        (src, model) => {
            let model = model.unwrap_or(LawModel::Capybara);
            let c = src.law_constants()?;
            let params = model.from_constants(&c).ok_or_else(|| {
                Error::Config(format!("{model} has parameters beyond the eight law constants"))
            })?;
            (model, params)
        }
    };
    let mut out = String::from("N,D,E,M,log2B,loss\n");
    for r in &points {
        let loss = model.eval(&params, r);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite prediction at {r:?}")));
        }
        writeln!(out, "{},{},{},{},{},{}", r.n, r.d, r.e, r.m, r.log2b, loss).unwrap();
    }
    emit(None, &out)?;
    Ok(EXIT_OK)
}

fn cmd_curves(a: &CurvesArgs) -> Result<i32> {
    let constants = resolve_constants(&a.source)?.law_constants()?;
    let mut req = CurveRequest::new(a.kind, constants);
    let (min, max) = match (a.kind, a.min, a.max) {
        (_, Some(lo), Some(hi)) => (Some(lo), Some(hi)),
        (CurveKind::PoptVsC, None, None) => (Some(1e21), Some(1e31)),
        (_, lo, hi) => (lo, hi),
    };
    if let (Some(min), Some(max)) = (min, max) {
        req.grid = Some(GridSpec {
            min,
            max,
            points: a.points,
            spacing: match a.spacing {
                SpacingArg::Log => Spacing::Log,
                SpacingArg::Linear => Spacing::Linear,
            },
        });
    }
    req.n = a.n;
    req.d = a.d;
    req.log2b = a.log2b;
    req.k = a.k;
    req.formats = a.formats.clone();
    req.bits = a.bits.clone();
    let curve = build_curve(&req)?;
    let text = match a.output_format {
        SeriesFormat::Csv => curve.to_csv(),
        SeriesFormat::Json => {
            serde_json::to_string_pretty(&curve).map_err(|e| Error::Numeric(e.to_string()))? + "\n"
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn parse_strategy(s: &str, block: usize) -> Result<ScalingStrategy> {
    if s.trim().eq_ignore_ascii_case("block") {
        Ok(ScalingStrategy::BlockWise(block))
    } else {
        s.parse()
    }
}

#[derive(Debug, Serialize)]
struct QuantizeSummary {
    format: String,
    strategy: String,
    rows: usize,
    cols: usize,
    sqnr_db: f64,
    max_abs_error: f64,
    scale_count: usize,
    scale_min: f64,
    scale_max: f64,
    scale_mean: f64,
    effective_log2b: f64,
}

fn cmd_quantize(a: &QuantizeArgs) -> Result<i32> {
    let strat = parse_strategy(&a.strategy, a.block)?;
    let t = tensor_io::read_tensor(&a.input)?;
    let q = quantize_dequantize(&t, a.fmt, strat)?;
    let scales = compute_scales(&t, a.fmt, strat)?;
    let sqnr = measure_sqnr(&t, &q.dequantized)?;
    let max_abs_error = t
        .data()
        .iter()
        .zip(q.dequantized.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    tensor_io::write_tensor(&a.output, &q.dequantized)?;
    if let Some(p) = &a.scales {
        let text: String = scales.iter().map(|s| format!("{s:e}\n")).collect();
        fs::write(p, text)?;
    }
    let summary = QuantizeSummary {
        format: a.fmt.to_string(),
        strategy: strat.to_string(),
        rows: t.rows(),
        cols: t.cols(),
        sqnr_db: sqnr,
        max_abs_error,
        scale_count: scales.len(),
        scale_min: scales.iter().copied().fold(f64::INFINITY, f64::min),
        scale_max: scales.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        scale_mean: scales.iter().sum::<f64>() / scales.len().max(1) as f64,
        effective_log2b: q.effective_log2_b,
    };
    if let Some(p) = &a.summary {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Numeric(e.to_string()))?;
        fs::write(p, json + "\n")?;
    }
    let sqnr_text = if sqnr.is_infinite() {
        "inf (exact)".to_string()
    } else {
        format!("{sqnr:.3} dB")
    };
    let text = format!(
        "format      {}\nstrategy    {}\nshape       {}x{}\nSQNR        {sqnr_text}\nmax |err|   {:e}\nscales      {} (min {:e}, max {:e}, mean {:e})\n",
        summary.format,
        summary.strategy,
        summary.rows,
        summary.cols,
        summary.max_abs_error,
        summary.scale_count,
        summary.scale_min,
        summary.scale_max,
        summary.scale_mean
    );
    emit(None, &text)?;
    Ok(EXIT_OK)
}

fn cmd_enumerate(a: &EnumerateArgs) -> Result<i32> {
    let fmt = a.fmt;
    if fmt.width() > ENUMERATION_LIMIT {
        return Err(Error::EnumerationRefused {
            width: fmt.width(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let width = fmt.width() as usize;
    let mut out = String::new();
    if a.csv {
        out.push_str("bits,sign,exponent,mantissa,value\n");
    } else {
        writeln!(out, "{fmt}: bias {}, max {}, min positive {}", fmt.bias(), fmt.fp_max(), fmt.min_positive()).unwrap();
    }
    for bits in 0..fmt.code_count() as u32 {
        let code = FpCode::from_bits(bits, fmt)?;
        let v = decode(code, fmt)?;
        if a.csv {
            writeln!(
                out,
                "{bits:0width$b},{},{},{},{v}",
                code.sign, code.exponent_field, code.mantissa_field
            )
            .unwrap();
        } else {
            writeln!(out, "{bits:0width$b}  {v}").unwrap();
        }
    }
    emit(None, &out)?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut optimizer = OptimizerConfig::toy();
    if let Some(lr) = a.lr {
        optimizer.max_lr = lr;
    }
    let cfg = ToyConfig {
        arch: a.arch.clone(),
        batch: a.batch,
        steps: a.steps,
        fmt: a.fmt,
        strat: parse_strategy(&a.strategy, a.block)?,
        targets: a.targets,
        bf16_output: a.bf16_output,
        optimizer,
        ..ToyConfig::default()
    };
    let report = run_toy_training(a.seed, &cfg)?;
    let mut out = String::from("step,loss_quant,loss_baseline\n");
    let steps = report.loss_quant.len().max(report.loss_baseline.len());
    for i in 0..steps {
        let q = report.loss_quant.get(i).map(|v| v.to_string()).unwrap_or_default();
        let b = report.loss_baseline.get(i).map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{i},{q},{b}").unwrap();
    }
    emit(a.out.as_deref(), &out)?;
    eprintln!(
        "eval loss quantized {:.6e}, baseline {:.6e}, gap {:.6e}",
        report.final_quant, report.final_baseline, report.gap
    );
    if report.diverged() {
        eprintln!("error: training diverged ({:?})", report.status);
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

fn cmd_layout(a: &LayoutArgs) -> Result<i32> {
    let c = resolve_constants(&a.source)?.law_constants()?;
    let mut out = String::new();
    if a.csv {
        out.push_str("P,E,M,M_opt\n");
    } else {
        out.push_str("   P  layout     M_opt\n");
    }
    for &p in &a.bits {
        let (e, m) = implications::optimal_layout_int(p, &c)?;
        let m_opt = implications::optimal_mantissa(p as f64, &c)?;
        if a.csv {
            writeln!(out, "{p},{e},{m},{m_opt}").unwrap();
        } else {
            writeln!(out, "{p:>4}  {:<8} {m_opt:>7.4}", format!("E{e}M{m}")).unwrap();
        }
    }
    emit(None, &out)?;
    Ok(EXIT_OK)
}

fn cmd_critical(a: &CriticalArgs) -> Result<i32> {
    let c = resolve_constants(&a.source)?.law_constants()?;
    let mut out = String::new();
    if a.csv {
        out.push_str("N,format,log2B,D_crit\n");
    } else {
        out.push_str("           N  format  log2B         D_crit\n");
    }
    for &n in &a.n {
        for f in &a.fmt {
            let d = implications::critical_data_size(
                n,
                f.exponent_bits() as f64,
                f.mantissa_bits() as f64,
                a.log2b,
                &c,
            )?;
            if a.csv {
                writeln!(out, "{n},{f},{},{d}", a.log2b).unwrap();
            } else {
                writeln!(out, "{n:>12.4e}  {:<6} {:>6} {:>14}", f.to_string(), a.log2b, format_tokens(d)).unwrap();
            }
        }
    }
    emit(None, &out)?;
    Ok(EXIT_OK)
}

fn cmd_precision(a: &PrecisionArgs) -> Result<i32> {
    let c = resolve_constants(&a.source)?.law_constants()?;
    let budget = |cc: f64| {
        let mut b = ComputeBudget::new(cc);
        b.k = a.k;
        b
    };
    let mut out = String::new();
    match a.mode {
        PrecisionMode::FixedD => {
            if a.d.is_empty() {
                return Err(Error::Config("fixed-d needs --d".into()));
            }
            out.push_str(if a.csv { "D,log2B,P_opt\n" } else { "             D  log2B    P_opt\n" });
            for &d in &a.d {
                let p = implications::p_opt_fixed_d(d, a.log2b, &c)?;
                if a.csv {
                    writeln!(out, "{d},{},{p}", a.log2b).unwrap();
                } else {
                    writeln!(out, "{:>14} {:>6} {p:>8.4}", format_tokens(d), a.log2b).unwrap();
                }
            }
        }
        PrecisionMode::FixedN => {
            if a.n.is_empty() || a.budget.is_empty() {
                return Err(Error::Config("fixed-n needs --n and --budget".into()));
            }
            out.push_str(if a.csv { "C,N,P_opt,D\n" } else { "           C            N    P_opt               D\n" });
            for &cc in &a.budget {
                for &n in &a.n {
                    let b = budget(cc);
                    let p = implications::p_opt_fixed_n(n, &b, a.log2b, &c)?;
                    let d = cc / (b.k * p * n);
                    if a.csv {
                        writeln!(out, "{cc},{n},{p},{d}").unwrap();
                    } else {
                        writeln!(out, "{cc:>12.4e} {n:>12.4e} {p:>8.4} {:>15}", format_tokens(d)).unwrap();
                    }
                }
            }
        }
        PrecisionMode::Joint => {
            if a.budget.is_empty() {
                return Err(Error::Config("joint needs --budget".into()));
            }
            out.push_str(if a.csv { "C,P_opt,N_opt,D_opt\n" } else { "           C    P_opt        N_opt           D_opt\n" });
            for &cc in &a.budget {
                let o = implications::p_opt_joint(&budget(cc), a.log2b, &c)?;
                if a.csv {
                    writeln!(out, "{cc},{},{},{}", o.p, o.n, o.d).unwrap();
                } else {
                    writeln!(out, "{cc:>12.4e} {:>8.4} {:>12.4e} {:>15}", o.p, o.n, format_tokens(o.d)).unwrap();
                }
            }
        }
    }
    emit(None, &out)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn token_formatting() {
        assert_eq!(format_tokens(1.7295e15), "1729.5000T");
        assert_eq!(format_tokens(3.9e11), "390000000000");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::parse(1, 1, "x")), EXIT_PARSE);
        assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
    }

    #[test]
    fn config_flags_are_spliced_after_subcommands() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"implications": {"critical-data": {"n": [1e9, 2e9], "csv": true, "log2b": 7}}}"#).unwrap();
        let args = os(&["fpscale", "--config", cfg.to_str().unwrap(), "implications", "critical-data", "--fmt", "E4M3"]);
        let out = expand_config(args).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(
            out,
            ["fpscale", "implications", "critical-data", "--csv", "--log2b", "7", "--n", "1000000000.0,2000000000.0", "--fmt", "E4M3"]
        );
    }

    #[test]
    fn later_flags_override_earlier() {
        let m = command()
            .try_get_matches_from(["fpscale", "simulate", "--steps", "5", "--steps", "7"])
            .unwrap();
        let cli = Cli::from_arg_matches(&m).unwrap();
        match cli.command {
            Command::Simulate(s) => assert_eq!(s.steps, 7),
            _ => unreachable!(),
        }
    }

    #[test]
    fn constants_sources_are_exclusive() {
        let a = ConstantsArgs {
            constants: Some("a".into()),
            preset: Some("capybara-paper".into()),
            ..Default::default()
        };
        assert!(matches!(resolve_constants(&a), Err(Error::Config(_))));
        let d = resolve_constants(&ConstantsArgs::default()).unwrap();
        assert_eq!(d, ConstantsSource::Constants(LawConstants::capybara_paper()));
    }

    #[test]
    fn point_parsing() {
        let r = parse_point("1e9, 1e11, 4, 3, 7").unwrap();
        assert_eq!((r.n, r.log2b), (1e9, 7.0));
        assert!(parse_point("1,2,3").is_err());
        assert!(matches!(parse_point("1,x,3,4,5"), Err(Error::Parse { column: 2, .. })));
    }
}
