//! Command-line front end: `synth`, `fit`, `eval`, `spectrum`, `sweep` and
//! `compare`.
//!
//! Every command prints a short human summary and can write a versioned JSON
//! [`RunReport`]. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numerical or training error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{compare_budgets, fit_separate, sweep, trend_check, BudgetComparison};
use crate::fitted::{load_model, reconstruct, save_model, FittedModel};
use crate::model::{Activation, ArchSpec, DEFAULT_OMEGA0};
use crate::spectrum::{
    compare_spectra, detect_sidebands, dft_magnitude_windowed, dominant_frequency, save_spectrum,
    ReportOptions, SidebandPair, SpectralFindings, SpectrumReport, Window,
    DEFAULT_EXCLUDE_BELOW_HZ, DEFAULT_MIN_REL_MAGNITUDE,
};
use crate::synth::{gen, gen_class_suite, gen_suite, EventClass, SynthSpec};
use crate::trainer::{fit_multi_run, NmseStats, RunOutcome, TrainConfig};
use crate::waveform::{
    differential_waveform, load_capture, mean_channel_nmse, save_capture, ColumnMap, SamplingSpec,
    Waveform, WaveformSet,
};

/// Environment variable holding the default worker-thread count.
pub const WORKERS_ENV: &str = "WAVEINR_WORKERS";
/// Version of the [`RunReport`] JSON layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "waveinr", version, about = "Neural compression of power-system waveforms")]
pub struct Cli {
    /// Worker threads for multi-fit commands [default: $WAVEINR_WORKERS, else all cores]
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write the JSON run report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic captures plus spec sidecars.
    Synth(SynthArgs),
    /// Fit a model to a capture.
    Fit(FitArgs),
    /// Evaluate a saved model against a capture.
    Eval(EvalArgs),
    /// Spectrum analysis of a capture and/or model reconstruction.
    Spectrum(SpectrumArgs),
    /// Sensitivity sweep over (h1, h2).
    Sweep(SweepArgs),
    /// Separate-vs-combined comparison across parameter budgets.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Event class of a single capture.
    #[arg(long)]
    class: Option<String>,
    /// Generate this many randomized captures into the `--out` directory.
    #[arg(long)]
    suite: Option<usize>,
    /// Generate from a spec sidecar file instead of class defaults.
    #[arg(long, conflicts_with_all = ["class", "suite"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (single capture) or directory (suite).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchChoice {
    Single,
    Double,
    Combined,
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeChoice {
    Dominant,
    Sidebands,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WindowChoice {
    Rectangular,
    Hann,
}

/// Training settings: a TOML config file, then individual flag overrides.
#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML file with TrainConfig fields, plus optional `omega0` and `activation`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    omega0: Option<f64>,
    /// sine or relu (two-layer models only).
    #[arg(long)]
    activation: Option<String>,
}

/// Where capture samples come from.
#[derive(Debug, Args)]
struct CaptureArgs {
    /// Column map `label=index,...`; default takes every column by header label.
    #[arg(long)]
    columns: Option<String>,
    /// Overrides the capture header's system frequency.
    #[arg(long)]
    system_freq: Option<f64>,
    /// Overrides the capture header's samples per cycle.
    #[arg(long)]
    samples_per_cycle: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchChoice::Double)]
    arch: ArchChoice,
    /// Hidden width of the single-layer model.
    #[arg(long, default_value_t = 554)]
    h: usize,
    #[arg(long, default_value_t = 30)]
    h1: usize,
    #[arg(long, default_value_t = 50)]
    h2: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Channel fitted by single/double models [default: first channel].
    #[arg(long)]
    channel: Option<String>,
    /// Model output path; `separate` writes one file per channel next to it.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    capture: CaptureArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write per-channel two-column time/value files (raw and model) here.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    capture: CaptureArgs,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long, required_unless_present = "model")]
    input: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Channel to analyze [default: first channel / model output].
    #[arg(long)]
    channel: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeChoice::Dominant)]
    mode: ModeChoice,
    #[arg(long, default_value_t = 60.0)]
    carrier: f64,
    #[arg(long, default_value_t = DEFAULT_EXCLUDE_BELOW_HZ)]
    exclude_below: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_REL_MAGNITUDE)]
    min_rel: f64,
    /// Analyze the differential waveform built from this many pre-event cycles.
    #[arg(long)]
    pre_event_cycles: Option<usize>,
    #[arg(long, value_enum, default_value_t = WindowChoice::Rectangular)]
    window: WindowChoice,
    /// Write two-column spectrum files here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    capture: CaptureArgs,
}

/// Captures for multi-capture commands: files, or a synthetic suite.
#[derive(Debug, Args)]
struct SuiteArgs {
    /// Capture files (repeatable).
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Generate this many synthetic captures instead.
    #[arg(long, conflicts_with = "inputs")]
    suite: Option<usize>,
    /// Event class of the synthetic suite [default: all classes round-robin].
    #[arg(long, requires = "suite")]
    class: Option<String>,
    /// Seed of the synthetic suite.
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 30, 50])]
    h1: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 30, 50, 70])]
    h2: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Channel fitted in every capture [default: first channel].
    #[arg(long)]
    channel: Option<String>,
    /// Evaluate the Spearman trend criterion on the table.
    #[arg(long)]
    check_trend: bool,
    /// Long-format table output (h1 h2 params mean_nmse std).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    capture: CaptureArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// Parameter budget ladder.
    #[arg(long, value_delimiter = ',', default_values_t = [1500, 3000, 4500, 6000, 8103])]
    budgets: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Table output (budget approach h1 h2 params mean_nmse std).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    capture: CaptureArgs,
}

/// SHA-256 of an input file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEntry {
    pub arch: ArchSpec,
    pub param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmseSummary {
    /// Statistics of the per-run (per-channel-averaged) NMSE values.
    pub stats: NmseStats,
    /// `(label, NMSE %)` for the reported model.
    pub channels: Vec<(String, f64)>,
}

/// Compression accounting: stored samples over model parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Compression {
    pub samples: usize,
    pub channels: usize,
    pub param_count: usize,
    /// `(samples × channels) / param_count`.
    pub ratio: f64,
}

impl Compression {
    pub fn new(samples: usize, channels: usize, param_count: usize) -> Self {
        Self {
            samples,
            channels,
            param_count,
            ratio: (samples * channels) as f64 / param_count as f64,
        }
    }
}

/// Versioned JSON record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<InputHash>,
    pub models: Vec<ModelEntry>,
    pub nmse: Option<NmseSummary>,
    pub spectral: Vec<Value>,
    pub compression: Option<Compression>,
    pub results: Value,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.into(),
            config: Value::Null,
            inputs: Vec::new(),
            models: Vec::new(),
            nmse: None,
            spectral: Vec::new(),
            compression: None,
            results: Value::Null,
            error: None,
            wall_time_s: 0.0,
        }
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

/// Maps a library error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

/// Runs the command line `args` (including the program name), writing the
/// human summary to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    let workers = match resolve_workers(cli.workers) {
        Ok(w) => w,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    let started = Instant::now();
    let mut text = String::new();
    let (mut report, outcome) = pool.install(|| dispatch(&cli.command, &mut text));
    report.wall_time_s = started.elapsed().as_secs_f64();
    let mut code = match &outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(_)) => EXIT_USAGE,
        Err(Failure::Lib(e)) => exit_code(e),
    };
    if let Err(f) = &outcome {
        report.error = Some(f.to_string());
    }
    let _ = out.write_all(text.as_bytes());
    if let Some(path) = &cli.report {
        if let Err(e) = write_report(&report, path) {
            let _ = writeln!(err, "error: writing report: {e}");
            code = code.max(EXIT_DATA);
        }
    }
    if let Err(f) = outcome {
        let _ = writeln!(err, "error: {f}");
    }
    code
}

fn resolve_workers(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("{WORKERS_ENV}=`{v}` is not a positive integer"))?,
            ),
            Err(_) => None,
        },
    };
    match n {
        Some(0) => Err("worker count must be at least 1".into()),
        n => Ok(n),
    }
}

fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Usage problems found after parsing, kept apart from data errors so they
/// map to exit code 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn dispatch(cmd: &Command, out: &mut String) -> (RunReport, Outcome) {
    let name = match cmd {
        Command::Synth(_) => "synth",
        Command::Fit(_) => "fit",
        Command::Eval(_) => "eval",
        Command::Spectrum(_) => "spectrum",
        Command::Sweep(_) => "sweep",
        Command::Compare(_) => "compare",
    };
    let mut report = RunReport::new(name);
    let outcome = match cmd {
        Command::Synth(a) => cmd_synth(a, &mut report, out),
        Command::Fit(a) => cmd_fit(a, &mut report, out),
        Command::Eval(a) => cmd_eval(a, &mut report, out),
        Command::Spectrum(a) => cmd_spectrum(a, &mut report, out),
        Command::Sweep(a) => cmd_sweep(a, &mut report, out),
        Command::Compare(a) => cmd_compare(a, &mut report, out),
    };
    (report, outcome)
}

// ---------------------------------------------------------------- helpers

fn parse_class(name: &str) -> std::result::Result<EventClass, Failure> {
    name.parse().map_err(|_| {
        let known: Vec<&str> = EventClass::ALL.iter().map(|c| c.name()).collect();
        usage(format!("unknown event class `{name}` (expected one of: {})", known.join(", ")))
    })
}

fn parse_columns(spec: &str) -> std::result::Result<ColumnMap, Failure> {
    spec.split(',')
        .map(|item| {
            let (label, idx) = item
                .split_once('=')
                .ok_or_else(|| usage(format!("column map entry `{item}` is not label=index")))?;
            let idx = idx
                .trim()
                .parse()
                .map_err(|_| usage(format!("column index `{idx}` is not a nonnegative integer")))?;
            Ok((label.trim().to_string(), idx))
        })
        .collect()
}

fn load(path: &Path, c: &CaptureArgs, report: &mut RunReport) -> std::result::Result<WaveformSet, Failure> {
    let map = c.columns.as_deref().map(parse_columns).transpose()?;
    let sampling = match (c.system_freq, c.samples_per_cycle) {
        (None, None) => None,
        (f, s) => {
            let d = SamplingSpec::default();
            Some(SamplingSpec::new(
                f.unwrap_or(d.system_freq_hz()),
                s.unwrap_or(d.samples_per_cycle()),
            )?)
        }
    };
    report.hash_input(path)?;
    Ok(load_capture(path, map.as_ref(), sampling)?)
}

fn resolve_train(t: &TrainArgs, report: &mut RunReport) -> std::result::Result<(TrainConfig, f64, Activation), Failure> {
    let mut config = TrainConfig::default();
    let mut omega0 = DEFAULT_OMEGA0;
    let mut activation = Activation::Sine;
    if let Some(path) = &t.config {
        let text = fs::read_to_string(path)?;
        report.hash_input(path)?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if let Some(v) = table.remove("omega0") {
            omega0 = v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| usage("config: omega0 must be a number"))?;
        }
        if let Some(v) = table.remove("activation") {
            let name = v.as_str().ok_or_else(|| usage("config: activation must be a string"))?;
            activation = name.parse().map_err(|e: Error| usage(e.to_string()))?;
        }
        config = TrainConfig::from_toml(&toml::to_string(&table).expect("table serializes"))
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    }
    if let Some(e) = t.epochs {
        config.epochs = e;
    }
    if let Some(lr) = t.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(s) = t.seed {
        config.seed = s;
    }
    if let Some(o) = t.omega0 {
        omega0 = o;
    }
    if let Some(a) = &t.activation {
        activation = a.parse().map_err(|e: Error| usage(e.to_string()))?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(usage("omega0 must be positive"));
    }
    report.config = json!({
        "train": config,
        "omega0": omega0,
        "activation": activation,
    });
    Ok((config, omega0, activation))
}

fn pick_channel(set: &WaveformSet, label: Option<&str>) -> std::result::Result<Waveform, Failure> {
    match label {
        None => Ok(set.channels()[0].clone()),
        Some(l) => set.channel(l).cloned().ok_or_else(|| {
            Failure::Lib(Error::invalid(format!(
                "capture has no channel `{l}` (channels: {})",
                set.labels().join(", ")
            )))
        }),
    }
}

fn load_suite(
    s: &SuiteArgs,
    c: &CaptureArgs,
    report: &mut RunReport,
) -> std::result::Result<Vec<WaveformSet>, Failure> {
    match s.suite {
        Some(n) => {
            if n == 0 {
                return Err(usage("--suite needs at least one capture"));
            }
            let suite = match &s.class {
                Some(name) => gen_class_suite(parse_class(name)?, n, s.suite_seed)?,
                None => gen_suite(n, s.suite_seed)?,
            };
            Ok(suite.into_iter().map(|(_, set)| set).collect())
        }
        None if s.inputs.is_empty() => Err(usage("give --input files or --suite N")),
        None => s.inputs.iter().map(|p| load(p, c, report)).collect(),
    }
}

fn entry(m: &FittedModel, path: Option<&Path>, channel: Option<&str>) -> ModelEntry {
    ModelEntry {
        arch: m.arch(),
        param_count: m.param_count(),
        path: path.map(|p| p.display().to_string()),
        channel: channel.map(str::to_string),
    }
}

fn sibling_path(base: &Path, label: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    base.with_file_name(format!("{stem}.{label}{ext}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".to_string(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------- synth

fn write_capture_and_spec(spec: &SynthSpec, path: &Path) -> Result<PathBuf> {
    let set = gen(spec)?;
    save_capture(&set, path)?;
    let sidecar = path.with_extension("spec.json");
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    fs::write(&sidecar, text)?;
    Ok(sidecar)
}

fn cmd_synth(a: &SynthArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    let mut written = Vec::new();
    if let Some(path) = &a.spec {
        report.hash_input(path)?;
        let spec: SynthSpec = serde_json::from_str(&fs::read_to_string(path)?).map_err(Error::from)?;
        spec.validate()?;
        write_capture_and_spec(&spec, &a.out)?;
        written.push((a.out.clone(), spec.event_class));
    } else if let Some(n) = a.suite {
        if n == 0 {
            return Err(usage("--suite needs at least one capture"));
        }
        let suite = match &a.class {
            Some(name) => gen_class_suite(parse_class(name)?, n, a.seed)?,
            None => gen_suite(n, a.seed)?,
        };
        fs::create_dir_all(&a.out)?;
        for (k, (spec, _)) in suite.iter().enumerate() {
            let path = a.out.join(format!("event_{k:03}.csv"));
            write_capture_and_spec(spec, &path)?;
            written.push((path, spec.event_class));
        }
    } else {
        let class = parse_class(a.class.as_deref().ok_or_else(|| usage("give --class, --suite or --spec"))?)?;
        let spec = SynthSpec {
            seed: a.seed,
            ..SynthSpec::new(class)
        };
        write_capture_and_spec(&spec, &a.out)?;
        written.push((a.out.clone(), class));
    }
    for (path, class) in &written {
        let _ = writeln!(out, "wrote {} ({})", path.display(), class.name());
    }
    report.config = json!({ "class": a.class, "suite": a.suite, "seed": a.seed });
    report.results = json!(written
        .iter()
        .map(|(p, c)| json!({ "path": p.display().to_string(), "class": c.name() }))
        .collect::<Vec<_>>());
    Ok(())
}

// ---------------------------------------------------------------- fit

fn runs_json(runs: &[RunOutcome]) -> Value {
    serde_json::to_value(runs).expect("run outcomes serialize")
}

fn cmd_fit(a: &FitArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    let (config, omega0, activation) = resolve_train(&a.train, report)?;
    if a.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let set = load(&a.input, &a.capture, report)?;
    if let Value::Object(m) = &mut report.config {
        m.insert("arch".into(), json!(format!("{:?}", a.arch).to_lowercase()));
        m.insert("runs".into(), json!(a.runs));
    }
    let n = set.n_samples();
    match a.arch {
        ArchChoice::Single | ArchChoice::Double | ArchChoice::Combined => {
            let (target, arch) = match a.arch {
                ArchChoice::Single => (pick_channel(&set, a.channel.as_deref())?.into(), ArchSpec::single(a.h)),
                ArchChoice::Double => (pick_channel(&set, a.channel.as_deref())?.into(), ArchSpec::double(a.h1, a.h2)),
                _ => (set.clone(), ArchSpec::multi(a.h1, a.h2, set.n_channels())),
            };
            let arch = arch.with_omega0(omega0).with_activation(activation);
            arch.validate().map_err(|e| usage(e.to_string()))?;
            let target: WaveformSet = target;
            let multi = fit_multi_run(&target, &arch, &config, a.runs)?;
            save_model(&multi.best, &a.out)?;
            let best = match &multi.runs[multi.best_run] {
                RunOutcome::Ok(r) => r.clone(),
                RunOutcome::Failed { .. } => unreachable!("best run succeeded"),
            };
            report.models.push(entry(&multi.best, Some(&a.out), None));
            report.nmse = Some(NmseSummary {
                stats: multi.stats,
                channels: target.labels().into_iter().zip(best.channel_nmse_percent.clone()).collect(),
            });
            report.compression = Some(Compression::new(n, target.n_channels(), multi.best.param_count()));
            report.results = json!({ "best_run": multi.best_run, "runs": runs_json(&multi.runs) });
            let _ = writeln!(
                out,
                "{arch}: param_count {} | NMSE mean {:.4}% (best {:.4}%, {} run(s)) | wrote {}",
                multi.best.param_count(),
                multi.stats.mean,
                multi.stats.min,
                multi.stats.count,
                a.out.display()
            );
        }
        ArchChoice::Separate => {
            let arch = ArchSpec::double(a.h1, a.h2).with_omega0(omega0).with_activation(activation);
            arch.validate().map_err(|e| usage(e.to_string()))?;
            let mut per_run = Vec::new();
            let mut best: Option<(f64, crate::experiment::SeparateFit)> = None;
            let mut failures = Vec::new();
            let mut first_err = None;
            for r in 0..a.runs as u64 {
                let cfg = TrainConfig {
                    seed: config.seed.wrapping_add(r),
                    ..config.clone()
                };
                match fit_separate(&set, &arch, &cfg) {
                    Ok(f) => {
                        let m = f.mean_nmse_percent();
                        per_run.push(m);
                        if best.as_ref().map_or(true, |(b, _)| m < *b) {
                            best = Some((m, f));
                        }
                    }
                    Err(e) => {
                        failures.push(json!({ "seed": cfg.seed, "error": e.to_string() }));
                        first_err.get_or_insert(e);
                    }
                }
            }
            let Some((_, fitted)) = best else {
                report.results = json!({ "failures": failures });
                return Err(Failure::Lib(first_err.expect("every run failed")));
            };
            let labels = set.labels();
            for (m, label) in fitted.models.iter().zip(&labels) {
                let path = sibling_path(&a.out, label);
                save_model(m, &path)?;
                report.models.push(entry(m, Some(&path), Some(label)));
            }
            let total = fitted.param_count();
            report.nmse = Some(NmseSummary {
                stats: NmseStats::from_values(&per_run).expect("one run succeeded"),
                channels: labels.into_iter().zip(fitted.channel_nmse_percent()).collect(),
            });
            report.compression = Some(Compression::new(n, set.n_channels(), total));
            report.results = json!({ "per_run_mean_nmse": per_run, "failures": failures });
            let _ = writeln!(
                out,
                "separate {}x{arch}: param_count {total} | NMSE mean {:.4}% (best {:.4}%)",
                set.n_channels(),
                report.nmse.as_ref().unwrap().stats.mean,
                fitted.mean_nmse_percent()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

/// Capture channels in the model's output order: by label, or by position
/// when the labels differ but the counts agree.
fn align_channels(set: &WaveformSet, model: &FittedModel) -> std::result::Result<WaveformSet, Failure> {
    let labels = &model.meta.labels;
    let by_label: Option<Vec<Waveform>> = labels.iter().map(|l| set.channel(l).cloned()).collect();
    let chosen = match by_label {
        Some(chs) => chs,
        None if labels.len() == set.n_channels() => set.channels().to_vec(),
        None => {
            return Err(Failure::Lib(Error::Dimension {
                field: format!(
                    "capture channels (model outputs {} but capture has {})",
                    labels.join(", "),
                    set.labels().join(", ")
                ),
                expected: labels.len(),
                found: set.n_channels(),
            }))
        }
    };
    Ok(WaveformSet::new(chosen)?)
}

fn dump_pair(dir: &Path, raw: &Waveform, recon: &Waveform) -> Result<()> {
    for (suffix, w) in [("raw", raw), ("model", recon)] {
        let mut text = String::from("# time_s value\n");
        for (k, v) in w.samples().iter().enumerate() {
            let _ = writeln!(text, "{:?} {:?}", w.time_s(k), v);
        }
        fs::write(dir.join(format!("{}_{suffix}.dat", raw.label())), text)?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    report.hash_input(&a.model)?;
    let model = load_model(&a.model)?;
    let set = load(&a.input, &a.capture, report)?;
    report.config = json!({ "model": a.model.display().to_string() });
    let raw = align_channels(&set, &model)?;
    if raw.n_samples() != model.meta.n_samples {
        return Err(Failure::Lib(Error::Dimension {
            field: "capture samples".into(),
            expected: model.meta.n_samples,
            found: raw.n_samples(),
        }));
    }
    let recon = reconstruct(&model, &model.native_grid()?)?;
    let (mean, per) = mean_channel_nmse(&raw, &recon)?;
    if let Some(dir) = &a.dump {
        fs::create_dir_all(dir)?;
        for (r, m) in raw.channels().iter().zip(recon.channels()) {
            dump_pair(dir, r, m)?;
        }
    }
    report.models.push(entry(&model, Some(&a.model), None));
    report.nmse = Some(NmseSummary {
        stats: NmseStats::from_values(&[mean]).expect("one value"),
        channels: raw.labels().into_iter().zip(per.iter().copied()).collect(),
    });
    report.compression = Some(Compression::new(raw.n_samples(), raw.n_channels(), model.param_count()));
    for (label, v) in raw.labels().iter().zip(&per) {
        let _ = writeln!(out, "{label}: NMSE {v:.4}%");
    }
    let _ = writeln!(out, "overall NMSE {mean:.4}% | param_count {}", model.param_count());
    Ok(())
}

// ---------------------------------------------------------------- spectrum

fn describe(findings: &SpectralFindings, who: &str, mode: ModeChoice, out: &mut String) {
    match mode {
        ModeChoice::Dominant => {
            let _ = writeln!(out, "{who}: f_dominant = {:.1} Hz", findings.dominant.frequency_hz);
        }
        ModeChoice::Sidebands => {
            let pairs = findings.sidebands.as_deref().unwrap_or_default();
            if pairs.is_empty() {
                let _ = writeln!(out, "{who}: no sideband pair");
            }
            for p in pairs {
                let _ = writeln!(
                    out,
                    "{who}: {:.1} / {:.1} Hz (f_sideband = {:.1} Hz)",
                    p.lower.frequency_hz, p.upper.frequency_hz, p.f_sideband_hz
                );
            }
        }
    }
}

fn cmd_spectrum(a: &SpectrumArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    let opts = ReportOptions {
        exclude_below_hz: a.exclude_below,
        carrier_hz: (a.mode == ModeChoice::Sidebands).then_some(a.carrier),
        min_rel_magnitude: a.min_rel,
        window: match a.window {
            WindowChoice::Rectangular => Window::Rectangular,
            WindowChoice::Hann => Window::Hann,
        },
        pre_event_cycles: a.pre_event_cycles,
    };
    report.config = serde_json::to_value(&opts).map_err(Error::from)?;
    let model = match &a.model {
        Some(p) => {
            report.hash_input(p)?;
            let m = load_model(p)?;
            report.models.push(entry(&m, Some(p), None));
            Some(m)
        }
        None => None,
    };
    let recon = model
        .as_ref()
        .map(|m| reconstruct(m, &m.native_grid()?))
        .transpose()?;
    let raw = match &a.input {
        Some(p) => Some(load(p, &a.capture, report)?),
        None => None,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    match (raw, recon) {
        (Some(raw), Some(recon)) => {
            let raw_ch = pick_channel(&raw, a.channel.as_deref())?;
            let model_ch = match recon.channel(raw_ch.label()) {
                Some(c) => c.clone(),
                None if recon.n_channels() == 1 => recon.channels()[0].clone(),
                None => {
                    return Err(Failure::Lib(Error::invalid(format!(
                        "model has no output `{}` (outputs: {})",
                        raw_ch.label(),
                        recon.labels().join(", ")
                    ))))
                }
            };
            let rep: SpectrumReport = compare_spectra(&raw_ch, &model_ch, &opts)?;
            describe(&rep.raw_findings, "raw", a.mode, out);
            describe(&rep.model_findings, "model", a.mode, out);
            let _ = writeln!(
                out,
                "dominant bin offset {} | spectral NMSE {:.4}%",
                rep.dominant_bin_offset(),
                rep.spectral_nmse_percent
            );
            if let Some(dir) = &a.out {
                save_spectrum(&rep.raw, dir.join(format!("{}_raw.spectrum.txt", rep.label)))?;
                save_spectrum(&rep.model, dir.join(format!("{}_model.spectrum.txt", rep.label)))?;
            }
            report.spectral.push(json!({
                "label": rep.label,
                "raw": rep.raw_findings,
                "model": rep.model_findings,
                "dominant_bin_offset": rep.dominant_bin_offset(),
                "bin_width_hz": rep.raw.bin_width_hz(),
                "spectral_nmse_percent": rep.spectral_nmse_percent,
            }));
        }
        (raw, recon) => {
            let (set, who) = match (raw, recon) {
                (Some(r), None) => (r, "raw"),
                (None, Some(m)) => (m, "model"),
                _ => return Err(usage("give --input and/or --model")),
            };
            let ch = pick_channel(&set, a.channel.as_deref())?;
            let ch = match opts.pre_event_cycles {
                Some(c) => differential_waveform(&ch, c)?,
                None => ch,
            };
            let s = dft_magnitude_windowed(&ch, opts.window);
            let dominant = dominant_frequency(&s, opts.exclude_below_hz)?;
            let sidebands: Option<Vec<SidebandPair>> =
                opts.carrier_hz.map(|c| detect_sidebands(&s, c, opts.min_rel_magnitude));
            let findings = SpectralFindings { dominant, sidebands };
            describe(&findings, who, a.mode, out);
            if let Some(dir) = &a.out {
                save_spectrum(&s, dir.join(format!("{}_{who}.spectrum.txt", ch.label())))?;
            }
            report.spectral.push(json!({
                "label": ch.label(),
                "source": who,
                "findings": findings,
                "bin_width_hz": s.bin_width_hz(),
            }));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

fn single_channel_suite(sets: Vec<WaveformSet>, channel: Option<&str>) -> std::result::Result<Vec<WaveformSet>, Failure> {
    sets.iter()
        .map(|s| pick_channel(s, channel).map(WaveformSet::from))
        .collect()
}

fn cmd_sweep(a: &SweepArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    let (config, omega0, _) = resolve_train(&a.train, report)?;
    if a.runs == 0 || a.h1.is_empty() || a.h2.is_empty() {
        return Err(usage("sweep needs a nonempty grid and at least one run"));
    }
    let sets = load_suite(&a.suite, &a.capture, report)?;
    let targets = single_channel_suite(sets, a.channel.as_deref())?;
    if let Value::Object(m) = &mut report.config {
        m.insert("h1".into(), json!(a.h1));
        m.insert("h2".into(), json!(a.h2));
        m.insert("runs".into(), json!(a.runs));
        m.insert("captures".into(), json!(targets.len()));
    }
    let rows = sweep(&targets, &a.h1, &a.h2, a.runs, omega0, &config)?;
    let mut table = String::from("h1 h2 params mean_nmse std\n");
    for r in &rows {
        let _ = writeln!(table, "{} {} {} {:?} {:?}", r.h1, r.h2, r.params, r.mean_nmse, r.std);
    }
    out.push_str(&table);
    if let Some(p) = &a.out {
        fs::write(p, &table)?;
    }
    let mut results = json!({ "table": rows });
    if a.check_trend {
        let check = trend_check(&rows)?;
        let _ = writeln!(
            out,
            "trend check: {} (best cell {:?}, Spearman by h1 {:?})",
            if check.pass { "PASS" } else { "FAIL" },
            check.best,
            check.spearman_by_h1
        );
        results["trend_check"] = serde_json::to_value(&check).map_err(Error::from)?;
    }
    report.results = results;
    Ok(())
}

// ---------------------------------------------------------------- compare

fn cmd_compare(a: &CompareArgs, report: &mut RunReport, out: &mut String) -> Outcome {
    let (config, omega0, _) = resolve_train(&a.train, report)?;
    if a.runs == 0 || a.budgets.is_empty() {
        return Err(usage("compare needs at least one budget and one run"));
    }
    let sets = load_suite(&a.suite, &a.capture, report)?;
    if let Value::Object(m) = &mut report.config {
        m.insert("budgets".into(), json!(a.budgets));
        m.insert("runs".into(), json!(a.runs));
        m.insert("captures".into(), json!(sets.len()));
    }
    let rows: Vec<BudgetComparison> = compare_budgets(&sets, &a.budgets, a.runs, omega0, &config)
        .map_err(|e| match e {
            Error::InvalidInput(m) => usage(m),
            e => Failure::Lib(e),
        })?;
    let mut table = String::from("budget approach h1 h2 params mean_nmse std\n");
    for r in &rows {
        for (name, x) in [("separate", &r.separate), ("combined", &r.combined)] {
            let _ = writeln!(
                table,
                "{} {name} {} {} {} {} {}",
                r.budget,
                x.h1,
                x.h2,
                x.param_count,
                fmt_opt(x.mean_nmse),
                fmt_opt(x.std)
            );
        }
    }
    out.push_str(&table);
    if let Some(p) = &a.out {
        fs::write(p, &table)?;
    }
    report.results = json!({ "budgets": rows });
    Ok(())
}
