//! Command-line front end: `generate`, `train`, `evaluate`, `sweep`, `predict`.
//!
//! Settings resolve as defaults ← `--config` file ← flags. The config file
//! is TOML with one table per subcommand whose keys are the flag names:
//!
//! ```toml
//! [generate]
//! num_ic = 200
//! hbars = "1.0,0.1"
//!
//! [train]
//! epochs = 20
//! ```
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 usage or validation
//! error. Logs go to stderr (verbosity from `CLASSICAL_LIMIT_LOG`); data
//! goes to files or stdout.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, GenerationConfig};
use crate::error::Error;
use crate::eval::{self, HbarValue};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::train::{self, TrainConfig};

pub const LOG_ENV: &str = "CLASSICAL_LIMIT_LOG";

const DEFAULT_HBARS: &str = "5.0,2.0,1.0,0.5,0.1,0.01";

#[derive(Debug, Parser)]
#[command(
    name = "classical-limit",
    version,
    about = "Learn harmonic-oscillator expectation trajectories across hbar and compare with the classical limit"
)]
pub struct Cli {
    /// TOML file with per-subcommand defaults; explicit flags override it
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate labelled trajectories over a grid of hbar values
    Generate(GenerateArgs),
    /// Train the trajectory network on a generated dataset
    Train(TrainArgs),
    /// Held-out MSE and per-hbar deviation from the classical trajectory
    Evaluate(EvaluateArgs),
    /// Predictions for one initial condition across hbar values (plot data)
    Sweep(SweepArgs),
    /// Print one predicted trajectory as CSV on stdout
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Output dataset CSV; the manifest goes next to it as <name>.manifest.json
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    /// Comma-separated hbar values, one stratum each
    #[arg(long, default_value = DEFAULT_HBARS)]
    pub hbars: String,
    /// Initial conditions drawn per hbar value
    #[arg(long, default_value_t = 1000)]
    pub num_ic: usize,
    /// End of the time grid
    #[arg(long, default_value_t = 10.0)]
    pub t_max: f64,
    /// Number of time-grid points on [0, t_max]
    #[arg(long, default_value_t = 100)]
    pub t_steps: usize,
    /// Lower edge of the initial-condition box
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub ic_low: f64,
    /// Upper edge of the initial-condition box (exclusive)
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub ic_high: f64,
    /// Mass
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    /// Angular frequency
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Master seed for initial-condition sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; output does not depend on this
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset CSV written by `generate`
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    /// Output checkpoint
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
    /// Training report [default: <out>.report.json next to the checkpoint]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Passes over the training split
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Adam step size
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Fraction of each hbar stratum held out for validation
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    /// Seed for initialisation, the split and per-epoch shuffles
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "checkpoint.json")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    /// Held-out fraction [default: the value stored in the checkpoint]
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Split seed [default: the seed stored in the checkpoint]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, default_value = "checkpoint.json")]
    pub checkpoint: PathBuf,
    /// Sweep CSV; per-hbar metrics go to <name>.summary.csv
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    /// Initial position expectation
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x0: f64,
    /// Initial momentum expectation
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub p0: f64,
    /// Comma-separated hbar values [default: the training list stored in the checkpoint, 5.0,2.0,1.0,0.5,0.1,0.01 for default data]
    #[arg(long)]
    pub hbars: Option<String>,
    /// Restrict rows to T_LO <= t <= T_HI, e.g. 2.0,4.0
    #[arg(long, value_name = "T_LO,T_HI", allow_hyphen_values = true)]
    pub t_window: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long, default_value = "checkpoint.json")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub p0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub hbar: f64,
}

/// Failure of one invocation, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the subcommand, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) | CliError::Runtime(m) => m,
            };
            log::error!("{msg}");
            eprintln!("error: {msg}");
            e.exit_code()
        }
    }
}

fn dispatch(matches: &ArgMatches) -> CliResult<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| usage(e.to_string()))?;
    let config = match &cli.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let section = config.as_ref().and_then(|c| c.get(name));
    match cli.command {
        Command::Generate(a) => cmd_generate(&resolve(a, sub, section)?),
        Command::Train(a) => cmd_train(&resolve(a, sub, section)?),
        Command::Evaluate(a) => cmd_evaluate(&resolve(a, sub, section)?),
        Command::Sweep(a) => cmd_sweep(&resolve(a, sub, section)?),
        Command::Predict(a) => cmd_predict(&resolve(a, sub, section)?),
    }
}

fn load_config(path: &Path) -> CliResult<toml::Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Overlays config-file values onto `args` for every flag not given on the
/// command line, then logs the resolved settings.
fn resolve<A>(args: A, matches: &ArgMatches, section: Option<&toml::Value>) -> CliResult<A>
where
    A: Serialize + DeserializeOwned + std::fmt::Debug,
{
    let mut value = serde_json::to_value(&args).expect("arguments serialize");
    if let Some(section) = section {
        let table = section
            .as_table()
            .ok_or_else(|| usage("config sections must be tables"))?;
        let fields = value.as_object_mut().expect("arguments are a struct");
        for (key, v) in table {
            let id = key.replace('-', "_");
            if !fields.contains_key(&id) {
                return Err(usage(format!("unknown config key `{key}`")));
            }
            if matches.value_source(&id) == Some(ValueSource::CommandLine) {
                continue;
            }
            let json = match v {
                toml::Value::Array(items) => serde_json::Value::String(
                    items
                        .iter()
                        .map(|i| i.to_string().trim_matches('"').to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
                other => serde_json::to_value(other)
                    .map_err(|e| usage(format!("config key `{key}`: {e}")))?,
            };
            fields.insert(id, json);
        }
    }
    let resolved: A = serde_json::from_value(value.clone())
        .map_err(|e| usage(format!("invalid config value: {e}")))?;
    log::info!("resolved configuration: {value}");
    Ok(resolved)
}

fn parse_hbars(list: &str) -> CliResult<Vec<HbarValue>> {
    let values = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<HbarValue>())
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(usage("--hbars needs at least one value"));
    }
    Ok(values)
}

fn parse_window(spec: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let bad = || usage(format!("--t-window expects T_LO,T_HI, got `{spec}`"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    if lo >= hi {
        return Err(usage(format!(
            "--t-window needs T_LO < T_HI, got {lo} >= {hi}"
        )));
    }
    Ok((lo, hi))
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    if args.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let config = GenerationConfig {
        hbar_values: parse_hbars(&args.hbars)?.iter().map(|h| h.value).collect(),
        num_ic_per_hbar: args.num_ic,
        ic_low: args.ic_low,
        ic_high: args.ic_high,
        t_max: args.t_max,
        t_steps: args.t_steps,
        m: args.m,
        omega: args.omega,
        seed: args.seed,
    };
    config.validate()?;
    let data = dataset::generate_parallel(&config, args.threads)?;
    dataset::write_dataset(&data, &args.out)?;
    log::info!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn default_report_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("report.json")
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        val_fraction: args.val_frac,
    };
    config.validate()?;
    let data = dataset::read_dataset(&args.data)?;
    let (mlp, mut report) = train::train(&data, &config)?;
    let checkpoint = train::make_checkpoint(mlp, &data, &config)?;
    save_checkpoint(&checkpoint, &args.out)?;
    report.checkpoint = Some(args.out.display().to_string());

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.out));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    match (report.train_loss.last(), report.val_loss.last()) {
        (Some(t), Some(v)) => log::info!("final train loss {t:.6e}, validation loss {v:?}"),
        _ => log::info!("no epochs run; saved the initial network"),
    }
    log::info!("wrote {} and {}", args.out.display(), report_path.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let data = dataset::read_dataset(&args.data)?;
    let val_frac = args.val_frac.unwrap_or(checkpoint.metadata.val_fraction);
    let seed = args.seed.unwrap_or(checkpoint.metadata.seed);

    let same_data = train::manifest_sha256(&data) == checkpoint.metadata.dataset_manifest_sha256;
    let held_out = if same_data && val_frac > 0.0 {
        dataset::split(&data, val_frac, seed)?.1
    } else {
        if !same_data {
            log::info!("dataset differs from the training data; evaluating all of it");
        }
        data
    };
    if held_out.is_empty() {
        return Err(usage("held-out split is empty"));
    }
    let mse = train::evaluate_loss(&checkpoint.mlp, &held_out)?;
    let strata = eval::classical_deviation_by_hbar(&checkpoint, &held_out)?;

    let mut out = String::new();
    let _ = writeln!(out, "heldout_mse,{mse}");
    let _ = writeln!(out, "heldout_samples,{}", held_out.len());
    let _ = writeln!(
        out,
        "hbar,samples,rmse_vs_classical,worst_time_rmse,max_abs"
    );
    for s in &strata {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            HbarValue::from(s.hbar),
            s.samples,
            s.rmse,
            s.worst_time_rmse,
            s.max_abs
        );
    }
    print!("{out}");
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let window = args.t_window.as_deref().map(parse_window).transpose()?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let hbars = match &args.hbars {
        Some(list) => parse_hbars(list)?,
        None => checkpoint
            .metadata
            .training_hbars
            .iter()
            .map(|&h| HbarValue::from(h))
            .collect(),
    };
    let mut table = eval::hbar_sweep(&checkpoint, args.x0, args.p0, &hbars)?;
    if let Some((lo, hi)) = window {
        table = eval::window(&table, lo, hi)?;
    }
    eval::emit_csv(&table, &args.out)?;
    for c in &table.columns {
        log::info!(
            "hbar {}: rmse {:.4e}, max |dev| {:.4e}",
            c.hbar,
            c.rmse,
            c.max_abs
        );
    }
    log::info!("wrote {} rows to {}", table.grid.len(), args.out.display());
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let traj = eval::predict_trajectory(&checkpoint, args.x0, args.p0, args.hbar)?;
    let mut out = String::from("t,x\n");
    for (t, x) in traj.grid().points().iter().zip(traj.x_values()) {
        let _ = writeln!(out, "{t},{x}");
    }
    print!("{out}");
    Ok(())
}
