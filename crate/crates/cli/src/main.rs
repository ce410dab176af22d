mod output;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use resync_core::config::{parse_config, ConfigError, ConfigFile, Overrides, SweepSpec};
use resync_core::engine::SyncMode;
use resync_core::simulator::{run_simulation, SimConfig, SimError};
use resync_core::sweep::{aggregate_csv, emit_plot_data, run_sweep, PlotError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "resync-sim", version, about = "Simulate pull-based resource synchronization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single simulation.
    Run(RunArgs),
    /// Run every cell of a parameter grid and write the aggregate CSV.
    Sweep(RunArgs),
    /// Turn an aggregate CSV into per-metric plot data.
    PlotData {
        /// Aggregate CSV written by `sweep`.
        #[arg(long)]
        input: PathBuf,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

/// Per-key overrides; durations are in seconds.
#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<SyncMode>,
    #[arg(long)]
    resource_count: Option<u64>,
    #[arg(long)]
    change_interval: Option<f64>,
    #[arg(long)]
    sync_interval: Option<f64>,
    #[arg(long)]
    max_representation_size: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Link bandwidth in bytes per second.
    #[arg(long)]
    bandwidth: Option<u64>,
    #[arg(long)]
    per_request_overhead: Option<f64>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            resource_count: a.resource_count,
            change_interval: a.change_interval,
            sync_interval: a.sync_interval,
            mode: a.mode,
            seed: a.seed,
            max_representation_size: a.max_representation_size,
            duration: a.duration,
            bandwidth: a.bandwidth,
            per_request_overhead: a.per_request_overhead,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{failed} of {total} sweep cells failed; see {}", .report.display())]
    PartialSweep { failed: usize, total: usize, report: PathBuf },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::PartialSweep { .. } => 2,
            _ => 1,
        }
    }
}

fn load(path: Option<&Path>) -> Result<Option<ConfigFile>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    Ok(Some(parse_config(&text)?))
}

/// A configuration built from flags alone; the four keys a file must give
/// are required here too.
fn config_from_flags(a: &OverrideArgs) -> Result<SimConfig, CliError> {
    let missing =
        |key: &str| ConfigError { key: format!("simulation.{key}"), reason: "required without --config".to_string() };
    let resource_count = a.resource_count.ok_or_else(|| missing("resource_count"))?;
    let change_interval = a.change_interval.ok_or_else(|| missing("change_interval"))?;
    let sync_interval = a.sync_interval.ok_or_else(|| missing("sync_interval"))?;
    let mode = a.mode.ok_or_else(|| missing("mode"))?;
    Ok(SimConfig::new(
        resource_count,
        resync_core::config::seconds("change_interval", change_interval)?,
        resync_core::config::seconds("sync_interval", sync_interval)?,
        mode,
    ))
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut config = match load(args.config.as_deref())? {
        Some(ConfigFile::Single(c)) => c,
        Some(ConfigFile::Sweep(_)) => {
            return Err(CliError::Usage("the configuration describes a sweep; use `resync-sim sweep`".to_string()))
        }
        None => config_from_flags(&args.overrides)?,
    };
    Overrides::from(&args.overrides).apply_to_config(&mut config)?;
    let report = run_simulation(&config)?;
    output::write_run(&args.out, &report)?;

    let s = &report.summary;
    println!(
        "consistency {}  latency {}  efficiency {}  ({} changes, {} cycles)",
        output::metric(s.average_consistency),
        output::metric(s.average_latency),
        output::metric(s.average_efficiency),
        report.counts.changes,
        report.counts.sync_cycles,
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn one_cell(config: SimConfig) -> SweepSpec {
    SweepSpec {
        resource_counts: vec![config.resource_count],
        change_intervals: vec![config.change_interval],
        sync_intervals: vec![config.sync_interval],
        modes: vec![config.sync_mode],
        seeds: vec![config.seed],
        base: config,
    }
}

fn sweep(args: &RunArgs) -> Result<(), CliError> {
    let mut spec = match load(args.config.as_deref())? {
        Some(ConfigFile::Sweep(s)) => s,
        Some(ConfigFile::Single(c)) => one_cell(c),
        None => SweepSpec::desk_scale(),
    };
    Overrides::from(&args.overrides).apply_to_sweep(&mut spec)?;
    let total = spec.cells().len();

    let cells_dir = args.out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|source| CliError::Write { path: cells_dir.clone(), source })?;
    let write_errors = Mutex::new(Vec::new());
    let outcome = run_sweep(&spec, |index, report| {
        eprintln!("cell {:>3}/{total} {}", index + 1, output::cell_label(&report.config));
        if let Err(e) = output::write_cell(&cells_dir, index, report) {
            write_errors.lock().unwrap().push(e);
        }
    });
    if let Some(e) = write_errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }

    output::write_file(&args.out.join("aggregate.csv"), &aggregate_csv(&outcome.rows))?;
    println!("{} of {total} cells succeeded; wrote {}", outcome.rows.len(), args.out.display());
    if outcome.failures.is_empty() {
        return Ok(());
    }
    let report = args.out.join("failures.csv");
    output::write_failures(&report, &outcome.failures)?;
    Err(CliError::PartialSweep { failed: outcome.failures.len(), total, report })
}

fn plot_data(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(input).map_err(|source| CliError::Read { path: input.to_path_buf(), source })?;
    let data = emit_plot_data(&text)?;
    for warning in &data.warnings {
        eprintln!("warning: {warning}");
    }
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
    }
    for (name, contents) in data.files() {
        output::write_file(&dir.join(name), contents)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2 by default, which is reserved for
    // partial sweep failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::PlotData { input, out } => plot_data(input, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
