//! `vesselbench` command-line driver.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "vesselbench", version)]
#[command(about = "Evaluation toolkit for retinal vessel segmentation")]
struct Cli {
    /// JSON run config; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice a command makes
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-image work (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Optional when `--config` names the command
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a dataset split, or compose a combined training manifest
    Manifest(commands::manifest::ManifestArgs),
    /// Crop, resize and pad a dataset to another dataset's resolution
    Harmonize(commands::harmonize::HarmonizeArgs),
    /// Score probability maps against ground truth over the threshold grid
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Train the per-pixel logistic model
    TrainToy(commands::train::TrainArgs),
    /// Compare analytic loss gradients with finite differences
    LossCheck(commands::loss_check::LossCheckArgs),
    /// Render precision-recall curves from aggregate CSVs
    Plot(commands::plot::PlotArgs),
    /// Print computed scores next to published ones
    Compare(commands::plot::CompareArgs),
}

/// Settings shared by every command after config merging.
pub struct Global {
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Some inputs failed validation; the rest of the run completed.
#[derive(Debug)]
pub struct Incomplete(pub String);

impl fmt::Display for Incomplete {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Incomplete {}

pub const DEFAULT_OUT: &str = "out";

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| vesselbench::Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, bytes).map_err(|e| vesselbench::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches)?;
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let (name, sub) = matches.subcommand().context("missing subcommand")?;
    if let Some(f) = &file {
        if f.command != name {
            return Err(vesselbench::Error::InvalidArgument(format!(
                "config is for {:?}, not {name:?}",
                f.command
            ))
            .into());
        }
    }
    let seed = config::pick(matches, "seed", cli.seed, file.as_ref().and_then(|f| f.seed));
    let threads = config::pick(matches, "threads", cli.threads, file.as_ref().and_then(|f| f.threads));
    let out = config::pick(matches, "out", cli.out, file.as_ref().and_then(|f| f.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let global = Global { seed, out };
    let args = file.as_ref().map(|f| &f.args);

    let command = cli.command.context("missing subcommand")?;
    let resolved = match command {
        Command::Manifest(a) => {
            let a = config::merge(&a, sub, args)?;
            commands::manifest::run(&a, &global)?;
            serde_json::to_value(a)?
        }
        Command::Harmonize(a) => {
            let a = config::merge(&a, sub, args)?;
            commands::harmonize::run(&a, &global)?;
            serde_json::to_value(a)?
        }
        Command::Evaluate(a) => {
            let a = config::merge(&a, sub, args)?;
            let outcome = commands::evaluate::run(&a, &global);
            write_resolved(name, &global, threads, serde_json::to_value(&a)?)?;
            return outcome;
        }
        Command::TrainToy(a) => {
            let a = config::merge(&a, sub, args)?;
            commands::train::run(&a, &global)?;
            serde_json::to_value(a)?
        }
        Command::LossCheck(a) => {
            let a = config::merge(&a, sub, args)?;
            let outcome = commands::loss_check::run(&a, &global);
            write_resolved(name, &global, threads, serde_json::to_value(&a)?)?;
            return outcome;
        }
        Command::Plot(a) => {
            let a = config::merge(&a, sub, args)?;
            commands::plot::run_plot(&a, &global)?;
            serde_json::to_value(a)?
        }
        Command::Compare(a) => {
            let a = config::merge(&a, sub, args)?;
            commands::plot::run_compare(&a, &global)?;
            serde_json::to_value(a)?
        }
    };
    write_resolved(name, &global, threads, resolved)
}

fn write_resolved(name: &str, global: &Global, threads: Option<usize>, args: serde_json::Value) -> Result<()> {
    let rc = RunConfig {
        command: name.to_string(),
        seed: global.seed,
        threads,
        out: Some(global.out.clone()),
        args,
    };
    config::write_run_config(&global.out, &rc)
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vesselbench::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn parse(argv: &[OsString]) -> Result<ArgMatches, ExitCode> {
    Cli::command().try_get_matches_from(argv).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        }
    })
}

/// Parses the command line; a bare `--config` run takes its command from the file.
fn matches() -> Result<ArgMatches, ExitCode> {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    let m = parse(&argv)?;
    if m.subcommand().is_some() {
        return Ok(m);
    }
    let Some(path) = m.get_one::<PathBuf>("config") else {
        let _ = Cli::command().print_help();
        return Err(ExitCode::from(1));
    };
    match RunConfig::load(path) {
        Ok(rc) => {
            argv.push(rc.command.into());
            parse(&argv)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            Err(ExitCode::from(exit_code(&e)))
        }
    }
}

fn main() -> ExitCode {
    let matches = match matches() {
        Ok(m) => m,
        Err(code) => return code,
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
