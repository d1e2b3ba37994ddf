//! `mmstt`: synthesise, rasterise, train, predict and evaluate from the shell.
//!
//! Exit status is 0 on success, 1 when an input or configuration fails
//! validation and 2 on runtime or numerical failures.

mod invocation;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use invocation::{Invocation, PreprocessConfig};
use manifest::RunManifest;
use mmstt::eval::EvalConfig;
use mmstt::ingest::ColumnSpec;
use mmstt::synth::RegimeSpec;
use mmstt::train::TrainConfig;
use mmstt::ModelConfig;

/// Input or configuration problem detected by the command line layer.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(
    name = "mmstt",
    version,
    about = "Gridded ground-deformation forecasting with a spatio-temporal transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic deformation dataset as CSV.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rasterise one or more CSV tables into a normalised cube.
    Preprocess {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Grid, holdout and column settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the fitted range of a cube; writes a checkpoint and history.csv.
    Train {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the training config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Forecast from one input window; writes the forecast in mm.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        window_start: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the held-out range of a cube.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat a recorded run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Output location; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

fn resolve(command: Command) -> Result<(Invocation, PathBuf, Vec<(String, PathBuf)>)> {
    let mut files = Vec::new();
    let mut config_file = |name: &str, path: &Path| -> Result<PathBuf> {
        let p = absolute(path)?;
        files.push((name.to_string(), p.clone()));
        Ok(p)
    };
    let (inv, out) = match command {
        Command::Synth { spec, out, seed } => {
            let mut spec: RegimeSpec = read_config(&config_file("spec", &spec)?)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            (
                Invocation::Synth {
                    spec,
                    columns: ColumnSpec::default(),
                },
                out,
            )
        }
        Command::Preprocess {
            inputs,
            config,
            out,
        } => {
            let config: PreprocessConfig = match config {
                Some(p) => read_config(&config_file("preprocess", &p)?)?,
                None => PreprocessConfig::default(),
            };
            let inputs = inputs.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
            (Invocation::Preprocess { inputs, config }, out)
        }
        Command::Train {
            cube,
            model,
            train,
            out,
            seed,
        } => {
            let model: ModelConfig = read_config(&config_file("model", &model)?)?;
            let mut train: TrainConfig = read_config(&config_file("train", &train)?)?;
            if let Some(s) = seed {
                train.seed = s;
            }
            (
                Invocation::Train {
                    cube: absolute(&cube)?,
                    model,
                    train,
                },
                out,
            )
        }
        Command::Predict {
            checkpoint,
            cube,
            window_start,
            out,
        } => (
            Invocation::Predict {
                checkpoint: absolute(&checkpoint)?,
                cube: absolute(&cube)?,
                window_start,
            },
            out,
        ),
        Command::Eval {
            checkpoint,
            cube,
            config,
            out,
        } => {
            let eval: EvalConfig = match config {
                Some(p) => read_config(&config_file("eval", &p)?)?,
                None => EvalConfig::default(),
            };
            (
                Invocation::Eval {
                    checkpoint: absolute(&checkpoint)?,
                    cube: absolute(&cube)?,
                    eval,
                },
                out,
            )
        }
        Command::Rerun { manifest, out } => {
            let recorded: RunManifest = read_config(&manifest)?;
            let out = out.unwrap_or(recorded.output.clone());
            files = recorded.config_files.into_iter().collect();
            files.push(("rerun_of".into(), absolute(&manifest)?));
            return Ok((recorded.invocation, absolute(&out)?, files));
        }
    };
    Ok((inv, absolute(&out)?, files))
}

fn run(cli: Cli) -> Result<()> {
    let (invocation, out, config_files) = resolve(cli.command)?;
    let started = chrono::Utc::now();
    log::info!("{} -> {}", invocation.name(), out.display());
    let artifacts = invocation.execute(&out)?;
    let manifest = RunManifest::new(invocation, out, config_files, artifacts, started);
    let path = manifest.write()?;
    log::info!("run manifest {}", path.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mmstt::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("MMSTT_THREADS") {
        let n: usize = value
            .parse()
            .map_err(|_| Invalid(format!("MMSTT_THREADS={value:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
