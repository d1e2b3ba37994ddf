use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mmstt::eval::{evaluate, write_report, EvalConfig};
use mmstt::ingest::{parse_many, write_csv_file, ColumnSpec};
use mmstt::model::{load_checkpoint, save_checkpoint};
use mmstt::numerics::{io, Tensor};
use mmstt::rasterize::{build_cube, holdout_start, make_windows_in, DataCube, GridSpec, C_IN};
use mmstt::synth::{generate, RegimeSpec};
use mmstt::train::{fit, write_history_file, TrainConfig};
use mmstt::{Model, ModelConfig};

use crate::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub grid: GridSpec,
    /// Trailing share of the dates kept out of normalisation and training.
    pub holdout_fraction: f64,
    pub columns: ColumnSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            holdout_fraction: 0.2,
            columns: ColumnSpec::default(),
        }
    }
}

/// A fully resolved command: everything needed to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Synth {
        spec: RegimeSpec,
        columns: ColumnSpec,
    },
    Preprocess {
        inputs: Vec<PathBuf>,
        config: PreprocessConfig,
    },
    Train {
        cube: PathBuf,
        model: ModelConfig,
        train: TrainConfig,
    },
    Predict {
        checkpoint: PathBuf,
        cube: PathBuf,
        window_start: usize,
    },
    Eval {
        checkpoint: PathBuf,
        cube: PathBuf,
        eval: EvalConfig,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth { .. } => "synth",
            Invocation::Preprocess { .. } => "preprocess",
            Invocation::Train { .. } => "train",
            Invocation::Predict { .. } => "predict",
            Invocation::Eval { .. } => "eval",
        }
    }

    /// Whether the output is a directory rather than a single file.
    pub fn writes_directory(&self) -> bool {
        matches!(self, Invocation::Train { .. } | Invocation::Eval { .. })
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Synth { spec, .. } => Some(spec.seed),
            Invocation::Train { train, .. } => Some(train.seed),
            _ => None,
        }
    }

    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Synth { .. } => Vec::new(),
            Invocation::Preprocess { inputs, .. } => inputs.iter().map(PathBuf::as_path).collect(),
            Invocation::Train { cube, .. } => vec![cube],
            Invocation::Predict {
                checkpoint, cube, ..
            }
            | Invocation::Eval {
                checkpoint, cube, ..
            } => vec![checkpoint, cube],
        }
    }

    /// Runs the command and returns the artifacts it wrote.
    pub fn execute(&self, out: &Path) -> Result<BTreeMap<String, PathBuf>> {
        for input in self.inputs() {
            if !input.exists() {
                return Err(
                    Invalid(format!("{}: no such file or directory", input.display())).into(),
                );
            }
        }
        let mut artifacts = BTreeMap::new();
        match self {
            Invocation::Synth { spec, columns } => {
                let (points, calendar) = generate(spec)?;
                write_csv_file(out, &points, &calendar, columns)?;
                log::info!(
                    "wrote {} points x {} dates to {}",
                    points.len(),
                    calendar.len(),
                    out.display()
                );
                artifacts.insert("dataset".into(), out.to_path_buf());
            }
            Invocation::Preprocess { inputs, config } => {
                let ingest = parse_many(inputs, &config.columns)?;
                for r in &ingest.rejected {
                    log::warn!(
                        "rejected row at line {} ({}: {:?})",
                        r.line,
                        r.column,
                        r.value
                    );
                }
                if ingest.dropped_missing > 0 {
                    log::warn!(
                        "dropped {} points with missing values",
                        ingest.dropped_missing
                    );
                }
                let fit_end = holdout_start(ingest.calendar.len(), config.holdout_fraction)?;
                let cube = build_cube(&ingest.points, &ingest.calendar, &config.grid, fit_end)?;
                cube.save(out)?;
                log::info!(
                    "cube {:?}, statistics fitted on steps 0..{fit_end}",
                    cube.tensor.shape()
                );
                artifacts.insert("cube".into(), out.to_path_buf());
                artifacts.insert("cube_metadata".into(), io::sidecar_path(out));
            }
            Invocation::Train { cube, model, train } => {
                let cube = load_cube(cube)?;
                check_model_fits(model, &cube)?;
                let windows = make_windows_in(&cube, 0..cube.fit_end, model.t_in, model.t_out, 1)?;
                let init = Model::init(model.clone(), train.seed)?;
                let outcome = fit(init, windows, train)?;
                fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                let ckpt = out.join("checkpoint");
                save_checkpoint(
                    &ckpt,
                    model,
                    outcome.model.params(),
                    outcome.best_step,
                    outcome.best_val_loss,
                )?;
                let history = out.join("history.csv");
                write_history_file(&history, &outcome.history)?;
                log::info!(
                    "best epoch {:?}, validation loss {:?}",
                    outcome.best_epoch,
                    outcome.best_val_loss
                );
                artifacts.insert("checkpoint".into(), ckpt);
                artifacts.insert("history".into(), history);
            }
            Invocation::Predict {
                checkpoint,
                cube,
                window_start,
            } => {
                let (manifest, params) = load_checkpoint::<f32>(checkpoint)?;
                let cube = load_cube(cube)?;
                let cfg = manifest.config;
                check_model_fits(&cfg, &cube)?;
                if window_start + cfg.t_in > cube.steps() {
                    return Err(Invalid(format!(
                        "window starting at step {window_start} needs {} input steps; the cube has {}",
                        cfg.t_in,
                        cube.steps()
                    ))
                    .into());
                }
                let input = cube
                    .tensor
                    .narrow(0, *window_start, cfg.t_in)?
                    .into_reshape([1, cfg.t_in, C_IN, cfg.height, cfg.width])?;
                let model = Model::new(cfg.clone(), params)?;
                let stats = cube.displacement_stats();
                let forecast = model
                    .forward(&input)?
                    .map(|v| stats.denormalize(v as f64) as f32);
                write_forecast(out, &forecast, &cube, *window_start, &cfg)?;
                artifacts.insert("forecast".into(), out.to_path_buf());
                artifacts.insert("forecast_metadata".into(), io::sidecar_path(out));
            }
            Invocation::Eval {
                checkpoint,
                cube,
                eval,
            } => {
                let (manifest, params) = load_checkpoint::<f32>(checkpoint)?;
                let cube = load_cube(cube)?;
                let cfg = manifest.config;
                check_model_fits(&cfg, &cube)?;
                let windows =
                    make_windows_in(&cube, cube.fit_end..cube.steps(), cfg.t_in, cfg.t_out, 1)
                        .map_err(|e| {
                            Invalid(format!(
                                "held-out range {}..{} of the cube: {e}",
                                cube.fit_end,
                                cube.steps()
                            ))
                        })?;
                let model = Model::new(cfg, params)?;
                let report = evaluate(&model, &windows, &cube.displacement_stats(), eval)?;
                for flag in &report.flags {
                    log::warn!("{flag}");
                }
                write_report(out, &report)?;
                for name in ["report.json", "summary.csv", "nodes.csv", "bins.csv"] {
                    artifacts.insert(
                        name.trim_end_matches(".json")
                            .trim_end_matches(".csv")
                            .into(),
                        out.join(name),
                    );
                }
            }
        }
        Ok(artifacts)
    }
}

fn load_cube(path: &Path) -> Result<DataCube> {
    DataCube::load(path).with_context(|| format!("loading cube {}", path.display()))
}

fn check_model_fits(cfg: &ModelConfig, cube: &DataCube) -> Result<()> {
    cfg.validate()?;
    if cfg.c_in != C_IN || cfg.height != cube.height() || cfg.width != cube.width() {
        return Err(Invalid(format!(
            "model expects {} channels on a {}x{} grid; the cube has {C_IN} channels on {}x{}",
            cfg.c_in,
            cfg.height,
            cfg.width,
            cube.height(),
            cube.width()
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct ForecastSidecar<'a> {
    units: &'a str,
    shape: &'a [usize],
    window_start: usize,
    input_dates: Vec<String>,
    /// Cube time indices of the forecast steps; may run past the cube end.
    forecast_steps: Vec<usize>,
}

fn write_forecast(
    out: &Path,
    forecast: &Tensor<f32>,
    cube: &DataCube,
    start: usize,
    cfg: &ModelConfig,
) -> Result<()> {
    io::write_tensor(out, forecast)?;
    let dates = cube.calendar.dates();
    let sidecar = ForecastSidecar {
        units: "mm",
        shape: forecast.shape(),
        window_start: start,
        input_dates: dates[start..start + cfg.t_in]
            .iter()
            .map(|d| d.format("%Y-%m-%d").to_string())
            .collect(),
        forecast_steps: (start + cfg.t_in..start + cfg.t_in + cfg.t_out).collect(),
    };
    io::write_json(io::sidecar_path(out), &sidecar)?;
    Ok(())
}
