//! Optimisation: Smooth-L1 loss, AdamW and an early-stopping fit loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bind, forward_on_tape, Model, ModelParams};
use crate::numerics::{Scalar, Tape, Tensor};
use crate::rasterize::{chronological_split, stack_batch, SampleWindow};

/// Mean Smooth-L1 over all elements: `0.5 e² / beta` when `|e| < beta`,
/// `|e| - 0.5 beta` otherwise.
pub fn smooth_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, beta: T) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "smooth_l1 {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(beta > T::zero()) {
        return Err(Error::config(format!(
            "smooth_l1 beta must be positive, got {beta}"
        )));
    }
    let half = T::of(0.5);
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = (p - t).abs();
            if e < beta {
                half * e * e / beta
            } else {
                e - half * beta
            }
        })
        .sum();
    Ok(total / T::of(pred.numel() as f64))
}

/// Moments and step counter for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Scalar = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(params: &ModelParams<T>) -> Self {
        Self::new(params.named().into_iter().map(|(_, p)| p))
    }
}

/// One AdamW update with decoupled weight decay: `p -= lr·wd·p`, then the
/// bias-corrected Adam step. Nothing is modified if any gradient is
/// non-finite.
pub fn adamw_step<T: Scalar>(
    params: Vec<(String, &mut Tensor<T>)>,
    grads: &[&Tensor<T>],
    state: &mut AdamWState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adamw: {} params, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient for {name} has shape {:?}, param {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for {name}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gv = gv.as_f64();
            let mut x = pv.as_f64();
            x -= lr * weight_decay * x;
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gv;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gv * gv;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            x -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            *pv = T::of(x);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub smooth_l1_beta: f64,
    pub seed: u64,
    /// Trailing share of the time span used for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            patience: 30,
            max_epochs: 200,
            batch_size: 8,
            smooth_l1_beta: 1.0,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.smooth_l1_beta > 0.0) {
            return Err(Error::config("smooth_l1_beta must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config(
                "learning_rate must be positive and weight_decay non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Weights from the epoch with the lowest validation loss, or the
    /// initial weights when no epoch ran.
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// Optimizer steps taken up to the best epoch.
    pub best_step: u64,
    pub stopped_early: bool,
}

/// Splits `windows` chronologically by `cfg.val_fraction` and trains.
pub fn fit(model: Model<f32>, windows: Vec<SampleWindow>, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let (train, val) = chronological_split(windows, cfg.val_fraction)?;
    fit_split(model, &train, &val, cfg)
}

/// Mean loss over `windows`, evaluated without dropout.
pub fn evaluate_loss(
    model: &Model<f32>,
    windows: &[SampleWindow],
    beta: f64,
    batch_size: usize,
) -> Result<f64> {
    let refs: Vec<&SampleWindow> = windows.iter().collect();
    let parts = refs
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let (x, y) = stack_batch(chunk)?;
            let pred = model.forward(&x)?;
            Ok(smooth_l1(&pred, &y, beta as f32)? as f64 * chunk.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / windows.len() as f64)
}

fn check_windows(model: &Model<f32>, windows: &[SampleWindow], what: &str) -> Result<()> {
    let cfg = model.config();
    if windows.is_empty() {
        return Err(Error::InvalidInput(format!("no {what} windows")));
    }
    let expected_in = [cfg.t_in, cfg.c_in, cfg.height, cfg.width];
    let expected_out = [cfg.t_out, 1, cfg.height, cfg.width];
    for w in windows {
        if w.input.shape() != expected_in || w.target.shape() != expected_out {
            return Err(Error::shape(format!(
                "{what} window at step {} has input {:?} and target {:?}; model expects {expected_in:?} and {expected_out:?}",
                w.start,
                w.input.shape(),
                w.target.shape()
            )));
        }
    }
    Ok(())
}

/// Trains on `train`, selecting the epoch with the best loss on `val`.
pub fn fit_split(
    model: Model<f32>,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    check_windows(&model, train, "training")?;
    check_windows(&model, val, "validation")?;

    let model_cfg = model.config().clone();
    let mut best = model.clone();
    let mut current = model;
    let mut state = AdamWState::for_model(current.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let beta = cfg.smooth_l1_beta as f32;

    let mut history = Vec::new();
    let mut best_val = None::<f64>;
    let mut best_epoch = None;
    let mut best_step = 0;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SampleWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = stack_batch(&batch)?;
            let mut tape = Tape::<f32>::new();
            let w = bind(&mut tape, current.params(), true);
            let xv = tape.constant(x);
            let rng: Option<&mut dyn rand::RngCore> = if model_cfg.dropout > 0.0 {
                Some(&mut dropout_rng)
            } else {
                None
            };
            let out = forward_on_tape(&mut tape, &model_cfg, &w, xv, rng)?;
            let loss = tape.smooth_l1(out.output, &y, beta)?;
            let loss_value = tape.value(loss).item().as_f64();
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            loss_sum += loss_value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let grad_list = w
                .named()
                .into_iter()
                .map(|(_, &v)| grads.wrt(v))
                .collect::<Result<Vec<_>>>()?;
            adamw_step(
                current.params_mut().named_mut(),
                &grad_list,
                &mut state,
                cfg.learning_rate,
                cfg.weight_decay,
            )?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = evaluate_loss(&current, val, cfg.smooth_l1_beta, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let is_best = best_val.is_none_or(|b| val_loss < b);
        if is_best {
            best_val = Some(val_loss);
            best_epoch = Some(epoch);
            best_step = state.t;
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}{}",
            if is_best { " *" } else { "" }
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            is_best,
        });
        if since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(FitOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loss: best_val,
        best_step,
        stopped_early,
    })
}

pub fn write_history(writer: impl Write, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for record in history {
        w.serialize(record)?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "train_loss", "val_loss", "is_best"])?;
    }
    w.flush().map_err(|e| Error::io("history", e))?;
    Ok(())
}

pub fn write_history_file(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(std::io::BufWriter::new(file), history)
}
