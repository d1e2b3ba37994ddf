use std::ops::Range;

use super::cube::{DataCube, C_IN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One training example cut from a cube.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    /// Index of `input[0]` on the cube's time axis.
    pub start: usize,
    /// `(T_in, 6, H, W)`
    pub input: Tensor<f32>,
    /// Normalised displacement of the following steps, `(T_out, 1, H, W)`.
    pub target: Tensor<f32>,
}

impl SampleWindow {
    pub fn t_in(&self) -> usize {
        self.input.dim(0)
    }

    pub fn t_out(&self) -> usize {
        self.target.dim(0)
    }

    /// One past the last time step covered by the target.
    pub fn end(&self) -> usize {
        self.start + self.t_in() + self.t_out()
    }
}

/// Sliding windows over the whole cube.
pub fn make_windows(
    cube: &DataCube,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<Vec<SampleWindow>> {
    make_windows_in(cube, 0..cube.steps(), t_in, t_out, stride)
}

/// Sliding windows lying entirely inside `range`.
pub fn make_windows_in(
    cube: &DataCube,
    range: Range<usize>,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<Vec<SampleWindow>> {
    if t_in == 0 || t_out == 0 || stride == 0 {
        return Err(Error::config("window lengths and stride must be positive"));
    }
    if range.end > cube.steps() {
        return Err(Error::InvalidInput(format!(
            "range {range:?} beyond {} steps",
            cube.steps()
        )));
    }
    let span = t_in + t_out;
    if range.len() < span {
        return Err(Error::InvalidInput(format!(
            "{} time steps cannot hold a window of {t_in} inputs and {t_out} targets",
            range.len()
        )));
    }
    let (h, w) = (cube.height(), cube.width());
    let plane = h * w;
    let frame = C_IN * plane;
    let data = cube.tensor.data();
    (range.start..=range.end - span)
        .step_by(stride)
        .map(|start| {
            let input = Tensor::new(
                [t_in, C_IN, h, w],
                data[start * frame..(start + t_in) * frame].to_vec(),
            )?;
            let mut target = Vec::with_capacity(t_out * plane);
            for t in start + t_in..start + span {
                target.extend_from_slice(&data[t * frame..t * frame + plane]);
            }
            Ok(SampleWindow {
                start,
                input,
                target: Tensor::new([t_out, 1, h, w], target)?,
            })
        })
        .collect()
}

/// Splits windows chronologically: the latest `val_fraction` of them (by
/// start step, at least one) go to validation. Training windows that reach
/// into the first validation window are discarded, so every training
/// window ends before any validation window begins.
pub fn chronological_split(
    mut windows: Vec<SampleWindow>,
    val_fraction: f64,
) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    if windows.is_empty() {
        return Err(Error::InvalidInput("no windows to split".into()));
    }
    windows.sort_by_key(|w| w.start);
    let n_val = ((windows.len() as f64 * val_fraction).ceil() as usize).clamp(1, windows.len());
    let val = windows.split_off(windows.len() - n_val);
    let boundary = val[0].start;
    windows.retain(|w| w.end() <= boundary);
    if windows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no training window ends before the first validation window at step {boundary}"
        )));
    }
    Ok((windows, val))
}

/// Stacks windows into `(B, T_in, 6, H, W)` inputs and `(B, T_out, 1, H, W)`
/// targets.
pub fn stack_batch(windows: &[&SampleWindow]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let inputs: Vec<&Tensor<f32>> = windows.iter().map(|w| &w.input).collect();
    let targets: Vec<&Tensor<f32>> = windows.iter().map(|w| &w.target).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}
