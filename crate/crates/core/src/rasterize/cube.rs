use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{downsample, BoundingBox, GridSpec, InterpolationPlan};
use super::series::{encode_day, smooth_series, zscore_fit_apply, ChannelStats};
use crate::error::{Error, Result};
use crate::ingest::{parse_date, AcquisitionCalendar, MeasurementPoint};
use crate::numerics::{io, Tensor};

/// Number of input channels.
pub const C_IN: usize = 6;

pub const CHANNELS: [&str; C_IN] = [
    "displacement",
    "mean_velocity",
    "acceleration",
    "seasonality",
    "f_sin",
    "f_cos",
];

/// Channels standardised with z-scores (the rest are already bounded).
pub const NORMALIZED_CHANNELS: usize = 4;

/// Gridded multi-modal tensor of shape `(T, 6, H, W)`.
#[derive(Debug, Clone)]
pub struct DataCube {
    pub tensor: Tensor<f32>,
    /// Standardisation of channels 0..4.
    pub norm_stats: Vec<ChannelStats>,
    pub calendar: AcquisitionCalendar,
    pub bbox: BoundingBox,
    /// Statistics were fitted on time steps `0..fit_end`; later steps are
    /// held out.
    pub fit_end: usize,
}

#[derive(Serialize, Deserialize)]
struct CubeSidecar {
    channels: Vec<String>,
    shape: Vec<usize>,
    norm_stats: Vec<ChannelStats>,
    dates: Vec<String>,
    bbox: BoundingBox,
    fit_end: usize,
}

impl DataCube {
    pub fn steps(&self) -> usize {
        self.tensor.dim(0)
    }

    pub fn height(&self) -> usize {
        self.tensor.dim(2)
    }

    pub fn width(&self) -> usize {
        self.tensor.dim(3)
    }

    pub fn displacement_stats(&self) -> ChannelStats {
        self.norm_stats[0]
    }

    /// The same data standardised with other statistics, such as those of
    /// the cube a model was trained on.
    pub fn restandardize(&self, stats: &[ChannelStats]) -> Result<DataCube> {
        if stats.len() != NORMALIZED_CHANNELS {
            return Err(Error::shape(format!(
                "{} channel statistics, expected {NORMALIZED_CHANNELS}",
                stats.len()
            )));
        }
        let plane = self.height() * self.width();
        let mut tensor = self.tensor.clone();
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % C_IN;
            if ch < NORMALIZED_CHANNELS {
                *v = stats[ch].normalize(self.norm_stats[ch].denormalize(*v as f64)) as f32;
            }
        }
        Ok(DataCube {
            tensor,
            norm_stats: stats.to_vec(),
            ..self.clone()
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        io::write_tensor(path, &self.tensor)?;
        let sidecar = CubeSidecar {
            channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
            shape: self.tensor.shape().to_vec(),
            norm_stats: self.norm_stats.clone(),
            dates: self
                .calendar
                .dates()
                .iter()
                .map(|d| d.format("%Y%m%d").to_string())
                .collect(),
            bbox: self.bbox,
            fit_end: self.fit_end,
        };
        io::write_json(io::sidecar_path(path), &sidecar)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tensor: Tensor<f32> = io::read_tensor(path)?;
        let sidecar: CubeSidecar = io::read_json(io::sidecar_path(path))?;
        let invalid = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        if tensor.rank() != 4 || tensor.dim(1) != C_IN || tensor.shape() != sidecar.shape.as_slice()
        {
            return Err(invalid(format!(
                "cube tensor has shape {:?}, sidecar says {:?}",
                tensor.shape(),
                sidecar.shape
            )));
        }
        if sidecar.norm_stats.len() != NORMALIZED_CHANNELS || sidecar.dates.len() != tensor.dim(0) {
            return Err(invalid(
                "sidecar statistics or dates do not match the tensor".into(),
            ));
        }
        let dates = sidecar
            .dates
            .iter()
            .map(|d| parse_date(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(DataCube {
            tensor,
            norm_stats: sidecar.norm_stats,
            calendar: AcquisitionCalendar::new(dates)?,
            bbox: sidecar.bbox,
            fit_end: sidecar.fit_end,
        })
    }
}

/// First held-out time step when the last `holdout_fraction` of `steps` is
/// reserved for evaluation.
pub fn holdout_start(steps: usize, holdout_fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::config(format!(
            "holdout fraction {holdout_fraction} outside [0, 1)"
        )));
    }
    let start = ((steps as f64) * (1.0 - holdout_fraction)).round() as usize;
    Ok(start.clamp(1, steps))
}

/// Rasterises points into a normalised cube.
///
/// Displacement is interpolated per date, block-averaged, smoothed along
/// time per pixel (separately on each side of `fit_end`), then standardised
/// together with the static rasters using statistics from `0..fit_end` only.
pub fn build_cube(
    points: &[MeasurementPoint],
    calendar: &AcquisitionCalendar,
    grid: &GridSpec,
    fit_end: usize,
) -> Result<DataCube> {
    grid.validate()?;
    let steps = calendar.len();
    if steps == 0 {
        return Err(Error::InvalidInput("empty acquisition calendar".into()));
    }
    if fit_end == 0 || fit_end > steps {
        return Err(Error::InvalidInput(format!(
            "fit end {fit_end} outside 1..={steps}"
        )));
    }
    if let Some(p) = points.iter().find(|p| p.displacement.len() != steps) {
        return Err(Error::InvalidInput(format!(
            "point {} has {} displacement values for {steps} dates",
            p.point_id,
            p.displacement.len()
        )));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.easting, p.northing)).collect();
    let bbox = match grid.bbox {
        Some(b) => b,
        None => BoundingBox::enclosing(&xy)?,
    };
    let plan = InterpolationPlan::build(&xy, grid, &bbox)?;
    let factor = grid.factor();
    let raster =
        |values: Vec<f64>| -> Result<Tensor<f64>> { downsample(&plan.apply(&values)?, factor) };

    let displacement: Vec<Tensor<f64>> = (0..steps)
        .into_par_iter()
        .map(|t| raster(points.iter().map(|p| p.displacement[t]).collect()))
        .collect::<Result<_>>()?;
    let statics = [
        raster(points.iter().map(|p| p.mean_velocity).collect())?,
        raster(points.iter().map(|p| p.acceleration).collect())?,
        raster(points.iter().map(|p| p.seasonality).collect())?,
    ];

    let side = grid.working_size;
    let plane = side * side;
    let mut data = vec![0.0f64; steps * C_IN * plane];
    for px in 0..plane {
        let series: Vec<f64> = displacement.iter().map(|r| r.data()[px]).collect();
        let (fit, held) = series.split_at(fit_end);
        let smoothed = smooth_series(fit).into_iter().chain(smooth_series(held));
        for (t, v) in smoothed.enumerate() {
            data[t * C_IN * plane + px] = v;
        }
    }
    let days = calendar.day_of_year();
    for t in 0..steps {
        let frame = &mut data[t * C_IN * plane..(t + 1) * C_IN * plane];
        for (k, s) in statics.iter().enumerate() {
            frame[(k + 1) * plane..(k + 2) * plane].copy_from_slice(s.data());
        }
        let (sin, cos) = encode_day(days[t]);
        frame[4 * plane..5 * plane].fill(sin);
        frame[5 * plane..6 * plane].fill(cos);
    }
    let norm_stats = zscore_fit_apply(
        &mut data,
        (steps, C_IN, plane),
        0..NORMALIZED_CHANNELS,
        0..fit_end,
    )?;
    let tensor = Tensor::new([steps, C_IN, side, side], data)?.cast();
    Ok(DataCube {
        tensor,
        norm_stats,
        calendar: calendar.clone(),
        bbox,
        fit_end,
    })
}
