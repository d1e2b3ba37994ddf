use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annual period used by the cyclical day encoding, in days.
pub const YEAR_DAYS: f64 = 365.25;

/// Sine/cosine encoding of a day of the year.
pub fn encode_day(day: f64) -> (f64, f64) {
    let phase = 2.0 * std::f64::consts::PI * day / YEAR_DAYS;
    (phase.sin(), phase.cos())
}

/// Centred three-point moving average; the window shrinks to the available
/// neighbours at either end.
pub fn smooth_series(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Per-channel standardisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the channel had no spread over the fit range; it is then only
    /// centred and `std` is recorded as 1.
    pub constant: bool,
}

impl ChannelStats {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let values: Vec<f64> = values
            .into_iter()
            .inspect(|v| {
                n += 1;
                sum += v;
            })
            .collect();
        if n == 0 {
            return Err(Error::InvalidInput("empty normalisation fit range".into()));
        }
        let mean = sum / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            return Ok(ChannelStats {
                mean,
                std: 1.0,
                constant: true,
            });
        }
        Ok(ChannelStats {
            mean,
            std,
            constant: false,
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Standardises `channels` of a `(T, C, plane)` buffer in place, with
/// statistics drawn only from the time steps in `fit_range`.
pub fn zscore_fit_apply(
    data: &mut [f64],
    shape: (usize, usize, usize),
    channels: Range<usize>,
    fit_range: Range<usize>,
) -> Result<Vec<ChannelStats>> {
    let (t, c, plane) = shape;
    if data.len() != t * c * plane {
        return Err(Error::shape(format!(
            "buffer of {} for cube {shape:?}",
            data.len()
        )));
    }
    if fit_range.is_empty() || fit_range.end > t {
        return Err(Error::InvalidInput(format!(
            "fit range {fit_range:?} invalid for {t} time steps"
        )));
    }
    if channels.end > c {
        return Err(Error::shape(format!("channels {channels:?} out of {c}")));
    }
    let mut stats = Vec::with_capacity(channels.len());
    for ch in channels {
        let slice = |ti: usize| (ti * c + ch) * plane..(ti * c + ch + 1) * plane;
        let s = ChannelStats::fit(fit_range.clone().flat_map(|ti| data[slice(ti)].to_vec()))?;
        for ti in 0..t {
            for v in &mut data[slice(ti)] {
                *v = s.normalize(*v);
            }
        }
        stats.push(s);
    }
    Ok(stats)
}
