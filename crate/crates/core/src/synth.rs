//! Synthetic deformation datasets in the ingest table format.
//!
//! Each point's series is a Gaussian-bowl spatial envelope times a temporal
//! law, plus white noise. The static descriptors are least-squares fits of
//! the generated series, so they carry real information about it.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AcquisitionCalendar, MeasurementPoint};
use crate::rasterize::YEAR_DAYS;

/// Days between consecutive acquisitions.
pub const CADENCE_DAYS: i64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Periodic,
    ContinuousSubsidence,
    CoseismicStep,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    /// Peak of the seasonal term, mm.
    pub amplitude: f64,
    /// Seasonal period in acquisition steps; also the period used to fit the
    /// seasonality descriptor.
    pub period: f64,
    /// Linear trend, mm per step.
    pub trend: f64,
    /// First step that includes the co-seismic offset.
    pub step_time: usize,
    pub step_magnitude: f64,
    /// Bowl centre in metres, relative to the south-west corner.
    pub center: (f64, f64),
    /// Standard deviation of the Gaussian bowl, metres.
    pub radius: f64,
    /// Side of the square study area, metres.
    pub extent: f64,
    pub noise_std: f64,
    pub n_points: usize,
    pub n_dates: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self {
            kind: RegimeKind::Periodic,
            amplitude: 10.0,
            period: 52.0,
            trend: 0.0,
            step_time: 60,
            step_magnitude: -20.0,
            center: (500.0, 500.0),
            radius: 300.0,
            extent: 1000.0,
            noise_std: 0.0,
            n_points: 400,
            n_dates: 120,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_points < 3 {
            return bad(format!("need at least 3 points, got {}", self.n_points));
        }
        if self.n_dates < 3 {
            return bad(format!("need at least 3 dates, got {}", self.n_dates));
        }
        if !(self.period >= 2.0) {
            return bad(format!(
                "period must be at least 2 steps, got {}",
                self.period
            ));
        }
        if self.kind == RegimeKind::CoseismicStep
            && !(self.step_time > 0 && self.step_time < self.n_dates)
        {
            return bad(format!(
                "step_time {} outside (0, {})",
                self.step_time, self.n_dates
            ));
        }
        if !(self.extent > 0.0 && self.radius > 0.0) {
            return bad("extent and radius must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        for v in [
            self.amplitude,
            self.trend,
            self.step_magnitude,
            self.center.0,
            self.center.1,
        ] {
            if !v.is_finite() {
                return bad("regime parameters must be finite".into());
            }
        }
        Ok(())
    }

    /// Displacement at the bowl centre at step `t`, before noise.
    pub fn law(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.kind {
            RegimeKind::Stable => 0.0,
            RegimeKind::Periodic => {
                self.trend * tf
                    + self.amplitude * (2.0 * std::f64::consts::PI * tf / self.period).sin()
            }
            RegimeKind::ContinuousSubsidence => self.trend * tf,
            RegimeKind::CoseismicStep => {
                self.trend * tf
                    + if t >= self.step_time {
                        self.step_magnitude
                    } else {
                        0.0
                    }
            }
        }
    }

    pub fn envelope(&self, easting: f64, northing: f64) -> f64 {
        let (dx, dy) = (easting - self.center.0, northing - self.center.1);
        (-(dx * dx + dy * dy) / (2.0 * self.radius * self.radius)).exp()
    }

    pub fn calendar(&self) -> Result<AcquisitionCalendar> {
        AcquisitionCalendar::new(
            (0..self.n_dates)
                .map(|i| self.start_date + Duration::days(CADENCE_DAYS * i as i64))
                .collect(),
        )
    }
}

/// Least-squares fits that turn a series into the three static descriptors.
pub struct DescriptorFit {
    linear: DMatrix<f64>,
    quadratic: DMatrix<f64>,
    seasonal: DMatrix<f64>,
}

fn pseudo_inverse(design: DMatrix<f64>) -> Result<DMatrix<f64>> {
    design
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("least-squares design is degenerate: {e}")))
}

impl DescriptorFit {
    /// `period` is in steps; time is measured in years of weekly steps.
    pub fn new(n_dates: usize, period: f64) -> Result<Self> {
        let years = |i: usize| (i as f64 * CADENCE_DAYS as f64) / YEAR_DAYS;
        let omega = 2.0 * std::f64::consts::PI / period;
        let linear = DMatrix::from_fn(n_dates, 2, |i, j| if j == 0 { 1.0 } else { years(i) });
        let quadratic = DMatrix::from_fn(n_dates, 3, |i, j| years(i).powi(j as i32));
        let seasonal = DMatrix::from_fn(n_dates, 4, |i, j| match j {
            0 => 1.0,
            1 => years(i),
            2 => (omega * i as f64).sin(),
            _ => (omega * i as f64).cos(),
        });
        Ok(Self {
            linear: pseudo_inverse(linear)?,
            quadratic: pseudo_inverse(quadratic)?,
            seasonal: pseudo_inverse(seasonal)?,
        })
    }

    /// `(mean_velocity mm/yr, acceleration mm/yr², seasonality mm)`: the
    /// slope of a line, the quadratic coefficient of a parabola, and the
    /// amplitude of a sinusoid fitted alongside a line.
    pub fn descriptors(&self, series: &[f64]) -> (f64, f64, f64) {
        let y = DVector::from_column_slice(series);
        let lin = &self.linear * &y;
        let quad = &self.quadratic * &y;
        let seas = &self.seasonal * &y;
        (lin[1], quad[2], seas[2].hypot(seas[3]))
    }
}

/// Scatters `n_points` uniformly over the study area and builds their series.
pub fn generate(spec: &RegimeSpec) -> Result<(Vec<MeasurementPoint>, AcquisitionCalendar)> {
    spec.validate()?;
    let calendar = spec.calendar()?;
    let fit = DescriptorFit::new(spec.n_dates, spec.period)?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positions: Vec<(f64, f64)> = (0..spec.n_points)
        .map(|_| {
            (
                rng.random_range(0.0..spec.extent),
                rng.random_range(0.0..spec.extent),
            )
        })
        .collect();
    let law: Vec<f64> = (0..spec.n_dates).map(|t| spec.law(t)).collect();
    let points = positions
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let env = spec.envelope(x, y);
            let displacement: Vec<f64> = law
                .iter()
                .map(|&l| {
                    env * l
                        + if spec.noise_std > 0.0 {
                            noise.sample(&mut rng)
                        } else {
                            0.0
                        }
                })
                .collect();
            let (mean_velocity, acceleration, seasonality) = fit.descriptors(&displacement);
            MeasurementPoint {
                point_id: format!("P{i:05}"),
                easting: x,
                northing: y,
                mean_velocity,
                acceleration,
                seasonality,
                displacement,
            }
        })
        .collect();
    Ok((points, calendar))
}
