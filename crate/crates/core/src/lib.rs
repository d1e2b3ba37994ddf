//! Multi-modal spatio-temporal transformer for gridded ground-deformation
//! forecasting.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] reads persistent-scatterer CSV tables into [`MeasurementPoint`]s.
//! * [`rasterize`] interpolates them onto a grid and assembles the normalised
//!   six-channel [`DataCube`] plus sliding [`SampleWindow`]s.
//! * [`model`] is the joint spatio-temporal attention network.
//! * [`train`] runs AdamW with a Smooth-L1 objective and early stopping.
//! * [`eval`] computes the forecast metrics and writes reports.
//! * [`synth`] generates synthetic deformation regimes in the ingest format.
//!
//! Everything rests on [`numerics`], a small dense tensor library with a
//! reverse-mode gradient tape.

pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod rasterize;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, ForecastReport, Forecaster};
pub use ingest::{AcquisitionCalendar, ColumnSpec, IngestOutput, MeasurementPoint};
pub use model::{Model, ModelConfig, ModelParams};
pub use numerics::{Scalar, Tensor};
pub use rasterize::{DataCube, GridSpec, SampleWindow};
pub use synth::{RegimeKind, RegimeSpec};
pub use train::{fit, AdamWState, FitOutcome, TrainConfig};
