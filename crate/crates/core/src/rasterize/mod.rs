//! Scattered points to the normalised multi-modal cube and its training
//! windows.

mod cube;
mod grid;
mod series;
mod windows;

pub use cube::{build_cube, holdout_start, DataCube, CHANNELS, C_IN, NORMALIZED_CHANNELS};
pub use grid::{
    downsample, interpolate_grid, BoundingBox, CellStencil, GridSpec, InterpolationPlan,
};
pub use series::{encode_day, smooth_series, zscore_fit_apply, ChannelStats, YEAR_DAYS};
pub use windows::{chronological_split, make_windows, make_windows_in, stack_batch, SampleWindow};
