#![allow(dead_code)]

use mmstt::rasterize::{build_cube, holdout_start, make_windows_in, SampleWindow};
use mmstt::synth::generate;
use mmstt::{DataCube, GridSpec, ModelConfig, RegimeKind, RegimeSpec};

/// Periodic bowl sampled weekly, sized for a 16×16 working grid.
pub fn periodic_spec(seed: u64) -> RegimeSpec {
    RegimeSpec {
        kind: RegimeKind::Periodic,
        amplitude: 10.0,
        period: 26.0,
        noise_std: 0.2,
        n_points: 300,
        n_dates: 120,
        seed,
        ..RegimeSpec::default()
    }
}

pub fn cube_for(spec: &RegimeSpec, native: usize, working: usize, holdout: f64) -> DataCube {
    let (points, calendar) = generate(spec).expect("synthetic data");
    let fit_end = holdout_start(calendar.len(), holdout).expect("holdout");
    build_cube(&points, &calendar, &GridSpec::new(native, working), fit_end).expect("cube")
}

/// Windows inside the fitted range and inside the held-out range.
pub fn fit_and_holdout_windows(
    cube: &DataCube,
    t_in: usize,
    t_out: usize,
) -> (Vec<SampleWindow>, Vec<SampleWindow>) {
    let fit = make_windows_in(cube, 0..cube.fit_end, t_in, t_out, 1).expect("fit windows");
    let held = make_windows_in(cube, cube.fit_end..cube.steps(), t_in, t_out, 1)
        .expect("held-out windows");
    (fit, held)
}

pub fn small_config(t_in: usize, t_out: usize, side: usize) -> ModelConfig {
    ModelConfig {
        t_in,
        t_out,
        height: side,
        width: side,
        patch: 4,
        embed_dim: 32,
        layers: 2,
        heads: 4,
        ..ModelConfig::default()
    }
}
