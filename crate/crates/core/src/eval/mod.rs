//! Forecast metrics and report generation, all in physical units (mm).

mod metrics;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{binned_errors, mae, pearson, r2, rmse, ssim, BinStats, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{io, Tensor};
use crate::rasterize::{stack_batch, ChannelStats, SampleWindow};

/// Anything mapping `(B, T_in, 6, H, W)` inputs to `(B, T_out, 1, H, W)`
/// normalised displacement forecasts.
pub trait Forecaster: Sync {
    fn predict(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Forecaster for Model<f32> {
    fn predict(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward(inputs)
    }
}

/// Repeats the last observed displacement frame for every horizon.
#[derive(Debug, Clone, Copy)]
pub struct Persistence {
    pub t_out: usize,
}

impl Forecaster for Persistence {
    fn predict(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = inputs.shape();
        if s.len() != 5 || s[1] == 0 {
            return Err(Error::shape(format!("persistence input {s:?}")));
        }
        let (b, t_in, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let plane = h * w;
        let mut out = Vec::with_capacity(b * self.t_out * plane);
        for bi in 0..b {
            let off = ((bi * t_in + t_in - 1) * c) * plane;
            for _ in 0..self.t_out {
                out.extend_from_slice(&inputs.data()[off..off + plane]);
            }
        }
        Tensor::new([b, self.t_out, 1, h, w], out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pixels `(row, col)` whose horizon-1 series are reported; the centre
    /// pixel when unset.
    pub nodes: Option<Vec<(usize, usize)>>,
    pub n_bins: usize,
    /// A window is flagged when a frame-to-frame jump in its target exceeds
    /// this multiple of the typical (median) jump in its input.
    pub jump_factor: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nodes: None,
            n_bins: 10,
            jump_factor: 3.0,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based forecast step.
    pub horizon: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    /// Mean over windows of the per-map value; windows where it is
    /// undefined are skipped.
    pub ssim: Option<f64>,
    pub corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub start: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    /// Median over the input of the mean absolute frame-to-frame change, mm.
    pub input_jump: f64,
    /// Largest mean absolute frame-to-frame change from the last input frame
    /// through the target, mm.
    pub target_jump: f64,
    pub abrupt_change: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePoint {
    /// Cube time index of the forecast step.
    pub step: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub node_id: usize,
    pub row: usize,
    pub col: usize,
    pub points: Vec<NodePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub n_windows: usize,
    pub horizons: Vec<HorizonMetrics>,
    pub overall: OverallMetrics,
    pub windows: Vec<WindowMetrics>,
    pub nodes: Vec<NodeSeries>,
    pub bins: Vec<BinStats>,
    pub flags: Vec<String>,
}

impl ForecastReport {
    pub fn horizon(&self, h: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|m| m.horizon == h)
    }

    pub fn abrupt_windows(&self) -> impl Iterator<Item = &WindowMetrics> {
        self.windows.iter().filter(|w| w.abrupt_change)
    }
}

fn frame_jumps(frames: &[&[f64]]) -> Vec<f64> {
    frames
        .windows(2)
        .map(|p| {
            p[0].iter()
                .zip(p[1])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / p[0].len() as f64
        })
        .collect()
}

/// The median keeps a step smeared over the input boundary by temporal
/// smoothing from masking the jump that follows it.
fn median_frame_jump(frames: &[&[f64]]) -> f64 {
    let mut jumps = frame_jumps(frames);
    if jumps.is_empty() {
        return 0.0;
    }
    jumps.sort_by(f64::total_cmp);
    let n = jumps.len();
    if n % 2 == 1 {
        jumps[n / 2]
    } else {
        0.5 * (jumps[n / 2 - 1] + jumps[n / 2])
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Runs `forecaster` over `windows` and scores the forecasts after mapping
/// them back to millimetres with `stats`.
pub fn evaluate(
    forecaster: &impl Forecaster,
    windows: &[SampleWindow],
    stats: &ChannelStats,
    cfg: &EvalConfig,
) -> Result<ForecastReport> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidInput("no evaluation windows".into()))?;
    if cfg.batch_size == 0 || cfg.n_bins < 2 || !(cfg.jump_factor > 0.0) {
        return Err(Error::config(
            "eval needs batch_size ≥ 1, n_bins ≥ 2 and a positive jump_factor",
        ));
    }
    let (t_out, h, w) = (first.t_out(), first.target.dim(2), first.target.dim(3));
    let plane = h * w;
    let nodes = cfg.nodes.clone().unwrap_or_else(|| vec![(h / 2, w / 2)]);
    if let Some(&(r, c)) = nodes.iter().find(|&&(r, c)| r >= h || c >= w) {
        return Err(Error::config(format!(
            "node ({r}, {c}) outside the {h}x{w} grid"
        )));
    }
    let refs: Vec<&SampleWindow> = windows.iter().collect();
    let preds: Vec<Tensor<f32>> = refs
        .par_chunks(cfg.batch_size)
        .map(|chunk| {
            let (x, _) = stack_batch(chunk)?;
            let y = forecaster.predict(&x)?;
            if y.shape() != [chunk.len(), t_out, 1, h, w] {
                return Err(Error::shape(format!(
                    "forecast shape {:?}, expected {:?}",
                    y.shape(),
                    [chunk.len(), t_out, 1, h, w]
                )));
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;

    let denorm = |v: f32| stats.denormalize(v as f64);
    // [window][horizon] -> map in mm
    let mut pred_mm: Vec<Vec<Vec<f64>>> = Vec::with_capacity(windows.len());
    for batch in &preds {
        for per_window in batch.data().chunks(t_out * plane) {
            pred_mm.push(
                per_window
                    .chunks(plane)
                    .map(|m| m.iter().map(|&v| denorm(v)).collect())
                    .collect(),
            );
        }
    }
    if pred_mm.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "forecast contains non-finite values".into(),
        ));
    }
    let true_mm: Vec<Vec<Vec<f64>>> = windows
        .iter()
        .map(|win| {
            win.target
                .data()
                .chunks(plane)
                .map(|m| m.iter().map(|&v| denorm(v)).collect())
                .collect()
        })
        .collect();

    let mut flags = Vec::new();
    let mut horizons = Vec::with_capacity(t_out);
    for k in 0..t_out {
        let p: Vec<f64> = pred_mm
            .iter()
            .flat_map(|win| win[k].iter().copied())
            .collect();
        let t: Vec<f64> = true_mm
            .iter()
            .flat_map(|win| win[k].iter().copied())
            .collect();
        let maps: Vec<(Option<f64>, Option<f64>)> = pred_mm
            .par_iter()
            .zip(&true_mm)
            .map(|(pw, tw)| Ok((ssim(&pw[k], &tw[k], h, w)?, pearson(&pw[k], &tw[k])?)))
            .collect::<Result<_>>()?;
        let metrics = HorizonMetrics {
            horizon: k + 1,
            rmse: rmse(&p, &t)?,
            mae: mae(&p, &t)?,
            r2: r2(&p, &t)?,
            ssim: mean_defined(maps.iter().map(|m| m.0)),
            corr: mean_defined(maps.iter().map(|m| m.1)),
        };
        if metrics.r2.is_none() {
            flags.push(format!("r2 undefined at horizon {}: constant truth", k + 1));
        }
        if maps.iter().any(|m| m.0.is_none()) {
            flags.push(format!("ssim undefined for some maps at horizon {}", k + 1));
        }
        horizons.push(metrics);
    }

    let all_p: Vec<f64> = pred_mm.iter().flatten().flatten().copied().collect();
    let all_t: Vec<f64> = true_mm.iter().flatten().flatten().copied().collect();
    let overall = OverallMetrics {
        rmse: rmse(&all_p, &all_t)?,
        mae: mae(&all_p, &all_t)?,
        r2: r2(&all_p, &all_t)?,
    };
    let bins = binned_errors(&all_p, &all_t, cfg.n_bins)?;

    let mut window_metrics = Vec::with_capacity(windows.len());
    for ((win, pw), tw) in windows.iter().zip(&pred_mm).zip(&true_mm) {
        let p: Vec<f64> = pw.iter().flatten().copied().collect();
        let t: Vec<f64> = tw.iter().flatten().copied().collect();
        let frame = win.input.numel() / win.t_in();
        let inputs: Vec<Vec<f64>> = (0..win.t_in())
            .map(|s| {
                win.input.data()[s * frame..s * frame + plane]
                    .iter()
                    .map(|&v| denorm(v))
                    .collect()
            })
            .collect();
        let input_refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let mut target_refs: Vec<&[f64]> = vec![input_refs[input_refs.len() - 1]];
        target_refs.extend(tw.iter().map(Vec::as_slice));
        let input_jump = median_frame_jump(&input_refs);
        let target_jump = frame_jumps(&target_refs).into_iter().fold(0.0, f64::max);
        let abrupt_change = target_jump > cfg.jump_factor * input_jump && target_jump > 0.0;
        if abrupt_change {
            flags.push(format!(
                "abrupt change in the target of the window starting at step {}: jump {target_jump:.3} mm vs {input_jump:.3} mm in the input",
                win.start
            ));
        }
        window_metrics.push(WindowMetrics {
            start: win.start,
            rmse: rmse(&p, &t)?,
            mae: mae(&p, &t)?,
            r2: r2(&p, &t)?,
            input_jump,
            target_jump,
            abrupt_change,
        });
    }

    let nodes = nodes
        .iter()
        .map(|&(row, col)| NodeSeries {
            node_id: row * w + col,
            row,
            col,
            points: windows
                .iter()
                .zip(&pred_mm)
                .zip(&true_mm)
                .map(|((win, pw), tw)| NodePoint {
                    step: win.start + win.t_in(),
                    y_true: tw[0][row * w + col],
                    y_pred: pw[0][row * w + col],
                })
                .collect(),
        })
        .collect();

    Ok(ForecastReport {
        n_windows: windows.len(),
        horizons,
        overall,
        windows: window_metrics,
        nodes,
        bins,
        flags,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_file(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `report.json`, `summary.csv`, `nodes.csv` and `bins.csv` to `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &ForecastReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(dir.join("report.json"), report)?;

    let mut w = csv_file(&dir.join("summary.csv"))?;
    w.write_record(["horizon", "rmse", "mae", "r2", "ssim", "corr"])?;
    for m in &report.horizons {
        w.write_record([
            format!("t+{}", m.horizon),
            m.rmse.to_string(),
            m.mae.to_string(),
            opt(m.r2),
            opt(m.ssim),
            opt(m.corr),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(dir.join("summary.csv"), e))?;

    let mut w = csv_file(&dir.join("nodes.csv"))?;
    w.write_record(["node_id", "step", "y_true", "y_pred"])?;
    for node in &report.nodes {
        for p in &node.points {
            w.write_record([
                node.node_id.to_string(),
                p.step.to_string(),
                p.y_true.to_string(),
                p.y_pred.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join("nodes.csv"), e))?;

    let mut w = csv_file(&dir.join("bins.csv"))?;
    w.write_record([
        "bin",
        "lower",
        "upper",
        "count",
        "mae",
        "residual_median",
        "residual_q1",
        "residual_q3",
    ])?;
    for (i, b) in report.bins.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.count.to_string(),
            opt(b.mae),
            opt(b.residual_median),
            opt(b.residual_q1),
            opt(b.residual_q3),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("bins.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(
        start: usize,
        input: Vec<f32>,
        target: Vec<f32>,
        t_in: usize,
        t_out: usize,
        n: usize,
    ) -> SampleWindow {
        SampleWindow {
            start,
            input: Tensor::new([t_in, 6, n, n], input).unwrap(),
            target: Tensor::new([t_out, 1, n, n], target).unwrap(),
        }
    }

    /// Windows whose displacement follows `f(t, i, j)`; other channels zero.
    fn windows_from(
        f: impl Fn(usize, usize, usize) -> f32,
        count: usize,
        t_in: usize,
        t_out: usize,
        n: usize,
    ) -> Vec<SampleWindow> {
        (0..count)
            .map(|s| {
                let mut input = vec![0.0; t_in * 6 * n * n];
                for t in 0..t_in {
                    for p in 0..n * n {
                        input[t * 6 * n * n + p] = f(s + t, p / n, p % n);
                    }
                }
                let target = (0..t_out)
                    .flat_map(|k| (0..n * n).map(move |p| (k, p)))
                    .map(|(k, p)| f(s + t_in + k, p / n, p % n))
                    .collect();
                window(s, input, target, t_in, t_out, n)
            })
            .collect()
    }

    struct Oracle<F: Fn(usize, usize, usize) -> f32 + Sync> {
        f: F,
        t_out: usize,
        n: usize,
        starts: Vec<usize>,
    }

    impl<F: Fn(usize, usize, usize) -> f32 + Sync> Forecaster for Oracle<F> {
        fn predict(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
            // identify the window by its first input frame
            let (t_in, n) = (inputs.dim(1), self.n);
            let mut out = Vec::new();
            for b in 0..inputs.dim(0) {
                let first = inputs.get(&[b, 0, 0, 1, 2]);
                let s = *self
                    .starts
                    .iter()
                    .find(|&&s| (self.f)(s, 1, 2) == first)
                    .unwrap();
                for k in 0..self.t_out {
                    for p in 0..n * n {
                        out.push((self.f)(s + t_in + k, p / n, p % n));
                    }
                }
            }
            Tensor::new([inputs.dim(0), self.t_out, 1, n, n], out)
        }
    }

    fn sine(t: usize, i: usize, j: usize) -> f32 {
        ((t as f32 * 0.37 + i as f32 * 0.2).sin() * (1.0 + j as f32 * 0.05)) + 0.01 * t as f32
    }

    #[test]
    fn oracle_forecast_is_exact() {
        let wins = windows_from(sine, 6, 4, 3, 8);
        let stats = ChannelStats {
            mean: 2.0,
            std: 5.0,
            constant: false,
        };
        let oracle = Oracle {
            f: sine,
            t_out: 3,
            n: 8,
            starts: (0..6).collect(),
        };
        let report = evaluate(&oracle, &wins, &stats, &EvalConfig::default()).unwrap();
        assert_eq!(report.horizons.len(), 3);
        for m in &report.horizons {
            assert!(m.rmse < 1e-6);
            assert!((m.ssim.unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn persistence_is_finite_but_imperfect() {
        let wins = windows_from(sine, 6, 4, 3, 8);
        let stats = ChannelStats {
            mean: 0.0,
            std: 3.0,
            constant: false,
        };
        let report = evaluate(
            &Persistence { t_out: 3 },
            &wins,
            &stats,
            &EvalConfig::default(),
        )
        .unwrap();
        for m in &report.horizons {
            assert!(m.rmse.is_finite() && m.rmse > 0.0);
            assert!(m.r2.unwrap() < 1.0);
        }
        assert_eq!(report.nodes[0].node_id, 4 * 8 + 4);
        assert_eq!(report.nodes[0].points.len(), 6);
        assert_eq!(report.nodes[0].points[2].step, 2 + 4);
    }

    #[test]
    fn rmse_dominates_mae_on_random_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wins = windows_from(sine, 5, 3, 2, 8);
        struct Noise(Vec<f32>);
        impl Forecaster for Noise {
            fn predict(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
                let n = inputs.dim(0) * 2 * 64;
                Tensor::new([inputs.dim(0), 2, 1, 8, 8], self.0[..n].to_vec())
            }
        }
        let noise = Noise((0..8 * 128).map(|_| rng.random_range(-3.0..3.0)).collect());
        let report = evaluate(
            &noise,
            &wins,
            &ChannelStats {
                mean: 1.0,
                std: 2.0,
                constant: false,
            },
            &EvalConfig::default(),
        )
        .unwrap();
        for m in &report.horizons {
            assert!(m.rmse >= m.mae && m.mae >= 0.0);
            assert!(m.r2.unwrap() <= 1.0);
            assert!(m.ssim.unwrap().abs() <= 1.0 && m.corr.unwrap().abs() <= 1.0);
        }
        assert!(report.overall.rmse >= report.overall.mae);
    }

    #[test]
    fn metrics_scale_with_channel_std() {
        let wins = windows_from(sine, 4, 3, 2, 8);
        let unit = ChannelStats {
            mean: 0.0,
            std: 1.0,
            constant: false,
        };
        let scaled = ChannelStats {
            mean: -4.0,
            std: 7.5,
            constant: false,
        };
        let p = Persistence { t_out: 2 };
        let a = evaluate(&p, &wins, &unit, &EvalConfig::default()).unwrap();
        let b = evaluate(&p, &wins, &scaled, &EvalConfig::default()).unwrap();
        for (x, y) in a.horizons.iter().zip(&b.horizons) {
            assert!((x.rmse * 7.5 - y.rmse).abs() < 1e-6);
        }
    }

    #[test]
    fn step_in_target_is_flagged() {
        let step = |t: usize, _: usize, _: usize| if t >= 6 { 10.0 } else { 0.01 * t as f32 };
        let wins = windows_from(step, 5, 3, 3, 8);
        let report = evaluate(
            &Persistence { t_out: 3 },
            &wins,
            &ChannelStats {
                mean: 0.0,
                std: 1.0,
                constant: false,
            },
            &EvalConfig::default(),
        )
        .unwrap();
        // the jump from step 5 to 6 follows the last input frame in windows
        // 1..=3 and lies inside the input of window 4
        let flagged: Vec<usize> = report.abrupt_windows().map(|w| w.start).collect();
        assert_eq!(flagged, vec![1, 2, 3]);
        assert!(report.flags.iter().any(|f| f.contains("abrupt")));
    }

    #[test]
    fn step_smoothed_across_the_input_boundary_is_flagged() {
        // a step of 10 between steps 5 and 6 after a centred 3-point average
        let smeared = |t: usize, _: usize, _: usize| match t {
            0..=4 => 0.0,
            5 => 10.0 / 3.0,
            6 => 20.0 / 3.0,
            _ => 10.0,
        };
        let wins = windows_from(smeared, 2, 5, 2, 8);
        let report = evaluate(
            &Persistence { t_out: 2 },
            &wins[1..],
            &ChannelStats {
                mean: 0.0,
                std: 1.0,
                constant: false,
            },
            &EvalConfig::default(),
        )
        .unwrap();
        assert!(report.windows[0].abrupt_change, "{:?}", report.windows[0]);
    }

    #[test]
    fn empty_and_bad_nodes() {
        let p = Persistence { t_out: 2 };
        let stats = ChannelStats {
            mean: 0.0,
            std: 1.0,
            constant: false,
        };
        assert!(evaluate(&p, &[], &stats, &EvalConfig::default()).is_err());
        let wins = windows_from(sine, 2, 3, 2, 8);
        let cfg = EvalConfig {
            nodes: Some(vec![(8, 0)]),
            ..EvalConfig::default()
        };
        assert!(evaluate(&p, &wins, &stats, &cfg).is_err());
    }

    #[test]
    fn report_files() {
        let wins = windows_from(sine, 3, 3, 2, 8);
        let report = evaluate(
            &Persistence { t_out: 2 },
            &wins,
            &ChannelStats {
                mean: 0.0,
                std: 1.0,
                constant: false,
            },
            &EvalConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "horizon,rmse,mae,r2,ssim,corr");
        assert!(lines[1].starts_with("t+1,"));
        assert_eq!(lines.len(), 3);
        let back: ForecastReport = io::read_json(dir.path().join("report.json")).unwrap();
        assert_eq!(back, report);
        assert!(std::fs::read_to_string(dir.path().join("nodes.csv"))
            .unwrap()
            .starts_with("node_id,step,y_true,y_pred\n"));
        assert!(dir.path().join("bins.csv").exists());
    }
}
