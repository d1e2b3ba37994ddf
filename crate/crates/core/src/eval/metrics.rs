use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 8;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "metric inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("metric over zero elements".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Coefficient of determination against the mean of `truth`; `None` when
/// `truth` is constant or has fewer than two elements.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return Ok(None);
    }
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

/// `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_pair(a, b)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(values: impl Iterator<Item = f64>, h: usize, w: usize) -> Self {
        let mut s = vec![0.0; (h + 1) * (w + 1)];
        let vals: Vec<f64> = values.collect();
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += vals[i * w + j];
                s[(i + 1) * (w + 1) + j + 1] = s[i * (w + 1) + j + 1] + row;
            }
        }
        Self { w: w + 1, s }
    }

    fn window(&self, i: usize, j: usize, k: usize) -> f64 {
        let at = |r: usize, c: usize| self.s[r * self.w + c];
        at(i + k, j + k) - at(i, j + k) - at(i + k, j) + at(i, j)
    }
}

/// Mean SSIM over all 8×8 windows (stride 1) with uniform weights and
/// population moments. `C1 = (0.01 R)²`, `C2 = (0.03 R)²`, `R` the value
/// range of `truth`. When `truth` is flat the result is 1 for identical
/// maps and `None` otherwise.
pub fn ssim(pred: &[f64], truth: &[f64], height: usize, width: usize) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    if pred.len() != height * width {
        return Err(Error::shape(format!(
            "ssim over {} values for a {height}x{width} map",
            pred.len()
        )));
    }
    let k = SSIM_WINDOW;
    if height < k || width < k {
        return Err(Error::shape(format!(
            "ssim needs maps of at least {k}x{k}, got {height}x{width}"
        )));
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let range = hi - lo;
    if range == 0.0 {
        return Ok(if pred == truth { Some(1.0) } else { None });
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let sa = Integral::new(pred.iter().copied(), height, width);
    let sb = Integral::new(truth.iter().copied(), height, width);
    let saa = Integral::new(pred.iter().map(|v| v * v), height, width);
    let sbb = Integral::new(truth.iter().map(|v| v * v), height, width);
    let sab = Integral::new(pred.iter().zip(truth).map(|(a, b)| a * b), height, width);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=height - k {
        for j in 0..=width - k {
            let ma = sa.window(i, j, k) / n;
            let mb = sb.window(i, j, k) / n;
            let va = (saa.window(i, j, k) / n - ma * ma).max(0.0);
            let vb = (sbb.window(i, j, k) / n - mb * mb).max(0.0);
            let cov = sab.window(i, j, k) / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(Some(total / count as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mae: Option<f64>,
    pub residual_median: Option<f64>,
    pub residual_q1: Option<f64>,
    pub residual_q3: Option<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Errors grouped into `n_bins` equal-width bins over the range of `truth`.
/// Residuals are `pred - truth`.
pub fn binned_errors(pred: &[f64], truth: &[f64], n_bins: usize) -> Result<Vec<BinStats>> {
    check_pair(pred, truth)?;
    if n_bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {n_bins}")));
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let width = (hi - lo) / n_bins as f64;
    let mut residuals = vec![Vec::new(); n_bins];
    for (p, t) in pred.iter().zip(truth) {
        let idx = if width > 0.0 {
            (((t - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        residuals[idx].push(p - t);
    }
    Ok(residuals
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            let (lower, upper) = (
                lo + width * i as f64,
                if i + 1 == n_bins {
                    hi
                } else {
                    lo + width * (i + 1) as f64
                },
            );
            if r.is_empty() {
                return BinStats {
                    lower,
                    upper,
                    count: 0,
                    mae: None,
                    residual_median: None,
                    residual_q1: None,
                    residual_q3: None,
                };
            }
            r.sort_by(f64::total_cmp);
            BinStats {
                lower,
                upper,
                count: r.len(),
                mae: Some(r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64),
                residual_median: Some(quantile(&r, 0.5)),
                residual_q1: Some(quantile(&r, 0.25)),
                residual_q3: Some(quantile(&r, 0.75)),
            }
        })
        .collect())
}
