use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Check at most this many entries (random subsample); `None` checks all.
    pub max_entries: Option<usize>,
    /// Magnitude below which errors are measured absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            max_entries: None,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (parameter index, flat entry) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares tape gradients of a scalar function against central finite
/// differences, in `f64`.
///
/// `f` must build the loss from the parameter handles it is given and is
/// re-run on fresh tapes for every perturbation.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic = vars
        .iter()
        .map(|&v| grads.wrt(v).cloned())
        .collect::<Result<Vec<_>>>()?;

    let value = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    check_gradients(value, &analytic, params, opts)
}

/// Finite-difference check of externally supplied gradients.
pub fn check_gradients<F>(
    value: F,
    analytic: &[Tensor<f64>],
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64> + Sync,
{
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    for (i, (a, p)) in analytic.iter().zip(params).enumerate() {
        if a.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                a.shape(),
                p.shape()
            )));
        }
    }
    let base = value(params)?;
    if !base.is_finite() {
        return Err(Error::Numerical(format!("loss is not finite ({base})")));
    }

    let entries = select_entries(params, opts);
    let results: Vec<(usize, usize, f64, f64)> = entries
        .par_iter()
        .map_init(
            || params.to_vec(),
            |work, &(pi, ei)| -> Result<(usize, usize, f64, f64)> {
                let original = work[pi].data()[ei];
                work[pi].data_mut()[ei] = original + opts.eps;
                let plus = value(work);
                work[pi].data_mut()[ei] = original - opts.eps;
                let minus = value(work);
                work[pi].data_mut()[ei] = original;
                let (plus, minus) = (plus?, minus?);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::Numerical(format!(
                        "loss not finite when perturbing parameter {pi} entry {ei}"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * opts.eps);
                Ok((pi, ei, analytic[pi].data()[ei], numeric))
            },
        )
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: results.len(),
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tol: opts.tol,
        passed: true,
    };
    for (pi, ei, a, n) in results {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.abs_floor);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst = (pi, ei);
            report.analytic_at_worst = a;
            report.numeric_at_worst = n;
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    Ok(report)
}

fn select_entries(params: &[Tensor<f64>], opts: &GradCheckOptions) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ei| (pi, ei)))
        .collect();
    let Some(limit) = opts.max_entries else {
        return all;
    };
    if all.len() <= limit {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // one entry from every tensor first, then fill up at random
    let mut chosen: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .map(|(pi, p)| (pi, rand::Rng::random_range(&mut rng, 0..p.numel())))
        .collect();
    let mut rest: Vec<(usize, usize)> = all.into_iter().filter(|e| !chosen.contains(e)).collect();
    rest.shuffle(&mut rng);
    let room = limit.saturating_sub(chosen.len());
    chosen.extend(rest.into_iter().take(room));
    chosen.sort_unstable();
    chosen
}
