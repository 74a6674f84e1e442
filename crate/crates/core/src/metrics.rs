//! Sample-quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::targets::Target;

/// `k(x, y) = (xᵀy / 3 + 1)³`
#[inline]
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / 3.0 + 1.0).powi(3)
}

fn kernel_mean(x: &Points, y: &Points) -> f64 {
    let total: f64 = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            y.rows().map(|yj| polynomial_kernel(xi, yj)).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / (x.len() as f64 * y.len() as f64)
}

/// Biased (V-statistic) squared MMD with the cubic polynomial kernel. All
/// `i, j` pairs are included, diagonal terms too.
pub fn mmd_squared(x: &Points, y: &Points) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Metric("mmd needs non-empty sample sets".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::Metric(format!(
            "sample dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(kernel_mean(x, x) + kernel_mean(y, y) - 2.0 * kernel_mean(x, y))
}

/// Average negative log density plus the number of skipped invalid samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    pub avg_nll: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
}

/// `-(1/n) Σ log p(x_i)` over the samples where the target is valid. For
/// unnormalised targets the value is defined up to an additive constant.
pub fn avg_nll(samples: &Points, target: &dyn Target) -> Result<NllSummary> {
    if samples.dim() != target.dim() {
        return Err(Error::Metric(format!(
            "samples are {}-dimensional, target `{}` is {}-dimensional",
            samples.dim(),
            target.id(),
            target.dim()
        )));
    }
    let logs: Vec<f64> = samples.rows().map(|x| target.log_density(x)).collect();
    let valid: Vec<f64> = logs.into_iter().filter(|v| v.is_finite()).collect();
    let n_invalid = samples.len() - valid.len();
    if valid.is_empty() {
        return Err(Error::Metric("no valid samples for avg NLL".into()));
    }
    Ok(NllSummary {
        avg_nll: -valid.iter().sum::<f64>() / valid.len() as f64,
        n_valid: valid.len(),
        n_invalid,
    })
}

/// One metric evaluation, as appended to `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Which sampler produced the samples (e.g. `eparvi`, `mh`, `lmc`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Iteration the samples came from, when the report belongs to a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_nll: Option<f64>,
    pub n_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_y: Option<usize>,
    #[serde(default)]
    pub n_invalid: usize,
    pub runtime_s: f64,
}

/// Computes whichever metrics have inputs: MMD² against `reference`, avg NLL
/// against `target`.
pub fn report(
    samples: &Points,
    reference: Option<&Points>,
    target: Option<&dyn Target>,
) -> Result<MetricReport> {
    let start = std::time::Instant::now();
    let mmd2 = reference.map(|r| mmd_squared(samples, r)).transpose()?;
    let nll = target.map(|t| avg_nll(samples, t)).transpose()?;
    Ok(MetricReport {
        method: None,
        iteration: None,
        mmd2,
        avg_nll: nll.map(|n| n.avg_nll),
        n_x: samples.len(),
        n_y: reference.map(|r| r.len()),
        n_invalid: nll.map_or(0, |n| n.n_invalid),
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
