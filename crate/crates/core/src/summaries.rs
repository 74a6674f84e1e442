//! Per-dimension marginal summaries of a particle set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

pub const DEFAULT_BINS: usize = 30;
pub const KDE_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning the data range.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub dim: usize,
    pub histogram: Histogram,
    pub kde: Kde,
}

/// Histogram with `bins` equal-width bins over `[min, max]` of the data.
/// The last bin is closed on the right. Constant data fall into one bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Summary("histogram needs at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Summary("histogram needs finite values".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Gaussian KDE on `KDE_POINTS` equally spaced points over `range`, with
/// Silverman's rule-of-thumb bandwidth.
pub fn kde(values: &[f64], range: (f64, f64)) -> Result<Kde> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Summary("KDE needs at least two values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut bandwidth = 0.9 * spread * (n as f64).powf(-0.2);
    if !(bandwidth > 0.0) {
        bandwidth = ((range.1 - range.0).abs() / KDE_POINTS as f64).max(1e-12);
    }
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let step = (range.1 - range.0) / (KDE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_POINTS).map(|i| range.0 + i as f64 * step).collect();
    let density = grid
        .iter()
        .map(|g| {
            norm * values
                .iter()
                .map(|v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(Kde {
        grid,
        density,
        bandwidth,
    })
}

/// Histogram and KDE for every dimension; the KDE grid spans `bounds`.
pub fn marginal_summaries(points: &Points, bounds: &[(f64, f64)], bins: usize) -> Result<Vec<Marginal>> {
    if points.len() < 2 {
        return Err(Error::Summary(format!(
            "need at least 2 particles, got {}",
            points.len()
        )));
    }
    if bounds.len() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            actual: bounds.len(),
        });
    }
    (0..points.dim())
        .map(|k| {
            let column: Vec<f64> = points.rows().map(|r| r[k]).collect();
            Ok(Marginal {
                dim: k,
                histogram: histogram(&column, bins)?,
                kde: kde(&column, bounds[k])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_particles_fill_one_bin() {
        let p = Points::from_rows(&[[0.3, 1.0], [0.3, 1.0], [0.3, 1.0]]).unwrap();
        let m = marginal_summaries(&p, &[(0.0, 1.0), (0.0, 2.0)], DEFAULT_BINS).unwrap();
        for marg in &m {
            assert_eq!(marg.histogram.counts.iter().filter(|c| **c > 0).count(), 1);
            assert_eq!(marg.histogram.counts.iter().sum::<usize>(), 3);
            assert_eq!(marg.kde.grid.len(), KDE_POINTS);
        }
    }

    #[test]
    fn counts_are_conserved() {
        let values: Vec<f64> = (0..997).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = histogram(&values, 17).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 997);
        assert_eq!(h.edges.len(), 18);
    }

    #[test]
    fn kde_peak_of_standard_normal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let values: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = kde(&values, (-4.0, 4.0)).unwrap();
        let (i, _) = k
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        // The KDE mode of 10^4 draws has a standard deviation of about 0.1,
        // so the location is checked at three standard deviations and the
        // peak height against the exact density.
        assert!(k.grid[i].abs() < 0.3, "peak at {}", k.grid[i]);
        let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((k.density[i] / exact - 1.0).abs() < 0.05, "peak height {}", k.density[i]);
        // Mass over [-4, 4] is close to one.
        let step = k.grid[1] - k.grid[0];
        let mass: f64 = k.density.iter().sum::<f64>() * step;
        assert!((mass - 1.0).abs() < 0.01);
    }

    #[test]
    fn too_few_particles() {
        let p = Points::from_rows(&[[0.0]]).unwrap();
        assert!(marginal_summaries(&p, &[(0.0, 1.0)], 30).is_err());
    }
}
