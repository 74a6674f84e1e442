use rand::seq::SliceRandom;

use super::{Scale, Target};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng;

/// Fisher's Iris measurements; label 1 marks Iris setosa, 0 the other two species.
pub const IRIS_CSV: &str = include_str!("../../data/iris.csv");

/// Feature matrix and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrDataset {
    pub features: Points,
    pub labels: Vec<f64>,
}

impl BlrDataset {
    /// Parses a CSV whose last column is a 0/1 label and whose other columns
    /// are numeric features. Features are z-scored over all rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let ncols = reader.headers()?.len();
        if ncols < 2 {
            return Err(Error::Data("need at least one feature and a label column".into()));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values: Vec<f64> = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
            let label = values[ncols - 1];
            if label != 0.0 && label != 1.0 {
                return Err(Error::Data(format!("row {}: label {label} is not 0 or 1", line + 1)));
            }
            labels.push(label);
            rows.push(values[..ncols - 1].to_vec());
        }
        if rows.is_empty() {
            return Err(Error::Data("dataset has no rows".into()));
        }
        let mut features = Points::from_rows(&rows)?;
        standardize(&mut features);
        Ok(BlrDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Shuffles rows with a seeded stream and splits off the first
    /// `round(train_fraction * n)` as the training set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (BlrDataset, BlrDataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[rng::TAG_SPLIT]));
        let n_train = (train_fraction * self.len() as f64).round() as usize;
        let take = |idx: &[usize]| BlrDataset {
            features: Points::from_rows(
                &idx.iter().map(|&i| self.features.row(i)).collect::<Vec<_>>(),
            )
            .unwrap_or_else(|_| Points::zeros(0, self.dim())),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        };
        (take(&order[..n_train]), take(&order[n_train..]))
    }
}

fn standardize(x: &mut Points) {
    let mean = x.mean();
    let n = x.len() as f64;
    let mut sd = vec![0.0; x.dim()];
    for row in x.rows() {
        for k in 0..row.len() {
            sd[k] += (row[k] - mean[k]).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    for row in x.rows_mut() {
        for k in 0..row.len() {
            row[k] = if sd[k] > 0.0 { (row[k] - mean[k]) / sd[k] } else { 0.0 };
        }
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Posterior over logistic-regression coefficients with a `N(0, α I)` prior.
#[derive(Debug, Clone)]
pub struct BlrPosterior {
    data: BlrDataset,
    alpha: f64,
}

impl BlrPosterior {
    pub fn new(data: BlrDataset, alpha: f64) -> Self {
        BlrPosterior { data, alpha }
    }

    pub fn data(&self) -> &BlrDataset {
        &self.data
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of rows where `σ(wᵀx) > 1/2` agrees with the label.
pub fn accuracy(w: &[f64], data: &BlrDataset) -> f64 {
    let correct = data
        .features
        .rows()
        .zip(&data.labels)
        .filter(|(x, &y)| (dot(w, x) > 0.0) == (y == 1.0))
        .count();
    correct as f64 / data.len() as f64
}

impl Target for BlrPosterior {
    fn id(&self) -> &str {
        "blr"
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn scale(&self) -> Scale {
        Scale::LogDensity
    }

    /// `Σ [y log σ(z) + (1-y) log(1-σ(z))] - wᵀw / (2α)` with `z = wᵀx`,
    /// using `log σ(z) = -softplus(-z)` and `log(1-σ(z)) = -softplus(z)`.
    fn log_density(&self, w: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (x, &y) in self.data.features.rows().zip(&self.data.labels) {
            let z = dot(w, x);
            ll -= y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        ll - dot(w, w) / (2.0 * self.alpha)
    }

    /// `Xᵀ(y - σ(Xw)) - w / α`
    fn gradient(&self, w: &[f64]) -> Option<Vec<f64>> {
        let mut g: Vec<f64> = w.iter().map(|v| -v / self.alpha).collect();
        for (x, &y) in self.data.features.rows().zip(&self.data.labels) {
            let r = y - sigmoid(dot(w, x));
            for k in 0..g.len() {
                g[k] += r * x[k];
            }
        }
        Some(g)
    }
}
