use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of points in R^d stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Points {
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Points { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Keeps the rows for which `keep` returns true.
    pub fn select(&self, keep: impl Fn(usize, &[f64]) -> bool) -> Points {
        let mut data = Vec::new();
        for (i, row) in self.rows().enumerate() {
            if keep(i, row) {
                data.extend_from_slice(row);
            }
        }
        Points {
            dim: self.dim,
            data,
        }
    }

    /// Appends another point set of the same dimension.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Points {
            dim: self.dim,
            data,
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-dimension sample standard deviation (denominator n - 1).
    pub fn std(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut s = vec![0.0; self.dim];
        for row in self.rows() {
            for k in 0..self.dim {
                let dv = row[k] - mean[k];
                s[k] += dv * dv;
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        s.iter().map(|v| (v / denom).sqrt()).collect()
    }

    /// Smallest Euclidean distance between two distinct rows.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                best = best.min(distance(self.row(i), self.row(j)));
            }
        }
        best
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
