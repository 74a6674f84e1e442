//! The equidistant grid of fixed positive charges.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::targets::Target;

/// Cartesian product of per-dimension linear spacings, both endpoints
/// included, flattened in row-major order (last dimension fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    bounds: Vec<(f64, f64)>,
    counts: Vec<usize>,
    points: Points,
}

pub fn build_grid(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Grid> {
    if bounds.is_empty() {
        return Err(Error::Mesh("no dimensions given".into()));
    }
    if bounds.len() != counts.len() {
        return Err(Error::Mesh(format!(
            "{} bounds but {} counts",
            bounds.len(),
            counts.len()
        )));
    }
    for (k, (&(lo, hi), &m)) in bounds.iter().zip(counts).enumerate() {
        if m < 2 {
            return Err(Error::Mesh(format!("dimension {k}: count {m} < 2")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Mesh(format!("dimension {k}: degenerate bounds [{lo}, {hi}]")));
        }
    }
    let dim = bounds.len();
    let total: usize = counts.iter().product();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), &m)| axis(lo, hi, m))
        .collect();
    let mut data = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        for k in 0..dim {
            data.push(axes[k][idx[k]]);
        }
        for k in (0..dim).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(Grid {
        bounds: bounds.to_vec(),
        counts: counts.to_vec(),
        points: Points::new(dim, data)?,
    })
}

fn axis(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let step = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|i| if i == m - 1 { hi } else { lo + i as f64 * step })
        .collect()
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.counts)
            .map(|(&(lo, hi), &m)| (hi - lo) / (m - 1) as f64)
            .collect()
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn flat_index(&self, indices: &[usize]) -> usize {
        indices
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &m)| acc * m + i)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.counts[k];
            flat /= self.counts[k];
        }
        out
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }
}

/// How target values at grid points become charge magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MagnitudeMode {
    /// `q · p(x)`
    Density,
    /// `q · p(x) / max_grid p`
    NormalizedDensity,
    /// `q · (log p(x) - min_grid log p)`
    LogDensityOffset,
    /// `q` at every valid point, ignoring the target value.
    Constant,
}

impl MagnitudeMode {
    fn code(self) -> u8 {
        match self {
            MagnitudeMode::Density => 0,
            MagnitudeMode::NormalizedDensity => 1,
            MagnitudeMode::LogDensityOffset => 2,
            MagnitudeMode::Constant => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MagnitudeMode::Density),
            1 => Ok(MagnitudeMode::NormalizedDensity),
            2 => Ok(MagnitudeMode::LogDensityOffset),
            3 => Ok(MagnitudeMode::Constant),
            other => Err(Error::Mesh(format!("unknown magnitude mode code {other}"))),
        }
    }
}

/// A grid with cached, non-negative positive-charge magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeMesh {
    grid: Grid,
    magnitudes: Vec<f64>,
    q_max: f64,
    mode: MagnitudeMode,
    invalid_points: usize,
}

impl ChargeMesh {
    pub fn from_parts(grid: Grid, magnitudes: Vec<f64>, q_max: f64, mode: MagnitudeMode) -> Result<Self> {
        if magnitudes.len() != grid.len() {
            return Err(Error::Mesh(format!(
                "{} magnitudes for {} grid points",
                magnitudes.len(),
                grid.len()
            )));
        }
        if !(q_max > 0.0 && q_max.is_finite()) {
            return Err(Error::Mesh(format!("q_max must be positive, got {q_max}")));
        }
        check_positivity(&magnitudes)?;
        Ok(ChargeMesh {
            grid,
            magnitudes,
            q_max,
            mode,
            invalid_points: 0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn mode(&self) -> MagnitudeMode {
        self.mode
    }

    /// Grid points where the target was undefined (magnitude forced to 0).
    pub fn invalid_points(&self) -> usize {
        self.invalid_points
    }

    /// Index of the largest magnitude (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.magnitudes.iter().enumerate() {
            if m > self.magnitudes[best] {
                best = i;
            }
        }
        best
    }

    pub fn view(&self) -> MeshView<'_> {
        MeshView {
            mesh: self,
            multiplier: 1.0,
        }
    }

    /// Effective magnitudes at iteration `t` under `schedule`. The cached
    /// base magnitudes are never modified.
    pub fn anneal_q(&self, schedule: &AnnealSchedule, t: usize) -> MeshView<'_> {
        MeshView {
            mesh: self,
            multiplier: schedule.multiplier(t),
        }
    }
}

fn check_positivity(magnitudes: &[f64]) -> Result<()> {
    match magnitudes
        .iter()
        .enumerate()
        .find(|(_, m)| !(**m >= 0.0 && m.is_finite()))
    {
        Some((index, &value)) => Err(Error::Positivity { index, value }),
        None => Ok(()),
    }
}

/// Read-only mesh with a magnitude multiplier applied on the fly.
#[derive(Debug, Clone, Copy)]
pub struct MeshView<'a> {
    mesh: &'a ChargeMesh,
    multiplier: f64,
}

impl<'a> MeshView<'a> {
    pub fn grid(&self) -> &'a Grid {
        &self.mesh.grid
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    #[inline]
    pub fn magnitude(&self, i: usize) -> f64 {
        self.mesh.magnitudes[i] * self.multiplier
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.mesh.magnitudes.len()).map(|i| self.magnitude(i)).collect()
    }
}

/// Evaluates the target at every grid point and converts the values to
/// charge magnitudes. Points where the target is invalid get magnitude 0.
pub fn assign_magnitudes(
    grid: Grid,
    target: &dyn Target,
    mode: MagnitudeMode,
    q_max: f64,
) -> Result<ChargeMesh> {
    if target.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            actual: target.dim(),
        });
    }
    if !(q_max > 0.0 && q_max.is_finite()) {
        return Err(Error::Mesh(format!("q_max must be positive, got {q_max}")));
    }
    let values: Vec<Option<f64>> = grid
        .points()
        .as_slice()
        .par_chunks_exact(grid.dim())
        .map(|x| {
            if !target.is_valid(x) {
                return None;
            }
            let v = match mode {
                MagnitudeMode::LogDensityOffset => target.log_density(x),
                _ => target.density(x),
            };
            // -inf log density behaves like an invalid point.
            (!v.is_nan() && v != f64::NEG_INFINITY).then_some(v)
        })
        .collect();
    let invalid_points = values.iter().filter(|v| v.is_none()).count();
    if invalid_points == values.len() {
        return Err(Error::Mesh(format!(
            "target `{}` is invalid at every grid point",
            target.id()
        )));
    }
    let valid = values.iter().flatten().copied();
    let magnitudes: Vec<f64> = match mode {
        MagnitudeMode::Density => values.iter().map(|v| v.map_or(0.0, |p| q_max * p)).collect(),
        MagnitudeMode::NormalizedDensity => {
            let max = valid.fold(f64::NEG_INFINITY, f64::max);
            if !(max > 0.0) {
                return Err(Error::Mesh("density is zero at every grid point".into()));
            }
            values
                .iter()
                .map(|v| v.map_or(0.0, |p| q_max * (p / max)))
                .collect()
        }
        MagnitudeMode::LogDensityOffset => {
            let min = valid.fold(f64::INFINITY, f64::min);
            values
                .iter()
                .map(|v| v.map_or(0.0, |l| q_max * (l - min)))
                .collect()
        }
        MagnitudeMode::Constant => values.iter().map(|v| v.map_or(0.0, |_| q_max)).collect(),
    };
    check_positivity(&magnitudes)?;
    Ok(ChargeMesh {
        grid,
        magnitudes,
        q_max,
        mode,
        invalid_points,
    })
}

/// Per-iteration multiplier on the mesh magnitudes, in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnnealSchedule {
    #[default]
    None,
    /// `max(gamma^t, floor)`
    Geometric {
        gamma: f64,
        #[serde(default = "default_anneal_floor")]
        floor: f64,
    },
    /// Explicit multipliers; the last entry is held once the list runs out.
    Explicit { multipliers: Vec<f64> },
}

fn default_anneal_floor() -> f64 {
    0.1
}

impl AnnealSchedule {
    pub fn geometric(gamma: f64) -> Result<Self> {
        let s = AnnealSchedule::Geometric {
            gamma,
            floor: default_anneal_floor(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn explicit(multipliers: Vec<f64>) -> Result<Self> {
        let s = AnnealSchedule::Explicit { multipliers };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| v > 0.0 && v <= 1.0;
        match self {
            AnnealSchedule::None => Ok(()),
            AnnealSchedule::Geometric { gamma, floor } => {
                if in_range(*gamma) && in_range(*floor) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "geometric annealing needs gamma and floor in (0, 1], got {gamma} and {floor}"
                    )))
                }
            }
            AnnealSchedule::Explicit { multipliers } => {
                if multipliers.is_empty() {
                    return Err(Error::Config("empty annealing schedule".into()));
                }
                match multipliers.iter().find(|m| !in_range(**m)) {
                    Some(m) => Err(Error::Config(format!("annealing multiplier {m} outside (0, 1]"))),
                    None => Ok(()),
                }
            }
        }
    }

    pub fn multiplier(&self, t: usize) -> f64 {
        match self {
            AnnealSchedule::None => 1.0,
            AnnealSchedule::Geometric { gamma, floor } => gamma.powi(t as i32).max(*floor),
            AnnealSchedule::Explicit { multipliers } => {
                multipliers[t.min(multipliers.len() - 1)]
            }
        }
    }
}

/// Identifies a cached mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCacheKey {
    pub target_id: String,
    pub bounds: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    pub mode: MagnitudeMode,
    pub q_max: f64,
}

impl MeshCacheKey {
    /// A file-name-safe digest of the key.
    pub fn file_stem(&self) -> String {
        let text = serde_json::to_string(self).expect("key serialises");
        // FNV-1a; collisions are caught by the key check on load.
        let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        format!("{}-{hash:016x}", self.target_id)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"EPVMESH1";

/// Writes the magnitudes as raw little-endian `f64`s behind a JSON key.
pub fn save_mesh(path: &Path, key: &MeshCacheKey, mesh: &ChargeMesh) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let key_json = serde_json::to_vec(key)?;
    let mut buf = Vec::with_capacity(32 + key_json.len() + 8 * mesh.magnitudes.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(key_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&key_json);
    buf.push(mesh.mode.code());
    buf.extend_from_slice(&(mesh.invalid_points as u64).to_le_bytes());
    buf.extend_from_slice(&(mesh.magnitudes.len() as u64).to_le_bytes());
    for m in &mesh.magnitudes {
        buf.extend_from_slice(&m.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a cached mesh, rebuilding the grid from the key. Fails if the
/// stored key differs from `key`.
pub fn load_mesh(path: &Path, key: &MeshCacheKey) -> Result<ChargeMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CACHE_MAGIC {
        return Err(Error::Mesh(format!("{}: not a mesh cache file", path.display())));
    }
    let key_len = cur.u64()? as usize;
    let stored: MeshCacheKey = serde_json::from_slice(cur.take(key_len)?)?;
    if &stored != key {
        return Err(Error::Mesh(format!("{}: cache key mismatch", path.display())));
    }
    let mode = MagnitudeMode::from_code(cur.take(1)?[0])?;
    let invalid_points = cur.u64()? as usize;
    let n = cur.u64()? as usize;
    let mut magnitudes = Vec::with_capacity(n);
    for _ in 0..n {
        magnitudes.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    let grid = build_grid(&key.bounds, &key.counts)?;
    let mut mesh = ChargeMesh::from_parts(grid, magnitudes, key.q_max, mode)?;
    mesh.invalid_points = invalid_points;
    Ok(mesh)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Mesh("truncated mesh cache".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
