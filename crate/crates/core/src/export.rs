//! Derived data for plotting, computed from a finished run directory.
//!
//! * `marginals`: JSON array of per-dimension histogram and KDE of the final
//!   in-region particles.
//! * `density-grid`: CSV `x{i},x{j},log_density,density` over a 2D slice of
//!   the mesh box; other coordinates are held at `fixed` (default: box centre).
//! * `lv-predictive`: CSV `particle_id,t,hare,lynx` with the trajectory of every
//!   final in-region particle, plus `particle_id = observed` rows for the data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, POSITIONS, RESOLVED_CONFIG};
use crate::io;
use crate::mesh::build_grid;
use crate::points::Points;
use crate::summaries::{marginal_summaries, DEFAULT_BINS};
use crate::targets::{lv_simulate, LvModel, TargetSpec, LYNX_HARE_CSV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportKind {
    Marginals,
    DensityGrid,
    LvPredictive,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginals" => Ok(ExportKind::Marginals),
            "density-grid" => Ok(ExportKind::DensityGrid),
            "lv-predictive" => Ok(ExportKind::LvPredictive),
            other => Err(Error::Config(format!(
                "unknown export kind `{other}` (expected marginals, density-grid or lv-predictive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRequest {
    pub kind: ExportKind,
    /// Points per axis for `density-grid`.
    pub resolution: usize,
    /// The two dimensions spanned by `density-grid`.
    pub axes: (usize, usize),
    /// Values of the remaining coordinates for `density-grid`.
    pub fixed: Option<Vec<f64>>,
    pub bins: usize,
}

impl ExportRequest {
    pub fn new(kind: ExportKind) -> Self {
        ExportRequest {
            kind,
            resolution: 100,
            axes: (0, 1),
            fixed: None,
            bins: DEFAULT_BINS,
        }
    }
}

fn final_in_region(run_dir: &Path, cfg: &ExperimentConfig) -> Result<(Vec<usize>, Points)> {
    let snaps = io::read_positions_file(&run_dir.join(POSITIONS))?;
    let last = snaps
        .into_iter()
        .last()
        .ok_or_else(|| Error::Data("positions.csv has no snapshots".into()))?;
    let grid = build_grid(&cfg.mesh.bounds, &cfg.mesh.counts)?;
    let keep: Vec<bool> = last.positions.rows().map(|r| grid.contains(r)).collect();
    let ids = last.ids.iter().zip(&keep).filter(|(_, k)| **k).map(|(i, _)| *i).collect();
    Ok((ids, last.positions.select(|i, _| keep[i])))
}

/// Writes the requested export for `run_dir` to `out`.
pub fn export<W: Write>(run_dir: &Path, req: &ExportRequest, mut out: W) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&run_dir.join(RESOLVED_CONFIG))?;
    match req.kind {
        ExportKind::Marginals => {
            let (_, pts) = final_in_region(run_dir, &cfg)?;
            let m = marginal_summaries(&pts, &cfg.mesh.bounds, req.bins)?;
            serde_json::to_writer_pretty(&mut out, &m)?;
            out.write_all(b"\n").map_err(|e| Error::io("<export>", e))
        }
        ExportKind::DensityGrid => density_grid(&cfg, req, out),
        ExportKind::LvPredictive => lv_predictive(run_dir, &cfg, out),
    }
}

fn density_grid<W: Write>(cfg: &ExperimentConfig, req: &ExportRequest, out: W) -> Result<()> {
    let target = cfg.target.build(None)?;
    let bounds = &cfg.mesh.bounds;
    let dim = bounds.len();
    let (a, b) = req.axes;
    if a >= dim || b >= dim || a == b {
        return Err(Error::Config(format!("invalid slice axes ({a}, {b}) for dimension {dim}")));
    }
    if req.resolution < 2 {
        return Err(Error::Config("density-grid resolution must be >= 2".into()));
    }
    let mut point = match &req.fixed {
        Some(f) if f.len() == dim => f.clone(),
        Some(f) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: f.len(),
            })
        }
        None => bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record([format!("x{a}"), format!("x{b}"), "log_density".into(), "density".into()])?;
    let n = req.resolution;
    let at = |k: usize, i: usize| bounds[k].0 + (bounds[k].1 - bounds[k].0) * i as f64 / (n - 1) as f64;
    for i in 0..n {
        for j in 0..n {
            point[a] = at(a, i);
            point[b] = at(b, j);
            let lp = target.log_density(&point);
            w.write_record([
                point[a].to_string(),
                point[b].to_string(),
                lp.to_string(),
                target.density(&point).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<export>", e))
}

fn lv_predictive<W: Write>(run_dir: &Path, cfg: &ExperimentConfig, out: W) -> Result<()> {
    let TargetSpec::LotkaVolterra { data } = &cfg.target else {
        return Err(Error::Config(format!(
            "lv-predictive needs the lotka-volterra target, run used `{}`",
            cfg.target.id()
        )));
    };
    let text = match data {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => LYNX_HARE_CSV.to_string(),
    };
    let model = LvModel::from_csv(&text)?;
    let (ids, pts) = final_in_region(run_dir, cfg)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["particle_id", "t", "hare", "lynx"])?;
    for i in 0..model.len() {
        w.write_record([
            "observed".to_string(),
            model.times[i].to_string(),
            model.hare[i].to_string(),
            model.lynx[i].to_string(),
        ])?;
    }
    for (id, theta) in ids.iter().zip(pts.rows()) {
        let traj = lv_simulate(theta, &model, &model.times)?;
        for k in 0..traj.times.len() {
            w.write_record([
                id.to_string(),
                traj.times[k].to_string(),
                traj.x[k].to_string(),
                traj.y[k].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<export>", e))
}

pub fn export_to_file(run_dir: &Path, req: &ExportRequest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    export(run_dir, req, std::io::BufWriter::new(file))
}
