//! On-disk record formats.
//!
//! `positions.csv` has the frozen header `iteration,particle_id,x0,...,x{d-1}`
//! with one row per particle per snapshot. Floats are written in the shortest
//! form that parses back to the same bits. Scalar diagnostics and metric
//! reports are JSON lines, one object per line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

/// Particle positions at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    /// Stable particle ids, parallel to the rows of `positions`.
    pub ids: Vec<usize>,
    pub positions: Points,
}

pub fn positions_header(dim: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "particle_id".to_string()];
    h.extend((0..dim).map(|k| format!("x{k}")));
    h
}

/// Writes snapshots in `positions.csv` format. All snapshots must share a dimension.
pub fn write_positions<W: Write>(out: W, snapshots: &[Snapshot]) -> Result<()> {
    let dim = snapshots.first().map_or(0, |s| s.positions.dim());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(positions_header(dim))?;
    for snap in snapshots {
        if snap.positions.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: snap.positions.dim(),
            });
        }
        for (id, row) in snap.ids.iter().zip(snap.positions.rows()) {
            let mut rec = Vec::with_capacity(dim + 2);
            rec.push(snap.iteration.to_string());
            rec.push(id.to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<positions>", e))?;
    Ok(())
}

pub fn write_positions_file(path: &Path, snapshots: &[Snapshot]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_positions(std::io::BufWriter::new(file), snapshots)
}

/// Parses `positions.csv` content, grouping consecutive rows by iteration.
pub fn read_positions<R: std::io::Read>(input: R) -> Result<Vec<Snapshot>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 {
        return Err(Error::Data("positions file needs at least one coordinate column".into()));
    }
    let dim = header.len() - 2;
    if header != positions_header(dim) {
        return Err(Error::Data(format!(
            "unexpected positions header `{}`",
            header.join(",")
        )));
    }
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    let mut current: Option<usize> = None;
    let flush = |it: usize, ids: &mut Vec<usize>, rows: &mut Vec<f64>, out: &mut Vec<Snapshot>| -> Result<()> {
        out.push(Snapshot {
            iteration: it,
            ids: std::mem::take(ids),
            positions: Points::new(dim, std::mem::take(rows))?,
        });
        Ok(())
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("positions row {}: bad {what}", line + 1));
        let it: usize = rec[0].parse().map_err(|_| bad("iteration"))?;
        let id: usize = rec[1].parse().map_err(|_| bad("particle_id"))?;
        if let Some(prev) = current {
            if it != prev {
                flush(prev, &mut ids, &mut rows, &mut snapshots)?;
            }
        }
        current = Some(it);
        ids.push(id);
        for k in 0..dim {
            rows.push(rec[k + 2].parse().map_err(|_| bad("coordinate"))?);
        }
    }
    if let Some(it) = current {
        flush(it, &mut ids, &mut rows, &mut snapshots)?;
    }
    Ok(snapshots)
}

pub fn read_positions_file(path: &Path) -> Result<Vec<Snapshot>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_positions(std::io::BufReader::new(file))
}

/// Serializes each item as one JSON line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    out.flush().map_err(|e| Error::io("<jsonl>", e))
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(std::io::BufWriter::new(file), items)
}

/// Parses one JSON value per non-empty line.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(std::io::BufReader::new(file))
}
