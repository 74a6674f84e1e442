//! Generalised d-dimensional Coulomb forces.
//!
//! A point charge in R^d produces a field of magnitude `C(d) q / r^(d-1)`
//! with `C(d) = Γ(d/2) / (2 π^(d/2) ε₀)`. Written with the unnormalised
//! displacement vector this is `C(d) q_s q_f (x_f - x_s) / r^d`, which is the
//! form every routine here evaluates. A positive charge product yields a
//! force pointing away from the source.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::MeshView;
use crate::points::{norm, Points};

/// Permittivity of free space used throughout.
pub const VACUUM_PERMITTIVITY: f64 = 8.854e-12;

/// `Γ(d/2)` for integer `d >= 1`, via `Γ(1) = 1`, `Γ(1/2) = √π` and
/// `Γ(x + 1) = x Γ(x)`.
fn gamma_half_integer(dim: usize) -> f64 {
    let (mut x, mut value) = if dim % 2 == 0 {
        (1.0, 1.0)
    } else {
        (0.5, PI.sqrt())
    };
    let target = dim as f64 / 2.0;
    while x < target {
        value *= x;
        x += 1.0;
    }
    value
}

/// The force constant `C(d)` for one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceConstant {
    dim: usize,
    value: f64,
}

impl ForceConstant {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let value = gamma_half_integer(dim)
            / (2.0 * PI.powf(dim as f64 / 2.0) * VACUUM_PERMITTIVITY);
        Ok(ForceConstant { dim, value })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// `Γ(d/2) / (2 π^(d/2) ε₀)`. For `d = 3` this is Coulomb's `1 / (4 π ε₀)`.
pub fn coulomb_constant(dim: usize) -> Result<f64> {
    ForceConstant::new(dim).map(|c| c.value)
}

/// Force exerted by the charge at `source` on the charge at `field`.
pub fn pairwise_force(
    source: &[f64],
    field: &[f64],
    q_source: f64,
    q_field: f64,
) -> Result<Vec<f64>> {
    if source.len() != field.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            actual: field.len(),
        });
    }
    let c = ForceConstant::new(source.len())?;
    let diff: Vec<f64> = field.iter().zip(source).map(|(f, s)| f - s).collect();
    let r = norm(&diff);
    if r == 0.0 {
        return Err(Error::Singularity);
    }
    let factor = c.value * q_source * q_field / r.powi(c.dim as i32);
    Ok(diff.into_iter().map(|v| v * factor).collect())
}

/// Per-particle forces from one assembly call.
#[derive(Debug, Clone)]
pub struct AssembledForces {
    /// Net force per particle, divided by `max_norm` when normalisation was requested.
    pub forces: Points,
    /// Largest per-particle norm before normalisation.
    pub max_norm: f64,
    /// Mean per-particle norm before normalisation.
    pub mean_norm: f64,
}

/// Evaluates repulsion and attraction for one dimension, with a distance
/// floor guarding against near-coincident charges.
#[derive(Debug, Clone, Copy)]
pub struct ForceKernel {
    constant: ForceConstant,
    min_distance: f64,
}

impl ForceKernel {
    pub fn new(dim: usize, min_distance: f64) -> Result<Self> {
        Ok(ForceKernel {
            constant: ForceConstant::new(dim)?,
            min_distance,
        })
    }

    /// Kernel whose distance floor is `1e-9` of the mesh cell diagonal.
    pub fn for_mesh(mesh: &MeshView<'_>) -> Result<Self> {
        let grid = mesh.grid();
        Self::new(grid.dim(), 1e-9 * grid.cell_diagonal())
    }

    pub fn constant(&self) -> ForceConstant {
        self.constant
    }

    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    /// `r^d` between two points, with `r` clamped to the floor. `None` when
    /// the points coincide exactly.
    #[inline]
    fn powered_distance(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        let mut r2 = 0.0;
        for k in 0..a.len() {
            let dv = a[k] - b[k];
            r2 += dv * dv;
        }
        if r2 == 0.0 {
            return None;
        }
        let r = r2.sqrt().max(self.min_distance);
        Some(r.powi(self.constant.dim as i32))
    }

    /// Net repulsion on particle `j` from every other negative charge.
    pub fn repulsive_force(&self, j: usize, positions: &Points, charges: &[f64]) -> Vec<f64> {
        self.repulsion_with(j, positions, charges, |i| {
            self.powered_distance(positions.row(j), positions.row(i))
        })
    }

    fn repulsion_with(
        &self,
        j: usize,
        positions: &Points,
        charges: &[f64],
        powered: impl Fn(usize) -> Option<f64>,
    ) -> Vec<f64> {
        let c = self.constant.value;
        let xj = positions.row(j);
        let mut out = vec![0.0; positions.dim()];
        for i in 0..positions.len() {
            if i == j {
                continue;
            }
            let Some(rd) = powered(i) else { continue };
            let factor = c * charges[i] * charges[j] / rd;
            let xi = positions.row(i);
            for k in 0..out.len() {
                out[k] += (xj[k] - xi[k]) * factor;
            }
        }
        out
    }

    /// Net attraction on particle `j` (charge `q_j`) from the mesh. Grid
    /// points with zero magnitude, or coinciding exactly with the particle,
    /// contribute nothing.
    pub fn attractive_force(&self, j: usize, positions: &Points, q_j: f64, mesh: &MeshView<'_>) -> Vec<f64> {
        let c = self.constant.value;
        let xj = positions.row(j);
        let grid = mesh.grid().points();
        let mut out = vec![0.0; positions.dim()];
        for (i, g) in grid.rows().enumerate() {
            let m = mesh.magnitude(i);
            if m == 0.0 {
                continue;
            }
            let Some(rd) = self.powered_distance(xj, g) else {
                continue;
            };
            let factor = c * m * q_j / rd;
            for k in 0..out.len() {
                out[k] -= (xj[k] - g[k]) * factor;
            }
        }
        out
    }

    /// `F_j = F_j^rep + F_j^attr` for every particle. With `normalize`, the
    /// whole array is divided by the largest per-particle norm (unless all
    /// forces vanish).
    ///
    /// The negative-negative distances are evaluated once per unordered pair
    /// and shared between both particles.
    pub fn assemble(
        &self,
        positions: &Points,
        charges: &[f64],
        mesh: &MeshView<'_>,
        normalize: bool,
    ) -> Result<AssembledForces> {
        let n = positions.len();
        let dim = positions.dim();
        if dim != self.constant.dim {
            return Err(Error::DimensionMismatch {
                expected: self.constant.dim,
                actual: dim,
            });
        }
        if charges.len() != n {
            return Err(Error::Config(format!(
                "{} negative charges for {n} particles",
                charges.len()
            )));
        }

        let tri = PairTable::build(self, positions);
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let rep = self.repulsion_with(j, positions, charges, |i| tri.get(i, j));
                let attr = self.attractive_force(j, positions, charges[j], mesh);
                rep.iter().zip(&attr).map(|(r, a)| r + a).collect()
            })
            .collect();

        let mut forces = Points::zeros(n, dim);
        let mut norms = Vec::with_capacity(n);
        for (j, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::ForceAssembly { particle: j });
            }
            forces.row_mut(j).copy_from_slice(row);
            norms.push(norm(row));
        }
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        let mean_norm = if n == 0 {
            0.0
        } else {
            norms.iter().sum::<f64>() / n as f64
        };
        if normalize && max_norm > 0.0 {
            forces.as_mut_slice().iter_mut().for_each(|v| *v /= max_norm);
        }
        Ok(AssembledForces {
            forces,
            max_norm,
            mean_norm,
        })
    }
}

/// Packed upper triangle of `r^d` for all negative-charge pairs.
struct PairTable {
    n: usize,
    values: Vec<Option<f64>>,
}

impl PairTable {
    fn build(kernel: &ForceKernel, positions: &Points) -> Self {
        let n = positions.len();
        let values = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                ((i + 1)..n).map(move |j| kernel.powered_distance(positions.row(j), positions.row(i)))
            })
            .collect();
        PairTable { n, values }
    }

    fn get(&self, a: usize, b: usize) -> Option<f64> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.values[i * self.n - i * (i + 1) / 2 + (j - i - 1)]
    }
}

/// Assembles forces with the mesh-derived distance floor.
pub fn assemble_forces(
    positions: &Points,
    charges: &[f64],
    mesh: &MeshView<'_>,
    normalize: bool,
) -> Result<AssembledForces> {
    ForceKernel::for_mesh(mesh)?.assemble(positions, charges, mesh, normalize)
}
