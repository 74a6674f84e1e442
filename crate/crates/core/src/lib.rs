//! Electrostatics-based particle variational inference.
//!
//! Fixed positive charges sit on an equidistant mesh with magnitudes derived
//! from a queryable target density. Free unit negative charges repel each
//! other and are attracted by the mesh under a d-dimensional Coulomb law; the
//! steady-state configuration of the negative charges is the sample set.
//!
//! ```no_run
//! use eparvi::mesh::{build_grid, assign_magnitudes, MagnitudeMode};
//! use eparvi::sampler::{run, SamplerConfig, InitSpec};
//! use eparvi::targets::GaussianUnimodal;
//!
//! let target = GaussianUnimodal::default();
//! let grid = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[50, 50]).unwrap();
//! let mesh = assign_magnitudes(grid, &target, MagnitudeMode::Density, 1.0).unwrap();
//! let mut config = SamplerConfig::euler(400, 100, 0.1);
//! config.init = InitSpec::uniform(vec![0.0, 0.0], vec![0.5, 0.5]);
//! let (ensemble, record) = run(&config, &mesh, &target).unwrap();
//! println!("{} particles, {} snapshots", ensemble.len(), record.snapshots.len());
//! ```

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod export;
pub mod forces;
pub mod integrators;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod points;
pub mod rng;
pub mod sampler;
pub mod summaries;
pub mod targets;

pub use error::{Error, Result};
pub use points::Points;
