//! The particle update loop: initialise negative charges, then repeatedly
//! assemble forces and move every particle.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceKernel;
use crate::integrators::{mh_filter, perturb, PerturbationPolicy, UpdateRule};
use crate::io::Snapshot;
use crate::mesh::{AnnealSchedule, ChargeMesh, Grid};
use crate::metrics::{self, MetricReport};
use crate::points::{distance, Points};
use crate::rng;
use crate::targets::Target;

/// Fraction of particles outside the mesh above which a run is flagged.
pub const OUT_OF_REGION_WARN_FRACTION: f64 = 0.25;

/// Initial particle distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// Uniform over the mesh bounds.
    #[default]
    MeshBounds,
    Uniform { low: Vec<f64>, high: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitSpec {
    pub fn uniform(low: Vec<f64>, high: Vec<f64>) -> Self {
        InitSpec::Uniform { low, high }
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Self {
        InitSpec::Gaussian { mean, std }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check_len = |name: &str, v: &[f64]| {
            if v.len() == dim {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "init {name} has {} entries for a {dim}-dimensional mesh",
                    v.len()
                )))
            }
        };
        match self {
            InitSpec::MeshBounds => Ok(()),
            InitSpec::Uniform { low, high } => {
                check_len("low", low)?;
                check_len("high", high)?;
                match low.iter().zip(high).find(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
                    Some((l, h)) => Err(Error::Config(format!("init box needs low <= high, got [{l}, {h}]"))),
                    None => Ok(()),
                }
            }
            InitSpec::Gaussian { mean, std } => {
                check_len("mean", mean)?;
                check_len("std", std)?;
                match std.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
                    Some(s) => Err(Error::Config(format!("init std must be >= 0, got {s}"))),
                    None => Ok(()),
                }
            }
        }
    }

    fn draw<R: Rng>(&self, grid: &Grid, rng: &mut R) -> Vec<f64> {
        let uniform = |lo: f64, hi: f64, rng: &mut R| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        match self {
            InitSpec::MeshBounds => grid.bounds().iter().map(|(lo, hi)| uniform(*lo, *hi, rng)).collect(),
            InitSpec::Uniform { low, high } => {
                low.iter().zip(high).map(|(lo, hi)| uniform(*lo, *hi, rng)).collect()
            }
            InitSpec::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect(),
        }
    }
}

/// When particles outside the mesh are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardPolicy {
    /// Keep every particle during the run; filter only when reporting.
    #[default]
    AtEnd,
    /// Drop particles as soon as they leave the mesh.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Number of negative charges.
    pub particles: usize,
    pub iterations: usize,
    pub rule: UpdateRule,
    #[serde(default = "yes")]
    pub normalize_forces: bool,
    #[serde(default)]
    pub perturbation: PerturbationPolicy,
    #[serde(default)]
    pub mh_filter: bool,
    #[serde(default)]
    pub annealing: AnnealSchedule,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub discard: DiscardPolicy,
    /// Magnitude of every negative charge.
    #[serde(default = "unit")]
    pub charge: f64,
    /// Compute metrics every this many iterations (0 disables).
    #[serde(default)]
    pub metrics_every: usize,
}

fn yes() -> bool {
    true
}

fn default_stride() -> usize {
    5
}

fn unit() -> f64 {
    1.0
}

impl SamplerConfig {
    /// Euler updates with normalised forces and defaults elsewhere.
    pub fn euler(particles: usize, iterations: usize, tau: f64) -> Self {
        SamplerConfig {
            particles,
            iterations,
            rule: UpdateRule::euler(tau),
            normalize_forces: true,
            perturbation: PerturbationPolicy::default(),
            mh_filter: false,
            annealing: AnnealSchedule::None,
            init: InitSpec::MeshBounds,
            seed: 0,
            snapshot_stride: default_stride(),
            discard: DiscardPolicy::AtEnd,
            charge: 1.0,
            metrics_every: 0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("particles must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be >= 1".into()));
        }
        if !(self.charge > 0.0 && self.charge.is_finite()) {
            return Err(Error::Config(format!("charge must be positive, got {}", self.charge)));
        }
        self.rule.validate(dim)?;
        self.perturbation.validate()?;
        self.annealing.validate()?;
        self.init.validate(dim)
    }
}

/// Negative-charge state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Points,
    /// Displacement from the previous step, used by the Verlet rules.
    pub prev_disp: Points,
    /// Stable ids; survive filtering.
    pub ids: Vec<usize>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.dim()
    }

    pub fn in_region_mask(&self, grid: &Grid) -> Vec<bool> {
        self.positions.rows().map(|r| grid.contains(r)).collect()
    }

    fn retain(&self, keep: &[bool]) -> ParticleEnsemble {
        ParticleEnsemble {
            positions: self.positions.select(|i, _| keep[i]),
            prev_disp: self.prev_disp.select(|i, _| keep[i]),
            ids: self.ids.iter().zip(keep).filter(|(_, k)| **k).map(|(i, _)| *i).collect(),
        }
    }

    fn snapshot(&self, iteration: usize) -> Snapshot {
        Snapshot {
            iteration,
            ids: self.ids.clone(),
            positions: self.positions.clone(),
        }
    }
}

/// Draws the initial particles. Particle `i` uses its own seeded stream.
pub fn initialize(config: &SamplerConfig, grid: &Grid) -> Result<ParticleEnsemble> {
    let dim = grid.dim();
    config.init.validate(dim)?;
    let mut positions = Points::zeros(config.particles, dim);
    for i in 0..config.particles {
        let mut r = rng::stream(config.seed, &[rng::TAG_INIT, i as u64]);
        positions.row_mut(i).copy_from_slice(&config.init.draw(grid, &mut r));
    }
    Ok(ParticleEnsemble {
        prev_disp: Points::zeros(config.particles, dim),
        positions,
        ids: (0..config.particles).collect(),
    })
}

/// Result of dropping particles outside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub ensemble: ParticleEnsemble,
    pub discarded: usize,
    /// Set when nothing survived.
    pub empty: bool,
}

/// Keeps particles with every coordinate inside the closed mesh bounds.
pub fn filter_in_region(ensemble: &ParticleEnsemble, grid: &Grid) -> Filtered {
    let keep = ensemble.in_region_mask(grid);
    let kept = ensemble.retain(&keep);
    Filtered {
        discarded: ensemble.len() - kept.len(),
        empty: kept.is_empty(),
        ensemble: kept,
    }
}

/// Scalar diagnostics for one iteration, one line of `diagnostics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Largest per-particle force norm before normalisation.
    pub max_force_norm: f64,
    /// Mean per-particle force norm before normalisation.
    pub mean_force_norm: f64,
    pub particles: usize,
    pub in_region: usize,
    /// Mean Euclidean distance moved this iteration.
    pub mean_displacement: f64,
    pub anneal_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mh_accepted: Option<usize>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    /// Iteration 0, every `snapshot_stride`-th iteration, and the last one.
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn metric_reports(&self) -> Vec<MetricReport> {
        self.diagnostics.iter().filter_map(|d| d.metrics.clone()).collect()
    }
}

/// Runs the sampler for `config.iterations` steps.
pub fn run(
    config: &SamplerConfig,
    mesh: &ChargeMesh,
    target: &dyn Target,
) -> Result<(ParticleEnsemble, RunRecord)> {
    run_with_reference(config, mesh, target, None)
}

/// As [`run`], additionally computing MMD² against `reference` whenever
/// metrics are due.
pub fn run_with_reference(
    config: &SamplerConfig,
    mesh: &ChargeMesh,
    target: &dyn Target,
    reference: Option<&Points>,
) -> Result<(ParticleEnsemble, RunRecord)> {
    let grid = mesh.grid();
    let dim = grid.dim();
    if target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: target.dim(),
        });
    }
    config.validate(dim)?;
    let kernel = ForceKernel::for_mesh(&mesh.view())?;
    let mut ens = initialize(config, grid)?;
    let mut record = RunRecord {
        snapshots: vec![ens.snapshot(0)],
        ..RunRecord::default()
    };
    let mut warned = false;

    for t in 0..config.iterations {
        let step = t + 1;
        let started = Instant::now();
        let view = mesh.anneal_q(&config.annealing, t);
        let charges = vec![config.charge; ens.len()];
        let assembled = kernel
            .assemble(&ens.positions, &charges, &view, config.normalize_forces)
            .map_err(|e| e.at_iteration(step))?;

        let moved: Vec<(Vec<f64>, Vec<f64>, bool)> = (0..ens.len())
            .into_par_iter()
            .map(|j| {
                let id = ens.ids[j] as u64;
                let x = ens.positions.row(j);
                let (mut new_x, mut disp) =
                    config.rule.apply(x, ens.prev_disp.row(j), assembled.forces.row(j))?;
                if config.perturbation.is_active(step) {
                    let mut r = rng::stream(config.seed, &[rng::TAG_PERTURB, id, step as u64]);
                    new_x = perturb(&new_x, &config.perturbation, step, &mut r);
                }
                let mut accepted = true;
                if config.mh_filter {
                    let mut r = rng::stream(config.seed, &[rng::TAG_MH_FILTER, id, step as u64]);
                    let (kept, acc) = mh_filter(x, &new_x, target, &mut r);
                    new_x = kept;
                    accepted = acc;
                    if !acc {
                        disp.iter_mut().for_each(|d| *d = 0.0);
                    }
                }
                Ok((new_x, disp, accepted))
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| e.at_iteration(step))?;

        let mut total_move = 0.0;
        let mut accepted = 0;
        for (j, (x, d, acc)) in moved.into_iter().enumerate() {
            total_move += distance(ens.positions.row(j), &x);
            accepted += acc as usize;
            ens.positions.row_mut(j).copy_from_slice(&x);
            ens.prev_disp.row_mut(j).copy_from_slice(&d);
        }
        let n_before = ens.len();
        let mask = ens.in_region_mask(grid);
        let in_region = mask.iter().filter(|m| **m).count();
        if config.discard == DiscardPolicy::Sequential && in_region < n_before {
            ens = ens.retain(&mask);
        }
        let out_fraction = 1.0 - in_region as f64 / n_before.max(1) as f64;
        if out_fraction > OUT_OF_REGION_WARN_FRACTION && !warned {
            warned = true;
            record.warnings.push(format!(
                "iteration {step}: {:.1}% of particles are outside the mesh region; check the mesh bounds, step size or magnitudes",
                100.0 * out_fraction
            ));
        }

        let metrics = if config.metrics_every > 0 && (step % config.metrics_every == 0 || step == config.iterations) {
            let inside = filter_in_region(&ens, grid).ensemble;
            if inside.is_empty() {
                None
            } else {
                let mut rep = metrics::report(&inside.positions, reference, Some(target)).ok();
                if let Some(r) = rep.as_mut() {
                    r.iteration = Some(step);
                }
                rep
            }
        } else {
            None
        };

        record.diagnostics.push(IterationDiagnostics {
            iteration: step,
            max_force_norm: assembled.max_norm,
            mean_force_norm: assembled.mean_norm,
            particles: n_before,
            in_region,
            mean_displacement: total_move / n_before.max(1) as f64,
            anneal_multiplier: view.multiplier(),
            mh_accepted: config.mh_filter.then_some(accepted),
            wall_time_s: started.elapsed().as_secs_f64().max(1e-9),
            metrics,
        });
        if step % config.snapshot_stride == 0 || step == config.iterations {
            record.snapshots.push(ens.snapshot(step));
        }
        if ens.is_empty() {
            record.warnings.push(format!("iteration {step}: no particles remain inside the mesh"));
            break;
        }
    }
    Ok((ens, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assign_magnitudes, build_grid, MagnitudeMode};
    use crate::targets::GaussianUnimodal;

    fn flat_mesh(counts: usize) -> ChargeMesh {
        let grid = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[counts, counts]).unwrap();
        let n = grid.len();
        ChargeMesh::from_parts(grid, vec![1.0; n], 1.0, MagnitudeMode::Density).unwrap()
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let grid = build_grid(&[(-3.0, 7.0), (-3.0, 7.0)], &[10, 10]).unwrap();
        let mut cfg = SamplerConfig::euler(200, 1, 0.1);
        cfg.init = InitSpec::uniform(vec![-3.0, -3.0], vec![7.0, 7.0]);
        let a = initialize(&cfg, &grid).unwrap();
        let b = initialize(&cfg, &grid).unwrap();
        assert_eq!(a, b);
        assert!(a.positions.as_slice().iter().all(|v| (-3.0..=7.0).contains(v)));
        assert!(a.prev_disp.as_slice().iter().all(|v| *v == 0.0));
        cfg.seed = 1;
        assert_ne!(initialize(&cfg, &grid).unwrap(), a);
        cfg.init = InitSpec::uniform(vec![0.0], vec![1.0]);
        assert!(initialize(&cfg, &grid).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let mesh = flat_mesh(5);
        let cfg = SamplerConfig::euler(10, 0, 0.1);
        assert!(matches!(
            run(&cfg, &mesh, &GaussianUnimodal::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn snapshot_count_and_timestamps() {
        let mesh = flat_mesh(6);
        for (iters, stride) in [(7usize, 5usize), (10, 5), (3, 1), (4, 10)] {
            let mut cfg = SamplerConfig::euler(8, iters, 0.01);
            cfg.snapshot_stride = stride;
            let (ens, rec) = run(&cfg, &mesh, &GaussianUnimodal::default()).unwrap();
            assert_eq!(rec.snapshots.len(), 1 + iters.div_ceil(stride));
            assert!(rec.snapshots.windows(2).all(|w| w[0].iteration < w[1].iteration));
            assert_eq!(rec.diagnostics.len(), iters);
            assert!(rec.diagnostics.iter().all(|d| d.wall_time_s > 0.0));
            assert_eq!(ens.len(), 8);
        }
    }

    #[test]
    fn filtering_uses_closed_bounds() {
        let grid = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let ens = ParticleEnsemble {
            positions: Points::from_rows(&[[0.5, 0.5], [1.0, 0.0], [1.0 + 1e-12, 0.5]]).unwrap(),
            prev_disp: Points::zeros(3, 2),
            ids: vec![0, 1, 2],
        };
        let f = filter_in_region(&ens, &grid);
        assert_eq!(f.ensemble.ids, vec![0, 1]);
        assert_eq!(f.discarded, 1);
        assert!(!f.empty);
        let inside = filter_in_region(&f.ensemble, &grid);
        assert_eq!(inside.ensemble, f.ensemble);
    }

    #[test]
    fn runs_are_deterministic_with_noise_and_filter() {
        let target = GaussianUnimodal::default();
        let mesh = assign_magnitudes(
            build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[12, 12]).unwrap(),
            &target,
            MagnitudeMode::Density,
            1.0,
        )
        .unwrap();
        let mut cfg = SamplerConfig::euler(30, 12, 0.05);
        cfg.perturbation = PerturbationPolicy::new(0.01, 3);
        cfg.mh_filter = true;
        cfg.seed = 99;
        let (a, ra) = run(&cfg, &mesh, &target).unwrap();
        let (b, rb) = run(&cfg, &mesh, &target).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.snapshots, rb.snapshots);
        assert!(ra.diagnostics.iter().all(|d| d.mh_accepted.is_some()));
    }

    #[test]
    fn sequential_discard_drops_escaped_particles() {
        let mesh = flat_mesh(5);
        let mut cfg = SamplerConfig::euler(20, 3, 1.0);
        cfg.discard = DiscardPolicy::Sequential;
        cfg.init = InitSpec::uniform(vec![0.9, 0.9], vec![1.0, 1.0]);
        let (ens, rec) = run(&cfg, &mesh, &GaussianUnimodal::default()).unwrap();
        assert!(ens.len() <= 20);
        assert!(ens.positions.rows().all(|r| mesh.grid().contains(r)));
        let last = rec.diagnostics.last().unwrap();
        assert!(last.particles >= ens.len());
    }

    #[test]
    fn escaping_particles_raise_a_warning() {
        let mesh = flat_mesh(4);
        let mut cfg = SamplerConfig::euler(10, 2, 0.1);
        cfg.init = InitSpec::uniform(vec![5.0, 5.0], vec![6.0, 6.0]);
        let (_, rec) = run(&cfg, &mesh, &GaussianUnimodal::default()).unwrap();
        assert_eq!(rec.warnings.len(), 1);
    }

    #[test]
    fn metrics_are_recorded_when_requested() {
        let mesh = flat_mesh(8);
        let mut cfg = SamplerConfig::euler(10, 4, 0.05);
        cfg.metrics_every = 2;
        let reference = Points::from_rows(&[[0.5, 0.5], [0.4, 0.6]]).unwrap();
        let (_, rec) =
            run_with_reference(&cfg, &mesh, &GaussianUnimodal::default(), Some(&reference)).unwrap();
        let reps = rec.metric_reports();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[1].iteration, Some(4));
        assert!(reps.iter().all(|r| r.mmd2.is_some() && r.avg_nll.is_some()));
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: SamplerConfig = toml::from_str(
            r#"
            particles = 400
            iterations = 100
            rule = { kind = "euler", tau = 0.1 }
            init = { kind = "uniform", low = [0.0, 0.0], high = [0.5, 0.5] }
            "#,
        )
        .unwrap();
        assert!(cfg.normalize_forces);
        assert_eq!(cfg.snapshot_stride, 5);
        assert_eq!(cfg.rule, UpdateRule::euler(0.1));
        assert!(toml::from_str::<SamplerConfig>("particles = 1\niterations = 1\nrule = { kind = \"euler\", tau = 0.1 }\nbogus = 1").is_err());
    }
}
