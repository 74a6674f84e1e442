//! Experiment configuration, execution and on-disk artifacts.
//!
//! A run directory holds:
//!
//! | file                  | content                                               |
//! |-----------------------|-------------------------------------------------------|
//! | `resolved_config.toml`| the config with every override applied                |
//! | `positions.csv`       | particle snapshots                                    |
//! | `diagnostics.jsonl`   | one [`IterationDiagnostics`] per iteration            |
//! | `metrics.jsonl`       | one [`MetricReport`] per evaluation                   |
//! | `mh_samples.csv`      | MH baseline chain, when configured                    |
//! | `lmc_positions.csv`   | final LMC particles, when configured                  |
//! | `manifest.json`       | status, SHA-256 of every file above, checks, warnings |
//!
//! One master seed drives every stochastic component; streams are separated
//! by purpose tags (see [`crate::rng`]).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{langevin_evolve, metropolis_hastings, LmcConfig, LmcIteration, MhChain, MhConfig};
use crate::error::{Error, Result};
use crate::io::{self, Snapshot};
use crate::mesh::{assign_magnitudes, build_grid, load_mesh, save_mesh, ChargeMesh, MagnitudeMode, MeshCacheKey};
use crate::metrics::{self, MetricReport};
use crate::points::Points;
use crate::sampler::{filter_in_region, initialize, run_with_reference, Filtered, ParticleEnsemble, RunRecord, SamplerConfig};
use crate::targets::{Target, TargetSpec};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const POSITIONS: &str = "positions.csv";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";
pub const METRICS: &str = "metrics.jsonl";
pub const MH_SAMPLES: &str = "mh_samples.csv";
pub const LMC_POSITIONS: &str = "lmc_positions.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub bounds: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    /// Counts used instead of `counts` when a full-scale run is requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_scale_counts: Option<Vec<usize>>,
    pub mode: MagnitudeMode,
    #[serde(default = "unit")]
    pub q_max: f64,
    /// Directory for cached magnitudes, keyed by target, grid, mode and `q_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mh: Option<MhConfig>,
    /// LMC particles start from the sampler's initial distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lmc: Option<LmcConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub avg_nll: bool,
    /// A positions CSV whose last snapshot is the MMD² reference sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            avg_nll: true,
            reference: None,
        }
    }
}

/// Optional sanity checks recorded in the manifest. A failed check never
/// fails the run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Expected grid argmax of the mesh magnitudes; passes when within one
    /// cell per dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_argmax: Option<Vec<f64>>,
    /// Expected mean of the in-region final particles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_mean: Option<Vec<f64>>,
    #[serde(default = "default_mean_tol")]
    pub mean_tolerance: f64,
}

fn default_mean_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub target: TargetSpec,
    pub mesh: MeshConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line style overrides applied by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub full_scale: bool,
    pub snapshot_stride: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.target.id().to_string())
    }

    /// Applies overrides and propagates the master seed so that the result
    /// reproduces the run on its own.
    pub fn resolve(&self, opts: &RunOptions) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        if opts.full_scale {
            if let Some(full) = cfg.mesh.full_scale_counts.take() {
                cfg.mesh.counts = full;
            }
        }
        if let Some(stride) = opts.snapshot_stride {
            cfg.sampler.snapshot_stride = stride;
        }
        cfg.sampler.seed = cfg.seed;
        if let Some(mh) = cfg.baselines.mh.as_mut() {
            mh.seed = cfg.seed;
            if mh.init.is_empty() {
                mh.init = cfg.mesh.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
            }
        }
        if let Some(lmc) = cfg.baselines.lmc.as_mut() {
            lmc.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rewrites relative data, reference and cache paths against `base`.
    pub fn absolutize(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.target {
            TargetSpec::Blr { data: Some(p), .. } | TargetSpec::LotkaVolterra { data: Some(p) } => fix(p),
            _ => {}
        }
        if let Some(p) = self.metrics.reference.as_mut() {
            fix(p);
        }
        if let Some(p) = self.mesh.cache_dir.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mesh.bounds.len();
        if self.mesh.counts.len() != dim {
            return Err(Error::Config(format!(
                "mesh.counts has {} entries for {dim} bounds",
                self.mesh.counts.len()
            )));
        }
        self.sampler.validate(dim)?;
        if let Some(mh) = &self.baselines.mh {
            mh.validate(dim)?;
        }
        if let Some(lmc) = &self.baselines.lmc {
            lmc.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one optional check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// In-memory result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub ensemble: ParticleEnsemble,
    pub record: RunRecord,
    pub filtered: Filtered,
    pub metrics: Vec<MetricReport>,
    pub mh: Option<MhChain>,
    pub lmc: Option<(Points, Vec<LmcIteration>)>,
    pub checks: Vec<CheckResult>,
    pub mesh_invalid_points: usize,
    pub warnings: Vec<String>,
}

fn build_mesh(cfg: &ExperimentConfig, target: &dyn Target, base: Option<&Path>) -> Result<ChargeMesh> {
    let build = || {
        let grid = build_grid(&cfg.mesh.bounds, &cfg.mesh.counts)?;
        assign_magnitudes(grid, target, cfg.mesh.mode, cfg.mesh.q_max)
    };
    let Some(dir) = &cfg.mesh.cache_dir else {
        return build();
    };
    let dir = match base {
        Some(b) if dir.is_relative() => b.join(dir),
        _ => dir.clone(),
    };
    let key = MeshCacheKey {
        target_id: target.id().to_string(),
        bounds: cfg.mesh.bounds.clone(),
        counts: cfg.mesh.counts.clone(),
        mode: cfg.mesh.mode,
        q_max: cfg.mesh.q_max,
    };
    let path = dir.join(format!("{}.mesh", key.file_stem()));
    if path.exists() {
        if let Ok(mesh) = load_mesh(&path, &key) {
            return Ok(mesh);
        }
    }
    let mesh = build()?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_mesh(&path, &key, &mesh)?;
    Ok(mesh)
}

fn argmax_check(mesh: &ChargeMesh, expected: &[f64]) -> CheckResult {
    let grid = mesh.grid();
    let found = grid.points().row(mesh.argmax()).to_vec();
    let spacing = grid.spacing();
    let passed = expected.len() == found.len()
        && found
            .iter()
            .zip(expected)
            .zip(&spacing)
            .all(|((f, e), h)| (f - e).abs() <= h * (1.0 + 1e-9));
    CheckResult {
        name: "mesh-argmax".into(),
        passed,
        detail: format!("grid argmax {found:?}, expected {expected:?}, cell {spacing:?}"),
    }
}

fn mean_check(points: &Points, expected: &[f64], tol: f64) -> CheckResult {
    let mean = if points.is_empty() { vec![] } else { points.mean() };
    let passed = mean.len() == expected.len() && mean.iter().zip(expected).all(|(m, e)| (m - e).abs() <= tol);
    CheckResult {
        name: "final-mean".into(),
        passed,
        detail: format!("mean {mean:?}, expected {expected:?} within {tol}"),
    }
}

/// Builds target and mesh, runs the sampler and any baselines, and evaluates
/// metrics and checks. `cfg` should already be resolved; relative paths are
/// taken from `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let target = cfg.target.build(base)?;
    let mesh = build_mesh(cfg, target.as_ref(), base)?;
    let reference = match &cfg.metrics.reference {
        Some(p) => {
            let path = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            let snaps = io::read_positions_file(&path)?;
            Some(
                snaps
                    .into_iter()
                    .last()
                    .ok_or_else(|| Error::Data(format!("{} has no rows", path.display())))?
                    .positions,
            )
        }
        None => None,
    };
    let nll_target = cfg.metrics.avg_nll.then_some(target.as_ref());

    let (ensemble, record) = run_with_reference(&cfg.sampler, &mesh, target.as_ref(), reference.as_ref())?;
    let filtered = filter_in_region(&ensemble, mesh.grid());
    let mut warnings = record.warnings.clone();
    if filtered.empty {
        warnings.push("no particles ended inside the mesh region".into());
    }

    let mut reports = record.metric_reports();
    reports.iter_mut().for_each(|r| r.method = Some("eparvi".into()));
    let mut final_report = |method: &str, samples: &Points, iteration: Option<usize>, warnings: &mut Vec<String>| {
        if samples.is_empty() || (reference.is_none() && nll_target.is_none()) {
            return;
        }
        match metrics::report(samples, reference.as_ref(), nll_target) {
            Ok(mut r) => {
                r.method = Some(method.to_string());
                r.iteration = iteration;
                reports.push(r);
            }
            Err(e) => warnings.push(format!("{method} metrics skipped: {e}")),
        }
    };
    final_report("eparvi", &filtered.ensemble.positions, Some(cfg.sampler.iterations), &mut warnings);

    let mh = match &cfg.baselines.mh {
        Some(mh_cfg) => {
            let chain = metropolis_hastings(target.as_ref(), mh_cfg)?;
            warnings.extend(chain.warnings.iter().map(|w| format!("mh: {w}")));
            final_report("mh", &chain.samples, None, &mut warnings);
            Some(chain)
        }
        None => None,
    };
    let lmc = match &cfg.baselines.lmc {
        Some(lmc_cfg) => {
            let init = initialize(&cfg.sampler, mesh.grid())?;
            let (pts, rec) = langevin_evolve(target.as_ref(), &init.positions, lmc_cfg)?;
            let inside = pts.select(|_, r| mesh.grid().contains(r));
            final_report("lmc", &inside, Some(lmc_cfg.iterations), &mut warnings);
            Some((pts, rec))
        }
        None => None,
    };

    let mut checks = Vec::new();
    if let Some(expected) = &cfg.checks.expected_argmax {
        checks.push(argmax_check(&mesh, expected));
    }
    if let Some(expected) = &cfg.checks.expected_mean {
        checks.push(mean_check(&filtered.ensemble.positions, expected, cfg.checks.mean_tolerance));
    }

    Ok(ExperimentResult {
        mesh_invalid_points: mesh.invalid_points(),
        ensemble,
        record,
        filtered,
        metrics: reports,
        mh,
        lmc,
        checks,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub name: String,
    pub target: String,
    pub seed: u64,
    /// File name to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub particles_in_region: Option<usize>,
    #[serde(default)]
    pub particles_discarded: Option<usize>,
    #[serde(default)]
    pub mesh_invalid_points: Option<usize>,
    pub wall_time_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_present(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            files.insert(name.to_string(), sha256_file(&path)?);
        }
    }
    Ok(files)
}

const ARTIFACTS: [&str; 6] = [RESOLVED_CONFIG, POSITIONS, DIAGNOSTICS, METRICS, MH_SAMPLES, LMC_POSITIONS];

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_artifacts(dir: &Path, result: &ExperimentResult) -> Result<()> {
    io::write_positions_file(&dir.join(POSITIONS), &result.record.snapshots)?;
    io::write_jsonl_file(&dir.join(DIAGNOSTICS), &result.record.diagnostics)?;
    io::write_jsonl_file(&dir.join(METRICS), &result.metrics)?;
    if let Some(chain) = &result.mh {
        let snap = Snapshot {
            iteration: 0,
            ids: (0..chain.samples.len()).collect(),
            positions: chain.samples.clone(),
        };
        io::write_positions_file(&dir.join(MH_SAMPLES), &[snap])?;
    }
    if let Some((pts, rec)) = &result.lmc {
        let snap = Snapshot {
            iteration: rec.len(),
            ids: (0..pts.len()).collect(),
            positions: pts.clone(),
        };
        io::write_positions_file(&dir.join(LMC_POSITIONS), &[snap])?;
    }
    Ok(())
}

/// Resolves `cfg`, runs it, and writes all artifacts plus a manifest into
/// `out_dir`. Config errors are returned before anything is written. A
/// runtime failure still leaves a manifest with `status = failed` and hashes
/// of whatever was written.
pub fn execute(cfg: &ExperimentConfig, base: Option<&Path>, out_dir: &Path, opts: &RunOptions) -> Result<Manifest> {
    let mut resolved = cfg.resolve(opts)?;
    if let Some(b) = base {
        resolved.absolutize(b);
    }
    // Surface data-file and target-parameter errors before creating the run directory.
    resolved.target.build(base)?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let resolved_path = out_dir.join(RESOLVED_CONFIG);
    std::fs::write(&resolved_path, resolved.to_toml()?).map_err(|e| Error::io(&resolved_path, e))?;

    let mut manifest = Manifest {
        status: RunStatus::Failed,
        error: None,
        name: resolved.name(),
        target: resolved.target.id().to_string(),
        seed: resolved.seed,
        files: BTreeMap::new(),
        checks: Vec::new(),
        warnings: Vec::new(),
        particles_in_region: None,
        particles_discarded: None,
        mesh_invalid_points: None,
        wall_time_s: 0.0,
    };
    let outcome = run_experiment(&resolved, base).and_then(|res| write_artifacts(out_dir, &res).map(|_| res));
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok(res) => {
            manifest.status = RunStatus::Complete;
            manifest.checks = res.checks;
            manifest.warnings = res.warnings;
            manifest.particles_in_region = Some(res.filtered.ensemble.len());
            manifest.particles_discarded = Some(res.filtered.discarded);
            manifest.mesh_invalid_points = Some(res.mesh_invalid_points);
            manifest.files = hash_present(out_dir, &ARTIFACTS)?;
            write_manifest(out_dir, &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.files = hash_present(out_dir, &ARTIFACTS)?;
            write_manifest(out_dir, &manifest)?;
            Err(e)
        }
    }
}

/// Names of artifacts whose current hash differs from the manifest, or that
/// are missing.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut bad = Vec::new();
    for (name, hash) in &manifest.files {
        let p = dir.join(name);
        if !p.exists() || &sha256_file(&p)? != hash {
            bad.push(name.clone());
        }
    }
    Ok(bad)
}
