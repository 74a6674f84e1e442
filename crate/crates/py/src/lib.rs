//! Python bindings, imported as `eparvi._eparvi` and re-exported by the
//! `eparvi` package.
//!
//! Sample sets cross the boundary as lists of rows (`list[list[float]]`).

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eparvi_core::baselines::{langevin_evolve, metropolis_hastings, LmcConfig, MhConfig};
use eparvi_core::experiment::{execute, ExperimentConfig, RunOptions};
use eparvi_core::export::{export_to_file, ExportRequest};
use eparvi_core::integrators::{PerturbationPolicy, UpdateRule};
use eparvi_core::mesh::{assign_magnitudes, build_grid, ChargeMesh, MagnitudeMode};
use eparvi_core::metrics;
use eparvi_core::sampler::{self, InitSpec, SamplerConfig};
use eparvi_core::targets::{catalogue, TargetSpec};
use eparvi_core::{Error, Points};

create_exception!(_eparvi, EparviError, PyException, "Raised for sampler, mesh and data errors.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::DimensionMismatch { .. } | Error::InvalidDimension(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => EparviError::new_err(other.to_string()),
    }
}

fn points(rows: Vec<Vec<f64>>) -> PyResult<Points> {
    Points::from_rows(&rows).map_err(to_py)
}

fn json_value<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_mode(mode: &str) -> PyResult<MagnitudeMode> {
    Ok(match mode {
        "density" => MagnitudeMode::Density,
        "normalized-density" => MagnitudeMode::NormalizedDensity,
        "log-density-offset" => MagnitudeMode::LogDensityOffset,
        "constant" => MagnitudeMode::Constant,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown magnitude mode `{other}` (density, normalized-density, log-density-offset, constant)"
            )))
        }
    })
}

/// A built-in target density.
#[pyclass(name = "Target", module = "eparvi", frozen)]
struct PyTarget {
    spec: TargetSpec,
    inner: Box<dyn eparvi_core::targets::Target>,
}

#[pymethods]
impl PyTarget {
    /// `Target("neals-funnel", sigma=3.0)`; unknown ids and parameters that
    /// the target does not take raise `ValueError`.
    #[new]
    #[pyo3(signature = (id, *, sigma=None, alpha=None, split_seed=None, data=None))]
    fn new(
        id: &str,
        sigma: Option<f64>,
        alpha: Option<f64>,
        split_seed: Option<u64>,
        data: Option<PathBuf>,
    ) -> PyResult<Self> {
        let mut spec = TargetSpec::from_id(id).map_err(to_py)?;
        let unused = |name: &str| PyValueError::new_err(format!("target `{id}` takes no parameter `{name}`"));
        match &mut spec {
            TargetSpec::NealsFunnel { sigma: s } => {
                if let Some(v) = sigma {
                    *s = v;
                }
            }
            TargetSpec::Blr {
                data: d,
                alpha: a,
                split_seed: k,
            } => {
                if let Some(v) = alpha {
                    *a = v;
                }
                if let Some(v) = split_seed {
                    *k = v;
                }
                if data.is_some() {
                    *d = data.clone();
                }
            }
            TargetSpec::LotkaVolterra { data: d } => {
                if data.is_some() {
                    *d = data.clone();
                }
            }
            _ => {}
        }
        let takes = |name: &str| match &spec {
            TargetSpec::NealsFunnel { .. } => name == "sigma",
            TargetSpec::Blr { .. } => matches!(name, "alpha" | "split_seed" | "data"),
            TargetSpec::LotkaVolterra { .. } => name == "data",
            _ => false,
        };
        for (name, given) in [
            ("sigma", sigma.is_some()),
            ("alpha", alpha.is_some()),
            ("split_seed", split_seed.is_some()),
            ("data", data.is_some()),
        ] {
            if given && !takes(name) {
                return Err(unused(name));
            }
        }
        let inner = spec.build(None).map_err(to_py)?;
        Ok(PyTarget { spec, inner })
    }

    #[getter]
    fn id(&self) -> &str {
        self.spec.id()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        Ok(self.inner.log_density(&x))
    }

    fn density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        Ok(self.inner.density(&x))
    }

    /// Gradient of the log density, or `None` when the target has none.
    fn gradient(&self, x: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        self.check_dim(&x)?;
        Ok(self.inner.gradient(&x))
    }

    fn is_valid(&self, x: Vec<f64>) -> PyResult<bool> {
        self.check_dim(&x)?;
        Ok(self.inner.is_valid(&x))
    }

    fn __repr__(&self) -> String {
        format!("Target({:?}, dim={})", self.spec.id(), self.inner.dim())
    }
}

impl PyTarget {
    fn check_dim(&self, x: &[f64]) -> PyResult<()> {
        if x.len() == self.inner.dim() {
            Ok(())
        } else {
            Err(to_py(Error::DimensionMismatch {
                expected: self.inner.dim(),
                actual: x.len(),
            }))
        }
    }
}

/// Positive charges on a regular grid, with magnitudes taken from a target.
#[pyclass(name = "Mesh", module = "eparvi", frozen)]
struct PyMesh {
    inner: ChargeMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    #[pyo3(signature = (target, bounds, counts, mode="density", q_max=1.0))]
    fn new(target: &PyTarget, bounds: Vec<(f64, f64)>, counts: Vec<usize>, mode: &str, q_max: f64) -> PyResult<Self> {
        let grid = build_grid(&bounds, &counts).map_err(to_py)?;
        let inner = assign_magnitudes(grid, target.inner.as_ref(), parse_mode(mode)?, q_max).map_err(to_py)?;
        Ok(PyMesh { inner })
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.grid().points().to_rows()
    }

    #[getter]
    fn magnitudes(&self) -> Vec<f64> {
        self.inner.magnitudes().to_vec()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.inner.grid().spacing()
    }

    /// Grid point carrying the largest magnitude.
    #[getter]
    fn argmax(&self) -> Vec<f64> {
        self.inner.grid().points().row(self.inner.argmax()).to_vec()
    }

    #[getter]
    fn invalid_points(&self) -> usize {
        self.inner.invalid_points()
    }

    fn __len__(&self) -> usize {
        self.inner.grid().len()
    }
}

fn update_rule(rule: &str, tau: f64, dt2: Option<f64>, tau_prime: Option<f64>) -> PyResult<UpdateRule> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("rule `{rule}` needs {name}")));
    Ok(match rule {
        "euler" => UpdateRule::euler(tau),
        "verlet" => UpdateRule::verlet(need(dt2, "dt2")?),
        "damped-verlet" => UpdateRule::damped_verlet(need(dt2, "dt2")?, need(tau_prime, "tau_prime")?),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown rule `{other}` (euler, verlet, damped-verlet)"
            )))
        }
    })
}

/// Runs the particle sampler and returns a dict with `final` positions,
/// particle `ids`, `in_region` positions, `snapshots` as
/// `(iteration, positions)` pairs, per-iteration `diagnostics` and `warnings`.
#[pyfunction]
#[pyo3(signature = (
    target, mesh, particles, iterations, *, rule="euler", tau=0.1, dt2=None, tau_prime=None,
    normalize=true, noise_sigma=0.0, noise_period=1, mh_filter=false, init_low=None, init_high=None,
    seed=0, snapshot_stride=5
))]
#[allow(clippy::too_many_arguments)]
fn sample<'py>(
    py: Python<'py>,
    target: &PyTarget,
    mesh: &PyMesh,
    particles: usize,
    iterations: usize,
    rule: &str,
    tau: f64,
    dt2: Option<f64>,
    tau_prime: Option<f64>,
    normalize: bool,
    noise_sigma: f64,
    noise_period: usize,
    mh_filter: bool,
    init_low: Option<Vec<f64>>,
    init_high: Option<Vec<f64>>,
    seed: u64,
    snapshot_stride: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = SamplerConfig::euler(particles, iterations, tau);
    cfg.rule = update_rule(rule, tau, dt2, tau_prime)?;
    cfg.normalize_forces = normalize;
    cfg.perturbation = PerturbationPolicy::new(noise_sigma, noise_period);
    cfg.mh_filter = mh_filter;
    cfg.seed = seed;
    cfg.snapshot_stride = snapshot_stride;
    cfg.init = match (init_low, init_high) {
        (Some(low), Some(high)) => InitSpec::uniform(low, high),
        (None, None) => InitSpec::MeshBounds,
        _ => return Err(PyValueError::new_err("init_low and init_high go together")),
    };
    let target_ref = target.inner.as_ref();
    let (ens, record) = py
        .detach(|| sampler::run(&cfg, &mesh.inner, target_ref))
        .map_err(to_py)?;
    let filtered = sampler::filter_in_region(&ens, mesh.inner.grid());
    let out = PyDict::new(py);
    out.set_item("final", ens.positions.to_rows())?;
    out.set_item("ids", ens.ids.clone())?;
    out.set_item("in_region", filtered.ensemble.positions.to_rows())?;
    let snaps: Vec<(usize, Vec<Vec<f64>>)> = record
        .snapshots
        .iter()
        .map(|s| (s.iteration, s.positions.to_rows()))
        .collect();
    out.set_item("snapshots", snaps)?;
    out.set_item("diagnostics", json_value(py, &record.diagnostics)?)?;
    out.set_item("warnings", record.warnings)?;
    Ok(out)
}

/// Squared MMD with the kernel `(xᵀy / 3 + 1)³`.
#[pyfunction]
fn mmd_squared(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::mmd_squared(&points(x)?, &points(y)?).map_err(to_py)
}

/// `(avg_nll, n_valid, n_invalid)`; invalid samples are skipped.
#[pyfunction]
fn avg_nll(samples: Vec<Vec<f64>>, target: &PyTarget) -> PyResult<(f64, usize, usize)> {
    let s = metrics::avg_nll(&points(samples)?, target.inner.as_ref()).map_err(to_py)?;
    Ok((s.avg_nll, s.n_valid, s.n_invalid))
}

/// Random-walk MH; returns `(samples, acceptance_rate)`.
#[pyfunction]
#[pyo3(signature = (target, n_samples, init, *, proposal_std=vec![1.0], seed=0, burn_in=0.2, thin=1))]
fn metropolis_hastings_chain(
    py: Python<'_>,
    target: &PyTarget,
    n_samples: usize,
    init: Vec<f64>,
    proposal_std: Vec<f64>,
    seed: u64,
    burn_in: f64,
    thin: usize,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let mut cfg = MhConfig::new(n_samples, init);
    cfg.proposal_std = proposal_std;
    cfg.seed = seed;
    cfg.burn_in = burn_in;
    cfg.thin = thin;
    let t = target.inner.as_ref();
    let chain = py.detach(|| metropolis_hastings(t, &cfg)).map_err(to_py)?;
    Ok((chain.samples.to_rows(), chain.acceptance_rate))
}

/// Langevin Monte Carlo from `init`; returns the final particles.
#[pyfunction]
#[pyo3(signature = (target, init, iterations, *, a=0.01, b=1.0, c=0.55, seed=0))]
fn langevin(
    py: Python<'_>,
    target: &PyTarget,
    init: Vec<Vec<f64>>,
    iterations: usize,
    a: f64,
    b: f64,
    c: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = LmcConfig {
        a,
        b,
        c,
        iterations,
        seed,
    };
    let init = points(init)?;
    let t = target.inner.as_ref();
    let (out, _) = py.detach(|| langevin_evolve(t, &init, &cfg)).map_err(to_py)?;
    Ok(out.to_rows())
}

/// Runs a TOML experiment config into `out_dir` and returns the manifest.
/// Relative paths in the config resolve against its directory.
#[pyfunction]
#[pyo3(signature = (config, out_dir, *, seed=None, full_scale=false, snapshot_stride=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: PathBuf,
    out_dir: PathBuf,
    seed: Option<u64>,
    full_scale: bool,
    snapshot_stride: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_file(&config).map_err(to_py)?;
    let base = config.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let base = std::path::absolute(&base).map_err(|e| to_py(Error::io(&base, e)))?;
    let opts = RunOptions {
        seed,
        full_scale,
        snapshot_stride,
    };
    let manifest = py
        .detach(|| execute(&cfg, Some(&base), &out_dir, &opts))
        .map_err(to_py)?;
    json_value(py, &manifest)
}

/// Writes `marginals`, `density-grid` or `lv-predictive` data for a run.
#[pyfunction]
#[pyo3(signature = (run_dir, kind, out, *, resolution=100, axes=(0, 1), fixed=None))]
fn export(
    run_dir: PathBuf,
    kind: &str,
    out: PathBuf,
    resolution: usize,
    axes: (usize, usize),
    fixed: Option<Vec<f64>>,
) -> PyResult<()> {
    let mut req = ExportRequest::new(kind.parse().map_err(to_py)?);
    req.resolution = resolution;
    req.axes = axes;
    req.fixed = fixed;
    export_to_file(&run_dir, &req, &out).map_err(to_py)
}

/// The built-in target catalogue as a list of dicts.
#[pyfunction]
fn list_targets(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    json_value(py, &catalogue())
}

#[pymodule]
fn _eparvi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EparviError", m.py().get_type::<EparviError>())?;
    m.add_class::<PyTarget>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_squared, m)?)?;
    m.add_function(wrap_pyfunction!(avg_nll, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis_hastings_chain, m)?)?;
    m.add_function(wrap_pyfunction!(langevin, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(export, m)?)?;
    m.add_function(wrap_pyfunction!(list_targets, m)?)?;
    Ok(())
}
