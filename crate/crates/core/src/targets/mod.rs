//! Target densities from the benchmark suite.

mod blr;
mod lv;
mod toys;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blr::{accuracy as blr_accuracy, BlrDataset, BlrPosterior, IRIS_CSV};
pub use lv::{lv_simulate, LotkaVolterra, LvModel, Trajectory, LYNX_HARE_CSV};
pub use toys::{DoubleBanana, GaussianBimodal, GaussianUnimodal, Moon, NealsFunnel, Wave};

/// Values below this are treated as exactly zero density.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// The representation a target is naturally evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Density,
    LogDensity,
}

/// A queryable, possibly unnormalised, density.
///
/// Implementations must be pure: equal inputs give bit-identical outputs.
pub trait Target: Send + Sync {
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn scale(&self) -> Scale;

    /// Log of the (unnormalised) density; `-inf` where the target is invalid.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Whether the density is defined at `x`.
    fn is_valid(&self, x: &[f64]) -> bool {
        self.log_density(x) != f64::NEG_INFINITY
    }

    /// Density, flushed to zero below [`DENSITY_FLOOR`] and at invalid points.
    fn density(&self, x: &[f64]) -> f64 {
        let v = self.log_density(x).exp();
        if v.is_nan() || v < DENSITY_FLOOR {
            0.0
        } else {
            v
        }
    }

    /// Gradient of the log density, when available.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Named reference values for checks (e.g. known modes).
    fn reference_values(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

/// Serializable description of a built-in target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    GaussianUnimodal,
    GaussianBimodal,
    Moon,
    DoubleBanana,
    Wave,
    NealsFunnel {
        #[serde(default = "default_funnel_sigma")]
        sigma: f64,
    },
    Blr {
        /// Iris-style CSV; the bundled copy is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        split_seed: u64,
    },
    LotkaVolterra {
        /// CSV with columns year, hare, lynx; the bundled copy is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
}

fn default_funnel_sigma() -> f64 {
    3.0
}

fn default_alpha() -> f64 {
    1.0
}

/// One entry of the target catalogue.
#[derive(Debug, Clone, Serialize)]
pub struct TargetInfo {
    pub id: &'static str,
    pub dim: usize,
    pub scale: Scale,
    pub has_gradient: bool,
    pub params: Vec<ParamInfo>,
    pub description: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub default: String,
}

fn param(name: &'static str, kind: &'static str, default: impl ToString) -> ParamInfo {
    ParamInfo {
        name,
        kind,
        default: default.to_string(),
    }
}

/// Every built-in target, in a fixed order.
pub fn catalogue() -> Vec<TargetInfo> {
    vec![
        TargetInfo {
            id: "gaussian-unimodal",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![],
            description: "N((0.5, 0.5), 0.05 I)",
        },
        TargetInfo {
            id: "gaussian-bimodal",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![],
            description: "0.7 N((0,0), [[1,-0.5],[-0.5,1]]) + 0.3 N((4,4), [[1,0.5],[0.5,1]])",
        },
        TargetInfo {
            id: "moon",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![],
            description: "exp{-x1^2/2 - (10 x2 + 3 x1^2 - 3)^2 / 2}, unnormalised",
        },
        TargetInfo {
            id: "double-banana",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![],
            description: "exp{-2 (|x|^2 - 3)^2 + log(e^{-2(x1-2)^2} + e^{-2(x2+2)^2})}, unnormalised",
        },
        TargetInfo {
            id: "wave",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![],
            description: "exp{-((x2 - sin(pi x1 / 2)) / 0.4)^2 / 2}, unnormalised",
        },
        TargetInfo {
            id: "neals-funnel",
            dim: 2,
            scale: Scale::Density,
            has_gradient: true,
            params: vec![param("sigma", "float", default_funnel_sigma())],
            description: "N(x2 | 0, sigma^2) N(x1 | 0, exp(x2 / 2))",
        },
        TargetInfo {
            id: "blr",
            dim: 4,
            scale: Scale::LogDensity,
            has_gradient: true,
            params: vec![
                param("data", "path", "bundled iris.csv"),
                param("alpha", "float", default_alpha()),
                param("split_seed", "integer", 0),
            ],
            description: "Bayesian logistic regression posterior on the Iris training split, N(0, alpha I) prior",
        },
        TargetInfo {
            id: "lotka-volterra",
            dim: 4,
            scale: Scale::LogDensity,
            has_gradient: false,
            params: vec![param("data", "path", "bundled lynx_hare.csv")],
            description: "Lotka-Volterra (a, b, c, d) posterior, uniform priors, log-normal observation noise",
        },
    ]
}

impl TargetSpec {
    pub fn id(&self) -> &'static str {
        match self {
            TargetSpec::GaussianUnimodal => "gaussian-unimodal",
            TargetSpec::GaussianBimodal => "gaussian-bimodal",
            TargetSpec::Moon => "moon",
            TargetSpec::DoubleBanana => "double-banana",
            TargetSpec::Wave => "wave",
            TargetSpec::NealsFunnel { .. } => "neals-funnel",
            TargetSpec::Blr { .. } => "blr",
            TargetSpec::LotkaVolterra { .. } => "lotka-volterra",
        }
    }

    /// A spec with default parameters for a catalogue id.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "gaussian-unimodal" => TargetSpec::GaussianUnimodal,
            "gaussian-bimodal" => TargetSpec::GaussianBimodal,
            "moon" => TargetSpec::Moon,
            "double-banana" => TargetSpec::DoubleBanana,
            "wave" => TargetSpec::Wave,
            "neals-funnel" => TargetSpec::NealsFunnel {
                sigma: default_funnel_sigma(),
            },
            "blr" => TargetSpec::Blr {
                data: None,
                alpha: default_alpha(),
                split_seed: 0,
            },
            "lotka-volterra" => TargetSpec::LotkaVolterra { data: None },
            other => return Err(Error::Config(format!("unknown target `{other}`"))),
        })
    }

    /// Instantiates the target. Relative data paths resolve against `base`.
    pub fn build(&self, base: Option<&std::path::Path>) -> Result<Box<dyn Target>> {
        let resolve = |p: &PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        let read = |p: &PathBuf| {
            let path = resolve(p);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        Ok(match self {
            TargetSpec::GaussianUnimodal => Box::new(GaussianUnimodal::default()),
            TargetSpec::GaussianBimodal => Box::new(GaussianBimodal::default()),
            TargetSpec::Moon => Box::new(Moon),
            TargetSpec::DoubleBanana => Box::new(DoubleBanana),
            TargetSpec::Wave => Box::new(Wave),
            TargetSpec::NealsFunnel { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!("funnel sigma must be positive, got {sigma}")));
                }
                Box::new(NealsFunnel::new(*sigma))
            }
            TargetSpec::Blr {
                data,
                alpha,
                split_seed,
            } => {
                if !(*alpha > 0.0) {
                    return Err(Error::Config(format!("blr alpha must be positive, got {alpha}")));
                }
                let text = match data {
                    Some(p) => read(p)?,
                    None => IRIS_CSV.to_string(),
                };
                let dataset = BlrDataset::from_csv(&text)?;
                let (train, _) = dataset.split(0.7, *split_seed);
                Box::new(BlrPosterior::new(train, *alpha))
            }
            TargetSpec::LotkaVolterra { data } => {
                let text = match data {
                    Some(p) => read(p)?,
                    None => LYNX_HARE_CSV.to_string(),
                };
                Box::new(LotkaVolterra::new(LvModel::from_csv(&text)?))
            }
        })
    }
}
