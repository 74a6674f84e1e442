//! Reference samplers: random-walk Metropolis-Hastings and Langevin Monte
//! Carlo with a decaying step size.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{self, StreamRng};
use crate::targets::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhConfig {
    /// Total chain length, burn-in included.
    pub n_samples: usize,
    /// Gaussian proposal std, one entry per dimension or a single shared value.
    #[serde(default = "unit_std")]
    pub proposal_std: Vec<f64>,
    /// Starting point; experiment runs fill in the mesh centre when empty.
    #[serde(default)]
    pub init: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Leading fraction of the chain that is dropped.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Keep every `thin`-th post burn-in state.
    #[serde(default = "one")]
    pub thin: usize,
}

fn unit_std() -> Vec<f64> {
    vec![1.0]
}

fn default_burn_in() -> f64 {
    0.2
}

fn one() -> usize {
    1
}

impl MhConfig {
    pub fn new(n_samples: usize, init: Vec<f64>) -> Self {
        MhConfig {
            n_samples,
            proposal_std: unit_std(),
            init,
            seed: 0,
            burn_in: default_burn_in(),
            thin: 1,
        }
    }

    fn std_at(&self, k: usize) -> f64 {
        if self.proposal_std.len() == 1 {
            self.proposal_std[0]
        } else {
            self.proposal_std[k]
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("MH needs n_samples >= 1".into()));
        }
        if self.init.len() != dim {
            return Err(Error::Config(format!(
                "MH init has {} entries for a {dim}-dimensional target",
                self.init.len()
            )));
        }
        if self.proposal_std.len() != 1 && self.proposal_std.len() != dim {
            return Err(Error::Config(format!(
                "proposal_std needs 1 or {dim} entries, got {}",
                self.proposal_std.len()
            )));
        }
        if let Some(s) = self.proposal_std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("proposal_std must be > 0, got {s}")));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!("burn_in must be in [0, 1), got {}", self.burn_in)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhChain {
    /// Retained states after burn-in and thinning.
    pub samples: Points,
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

/// Random-walk Metropolis-Hastings with symmetric Gaussian proposals,
/// accepting with probability `min(1, p(x') / p(x))` (evaluated in log space).
pub fn metropolis_hastings(target: &dyn Target, cfg: &MhConfig) -> Result<MhChain> {
    let dim = target.dim();
    cfg.validate(dim)?;
    let started = Instant::now();
    let mut rng = rng::stream(cfg.seed, &[rng::TAG_MH_CHAIN]);
    let mut x = cfg.init.clone();
    let mut lp = target.log_density(&x);
    let mut warnings = Vec::new();
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        warnings.push("chain starts at a point of zero density".to_string());
    }
    let burn = (cfg.burn_in * cfg.n_samples as f64).floor() as usize;
    let mut kept = Vec::with_capacity((cfg.n_samples - burn) * dim / cfg.thin + dim);
    let mut accepted = 0usize;
    let mut proposal = vec![0.0; dim];
    for step in 0..cfg.n_samples {
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            proposal[k] = x[k] + cfg.std_at(k) * z;
        }
        let lp_new = target.log_density(&proposal);
        let u: f64 = rng.random();
        let accept = if lp_new == f64::NEG_INFINITY || lp_new.is_nan() {
            false
        } else if lp == f64::NEG_INFINITY || lp.is_nan() || lp_new >= lp {
            true
        } else {
            u < (lp_new - lp).exp()
        };
        if accept {
            x.copy_from_slice(&proposal);
            lp = lp_new;
            accepted += 1;
        }
        if step >= burn && (step - burn) % cfg.thin == 0 {
            kept.extend_from_slice(&x);
        }
    }
    if accepted == 0 {
        warnings.push("no proposal was accepted; the chain is stuck".to_string());
    }
    Ok(MhChain {
        samples: Points::new(dim, kept)?,
        acceptance_rate: accepted as f64 / cfg.n_samples as f64,
        warnings,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmcConfig {
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_a() -> f64 {
    0.01
}

fn default_b() -> f64 {
    1.0
}

fn default_c() -> f64 {
    0.55
}

impl LmcConfig {
    pub fn new(iterations: usize) -> Self {
        LmcConfig {
            a: default_a(),
            b: default_b(),
            c: default_c(),
            iterations,
            seed: 0,
        }
    }

    /// `ε_t = a (b + t)^(-c)`
    pub fn step_size(&self, t: usize) -> f64 {
        self.a * (self.b + t as f64).powf(-self.c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.b >= 0.0) || !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::Config(format!(
                "LMC schedule needs a > 0, b >= 0, 0 < c < 1; got a={}, b={}, c={}",
                self.a, self.b, self.c
            )));
        }
        if self.b == 0.0 {
            // (0 + 0)^(-c) is infinite.
            return Err(Error::Config("LMC schedule needs b > 0 for a finite first step".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("LMC needs iterations >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcIteration {
    pub iteration: usize,
    pub step_size: f64,
    pub mean: Vec<f64>,
    pub wall_time_s: f64,
}

/// Evolves each particle independently by
/// `x ← x + ε_t ∇log p(x) + √(2 ε_t) z`, with its own seeded stream.
pub fn langevin_evolve(
    target: &dyn Target,
    init: &Points,
    cfg: &LmcConfig,
) -> Result<(Points, Vec<LmcIteration>)> {
    cfg.validate()?;
    let dim = target.dim();
    if init.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: init.dim(),
        });
    }
    let probe = init.rows().next().map(|r| r.to_vec()).unwrap_or_else(|| vec![0.0; dim]);
    if target.gradient(&probe).is_none() {
        return Err(Error::Unsupported {
            target: target.id().to_string(),
            what: "gradient",
        });
    }
    let mut positions = init.clone();
    let mut streams: Vec<StreamRng> = (0..init.len())
        .map(|i| rng::stream(cfg.seed, &[rng::TAG_LANGEVIN, i as u64]))
        .collect();
    let mut record = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let eps = cfg.step_size(t);
        let noise = (2.0 * eps).sqrt();
        positions
            .as_mut_slice()
            .par_chunks_mut(dim)
            .zip(streams.par_iter_mut())
            .try_for_each(|(x, r)| -> Result<()> {
                let g = target.gradient(x).ok_or(Error::Unsupported {
                    target: target.id().to_string(),
                    what: "gradient",
                })?;
                for k in 0..dim {
                    let z: f64 = StandardNormal.sample(r);
                    x[k] += eps * g[k] + noise * z;
                }
                Ok(())
            })?;
        record.push(LmcIteration {
            iteration: t + 1,
            step_size: eps,
            mean: positions.mean(),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((positions, record))
}
