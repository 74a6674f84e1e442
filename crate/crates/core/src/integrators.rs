//! Position-update rules, noise perturbation and the Metropolis move filter.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::Target;

/// A step size that is either shared by every dimension or given per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Scalar(f64),
    PerDim(Vec<f64>),
}

impl StepSize {
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        match self {
            StepSize::Scalar(v) => *v,
            StepSize::PerDim(v) => v[k],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            StepSize::Scalar(v) => std::slice::from_ref(v),
            StepSize::PerDim(v) => v,
        }
    }

    fn check(&self, name: &str, dim: usize, ok: impl Fn(f64) -> bool, range: &str) -> Result<()> {
        if let StepSize::PerDim(v) = self {
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "{name} has {} entries for a {dim}-dimensional target",
                    v.len()
                )));
            }
        }
        match self.values().iter().find(|v| !ok(**v)) {
            Some(v) => Err(Error::Config(format!("{name} must be {range}, got {v}"))),
            None => Ok(()),
        }
    }
}

impl From<f64> for StepSize {
    fn from(v: f64) -> Self {
        StepSize::Scalar(v)
    }
}

impl From<Vec<f64>> for StepSize {
    fn from(v: Vec<f64>) -> Self {
        StepSize::PerDim(v)
    }
}

/// How a force is turned into a displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UpdateRule {
    /// `x + τ F`
    Euler { tau: StepSize },
    /// `Δx = F Δt² + Δx_prev`, `x + Δx`
    Verlet { dt2: StepSize },
    /// `Δx = F Δt² + Δx_prev`, `x + τ' Δx`; the undamped `Δx` is carried forward.
    DampedVerlet { dt2: StepSize, tau_prime: StepSize },
}

impl UpdateRule {
    pub fn euler(tau: impl Into<StepSize>) -> Self {
        UpdateRule::Euler { tau: tau.into() }
    }

    pub fn verlet(dt2: impl Into<StepSize>) -> Self {
        UpdateRule::Verlet { dt2: dt2.into() }
    }

    pub fn damped_verlet(dt2: impl Into<StepSize>, tau_prime: impl Into<StepSize>) -> Self {
        UpdateRule::DampedVerlet {
            dt2: dt2.into(),
            tau_prime: tau_prime.into(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self {
            UpdateRule::Euler { tau } => {
                tau.check("tau", dim, |v| v >= 0.0 && v.is_finite(), "finite and >= 0")
            }
            UpdateRule::Verlet { dt2 } => dt2.check("dt2", dim, positive, "finite and > 0"),
            UpdateRule::DampedVerlet { dt2, tau_prime } => {
                dt2.check("dt2", dim, positive, "finite and > 0")?;
                tau_prime.check("tau_prime", dim, |v| v > 0.0 && v <= 1.0, "in (0, 1]")
            }
        }
    }

    /// Returns the new position and the displacement to carry into the next step.
    pub fn apply(&self, x: &[f64], prev_disp: &[f64], force: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            UpdateRule::Euler { tau } => {
                let new_x = euler_step(x, force, tau)?;
                Ok((new_x, vec![0.0; x.len()]))
            }
            UpdateRule::Verlet { dt2 } => verlet_step(x, prev_disp, force, dt2),
            UpdateRule::DampedVerlet { dt2, tau_prime } => {
                damped_verlet_step(x, prev_disp, force, dt2, tau_prime)
            }
        }
    }
}

fn check_inputs(vectors: &[&[f64]]) -> Result<()> {
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Integrator("non-finite position, displacement or force".into()));
    }
    Ok(())
}

/// `x + τ F`
pub fn euler_step(x: &[f64], force: &[f64], tau: &StepSize) -> Result<Vec<f64>> {
    check_inputs(&[x, force])?;
    Ok(x.iter()
        .zip(force)
        .enumerate()
        .map(|(k, (xi, fi))| xi + tau.get(k) * fi)
        .collect())
}

/// Unit-mass Verlet step. Returns `(x + Δx, Δx)` with `Δx = F Δt² + Δx_prev`.
pub fn verlet_step(
    x: &[f64],
    prev_disp: &[f64],
    force: &[f64],
    dt2: &StepSize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(&[x, prev_disp, force])?;
    let disp: Vec<f64> = force
        .iter()
        .zip(prev_disp)
        .enumerate()
        .map(|(k, (f, p))| f * dt2.get(k) + p)
        .collect();
    let new_x = x.iter().zip(&disp).map(|(a, b)| a + b).collect();
    Ok((new_x, disp))
}

/// Verlet step whose position update is scaled by `τ'`. The returned
/// displacement is the undamped one.
pub fn damped_verlet_step(
    x: &[f64],
    prev_disp: &[f64],
    force: &[f64],
    dt2: &StepSize,
    tau_prime: &StepSize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(&[x, prev_disp, force])?;
    let disp: Vec<f64> = force
        .iter()
        .zip(prev_disp)
        .enumerate()
        .map(|(k, (f, p))| f * dt2.get(k) + p)
        .collect();
    let new_x = x
        .iter()
        .zip(&disp)
        .enumerate()
        .map(|(k, (a, b))| a + tau_prime.get(k) * b)
        .collect();
    Ok((new_x, disp))
}

/// Isotropic Gaussian noise added every `period_k` iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationPolicy {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "one")]
    pub period_k: usize,
}

fn one() -> usize {
    1
}

impl Default for PerturbationPolicy {
    fn default() -> Self {
        PerturbationPolicy {
            sigma: 0.0,
            period_k: 1,
        }
    }
}

impl PerturbationPolicy {
    pub fn new(sigma: f64, period_k: usize) -> Self {
        PerturbationPolicy { sigma, period_k }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("perturbation sigma must be >= 0, got {}", self.sigma)));
        }
        if self.period_k == 0 {
            return Err(Error::Config("perturbation period_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, step_index: usize) -> bool {
        self.sigma > 0.0 && self.period_k > 0 && step_index % self.period_k == 0
    }
}

/// Adds `N(0, σ²)` noise to each component on active steps.
pub fn perturb<R: Rng + ?Sized>(
    x: &[f64],
    policy: &PerturbationPolicy,
    step_index: usize,
    rng: &mut R,
) -> Vec<f64> {
    if !policy.is_active(step_index) {
        return x.to_vec();
    }
    x.iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + policy.sigma * z
        })
        .collect()
}

/// Accepts `proposed` with probability `min(1, p(proposed) / p(old))`.
///
/// The ratio is formed in log space so that targets with very small densities
/// are still compared correctly. An old point with zero density always moves;
/// when both densities are zero the old point is kept.
pub fn mh_filter<R: Rng + ?Sized>(
    old: &[f64],
    proposed: &[f64],
    target: &dyn Target,
    rng: &mut R,
) -> (Vec<f64>, bool) {
    let lp_new = target.log_density(proposed);
    let lp_old = target.log_density(old);
    let accept = if lp_new.is_nan() || lp_new == f64::NEG_INFINITY {
        false
    } else if lp_old.is_nan() || lp_old == f64::NEG_INFINITY || lp_new >= lp_old {
        true
    } else {
        rng.random::<f64>() < (lp_new - lp_old).exp()
    };
    if accept {
        (proposed.to_vec(), true)
    } else {
        (old.to_vec(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::Scale;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdNormal1;

    impl Target for StdNormal1 {
        fn id(&self) -> &str {
            "std-normal"
        }
        fn dim(&self) -> usize {
            1
        }
        fn scale(&self) -> Scale {
            Scale::Density
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
    }

    /// Density 1 at 0, 0.5 at 1, 0 at 2.
    struct Steps;

    impl Target for Steps {
        fn id(&self) -> &str {
            "steps"
        }
        fn dim(&self) -> usize {
            1
        }
        fn scale(&self) -> Scale {
            Scale::Density
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            match x[0] as i64 {
                0 => 0.0,
                1 => 0.5f64.ln(),
                _ => f64::NEG_INFINITY,
            }
        }
    }

    #[test]
    fn euler_examples() {
        let tau = StepSize::Scalar(0.1);
        assert_eq!(euler_step(&[0.0, 0.0], &[1.0, 0.0], &tau).unwrap(), vec![0.1, 0.0]);
        assert_eq!(euler_step(&[0.3, 0.4], &[0.0, 0.0], &tau).unwrap(), vec![0.3, 0.4]);
        assert_eq!(
            euler_step(&[0.3, 0.4], &[5.0, -2.0], &StepSize::Scalar(0.0)).unwrap(),
            vec![0.3, 0.4]
        );
        assert!(euler_step(&[f64::NAN], &[1.0], &tau).is_err());
        assert!(euler_step(&[0.0], &[1.0, 2.0], &tau).is_err());
    }

    #[test]
    fn per_dimension_steps() {
        let tau = StepSize::PerDim(vec![1.0, 0.01]);
        assert_eq!(euler_step(&[0.0, 0.0], &[1.0, 1.0], &tau).unwrap(), vec![1.0, 0.01]);
        assert!(UpdateRule::Euler { tau }.validate(3).is_err());
    }

    #[test]
    fn verlet_examples() {
        let (x, d) = verlet_step(&[1.0], &[0.1], &[0.0], &StepSize::Scalar(1.0)).unwrap();
        assert_eq!((x[0], d[0]), (1.1, 0.1));
        let (x, _) = verlet_step(&[2.0], &[0.0], &[1.0], &StepSize::Scalar(0.01)).unwrap();
        assert_eq!(x[0], 2.0 + 0.01);
    }

    #[test]
    fn verlet_constant_force_is_quadratic() {
        // From rest, after n steps the position is x0 + F Δt² n(n+1)/2.
        let (f, dt2) = (0.5, 0.01);
        let mut x = vec![0.0];
        let mut d = vec![0.0];
        for n in 1..=50usize {
            let (nx, nd) = verlet_step(&x, &d, &[f], &StepSize::Scalar(dt2)).unwrap();
            x = nx;
            d = nd;
            let exact = f * dt2 * (n * (n + 1)) as f64 / 2.0;
            assert!((x[0] - exact).abs() < 1e-12 * exact.max(1.0));
        }
        // Uniform acceleration a over time t = nΔt gives a t² / 2 in the continuum.
        let n = 50.0;
        let continuum = f * dt2 * n * n / 2.0;
        assert!(((x[0] - continuum) / continuum).abs() < 1.0 / n + 1e-12);
    }

    #[test]
    fn damped_verlet_examples() {
        let s = |v| StepSize::Scalar(v);
        let (x, d) = damped_verlet_step(&[1.0], &[0.1], &[0.0], &s(1.0), &s(0.5)).unwrap();
        assert_eq!(x[0], 1.05);
        assert_eq!(d[0], 0.1);
        let (x, _) = damped_verlet_step(&[1.0], &[0.1], &[3.0], &s(1.0), &s(1e-300)).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-200);
    }

    #[test]
    fn rule_validation() {
        assert!(UpdateRule::euler(-0.1).validate(2).is_err());
        assert!(UpdateRule::verlet(0.0).validate(2).is_err());
        assert!(UpdateRule::damped_verlet(0.1, 1.5).validate(2).is_err());
        assert!(UpdateRule::damped_verlet(0.1, 1.0).validate(2).is_ok());
    }

    #[test]
    fn rule_parses_from_toml() {
        let r: UpdateRule = toml::from_str("kind = \"damped-verlet\"\ndt2 = 0.01\ntau_prime = [0.5, 1.0]").unwrap();
        assert_eq!(r, UpdateRule::damped_verlet(0.01, vec![0.5, 1.0]));
    }

    #[test]
    fn perturbation_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [1.0, 2.0];
        assert_eq!(perturb(&x, &PerturbationPolicy::new(0.0, 1), 0, &mut rng), x.to_vec());
        assert_eq!(perturb(&x, &PerturbationPolicy::new(1.0, 5), 3, &mut rng), x.to_vec());
        assert_ne!(perturb(&x, &PerturbationPolicy::new(1.0, 5), 10, &mut rng), x.to_vec());
        let policy = PerturbationPolicy::new(1.0, 1);
        let a = perturb(&x, &policy, 0, &mut ChaCha8Rng::seed_from_u64(7));
        let b = perturb(&x, &policy, 0, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_is_mean_preserving() {
        let sigma = 0.7;
        let policy = PerturbationPolicy::new(sigma, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut sum = [0.0; 2];
        for i in 0..n {
            let y = perturb(&[0.0, 0.0], &policy, i, &mut rng);
            sum[0] += y[0];
            sum[1] += y[1];
        }
        for s in sum {
            assert!((s / n as f64).abs() < 3.0 * sigma / 100.0);
        }
    }

    #[test]
    fn mh_filter_deterministic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(mh_filter(&[1.0], &[0.0], &Steps, &mut rng).1);
            assert!(!mh_filter(&[0.0], &[2.0], &Steps, &mut rng).1);
            assert!(mh_filter(&[2.0], &[1.0], &Steps, &mut rng).1);
            assert_eq!(mh_filter(&[2.0], &[3.0], &Steps, &mut rng), (vec![2.0], false));
        }
    }

    #[test]
    fn mh_filter_half_ratio_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let accepted = (0..n).filter(|_| mh_filter(&[0.0], &[1.0], &Steps, &mut rng).1).count();
        let rate = accepted as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn mh_filter_targets_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut x = vec![0.0];
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let proposal = vec![x[0] + 2.0 * z];
            x = mh_filter(&x, &proposal, &StdNormal1, &mut rng).0;
            s1 += x[0];
            s2 += x[0] * x[0];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, 3)
    }

    proptest! {
        #[test]
        fn damped_with_unit_factor_equals_verlet(x in vec3(), p in vec3(), f in vec3(), dt2 in 1e-4..1.0f64) {
            let s = StepSize::Scalar(dt2);
            let a = verlet_step(&x, &p, &f, &s).unwrap();
            let b = damped_verlet_step(&x, &p, &f, &s, &StepSize::Scalar(1.0)).unwrap();
            for (u, v) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }

        #[test]
        fn euler_from_rest_equals_verlet(x in vec3(), f in vec3(), dt2 in 1e-4..1.0f64) {
            let s = StepSize::Scalar(dt2);
            let e = euler_step(&x, &f, &s).unwrap();
            let (v, _) = verlet_step(&x, &[0.0; 3], &f, &s).unwrap();
            prop_assert_eq!(e, v);
        }

        #[test]
        fn off_cycle_perturbation_is_identity(x in vec3(), k in 2usize..20, step in 0usize..1000, seed: u64) {
            prop_assume!(step % k != 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert_eq!(perturb(&x, &PerturbationPolicy::new(1.0, k), step, &mut rng), x);
        }
    }
}
