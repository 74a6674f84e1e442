use std::f64::consts::PI;

use super::{Scale, Target};

/// Bivariate normal with a full 2x2 covariance.
#[derive(Debug, Clone, Copy)]
struct Normal2 {
    mean: [f64; 2],
    /// Inverse covariance.
    precision: [[f64; 2]; 2],
    log_norm: f64,
}

impl Normal2 {
    fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let precision = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Normal2 {
            mean,
            precision,
            log_norm: -(2.0 * PI).ln() - 0.5 * det.ln(),
        }
    }

    fn centred(&self, x: &[f64]) -> [f64; 2] {
        [x[0] - self.mean[0], x[1] - self.mean[1]]
    }

    /// `P (x - mu)`
    fn whitened(&self, x: &[f64]) -> [f64; 2] {
        let d = self.centred(x);
        let p = &self.precision;
        [p[0][0] * d[0] + p[0][1] * d[1], p[1][0] * d[0] + p[1][1] * d[1]]
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.centred(x);
        let w = self.whitened(x);
        self.log_norm - 0.5 * (d[0] * w[0] + d[1] * w[1])
    }
}

/// `N((0.5, 0.5), 0.05 I)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianUnimodal {
    inner: Normal2,
}

impl Default for GaussianUnimodal {
    fn default() -> Self {
        GaussianUnimodal {
            inner: Normal2::new([0.5, 0.5], [[0.05, 0.0], [0.0, 0.05]]),
        }
    }
}

impl Target for GaussianUnimodal {
    fn id(&self) -> &str {
        "gaussian-unimodal"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_pdf(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let w = self.inner.whitened(x);
        Some(vec![-w[0], -w[1]])
    }

    fn reference_values(&self) -> Vec<(&'static str, f64)> {
        vec![("mean_x0", 0.5), ("mean_x1", 0.5), ("variance", 0.05)]
    }
}

/// `0.7 N(mu1, S1) + 0.3 N(mu2, S2)` with opposite correlations.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBimodal {
    weights: [f64; 2],
    components: [Normal2; 2],
}

impl Default for GaussianBimodal {
    fn default() -> Self {
        GaussianBimodal {
            weights: [0.7, 0.3],
            components: [
                Normal2::new([0.0, 0.0], [[1.0, -0.5], [-0.5, 1.0]]),
                Normal2::new([4.0, 4.0], [[1.0, 0.5], [0.5, 1.0]]),
            ],
        }
    }
}

impl GaussianBimodal {
    pub fn means(&self) -> [[f64; 2]; 2] {
        [self.components[0].mean, self.components[1].mean]
    }

    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    fn component_logs(&self, x: &[f64]) -> [f64; 2] {
        [
            self.weights[0].ln() + self.components[0].log_pdf(x),
            self.weights[1].ln() + self.components[1].log_pdf(x),
        ]
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Target for GaussianBimodal {
    fn id(&self) -> &str {
        "gaussian-bimodal"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let [a, b] = self.component_logs(x);
        log_add_exp(a, b)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let [a, b] = self.component_logs(x);
        let total = log_add_exp(a, b);
        let r = [(a - total).exp(), (b - total).exp()];
        let mut g = vec![0.0; 2];
        for (resp, comp) in r.iter().zip(&self.components) {
            let w = comp.whitened(x);
            g[0] -= resp * w[0];
            g[1] -= resp * w[1];
        }
        Some(g)
    }

    fn reference_values(&self) -> Vec<(&'static str, f64)> {
        vec![("weight_0", 0.7), ("weight_1", 0.3)]
    }
}

/// Unnormalised crescent: `exp{-x1²/2 - (10 x2 + 3 x1² - 3)²/2}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moon;

impl Target for Moon {
    fn id(&self) -> &str {
        "moon"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let u = 10.0 * x[1] + 3.0 * x[0] * x[0] - 3.0;
        -0.5 * x[0] * x[0] - 0.5 * u * u
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let u = 10.0 * x[1] + 3.0 * x[0] * x[0] - 3.0;
        Some(vec![-x[0] - 6.0 * x[0] * u, -10.0 * u])
    }
}

/// Unnormalised ring with two lobes:
/// `exp{-2(|x|² - 3)² + log(e^{-2(x1-2)²} + e^{-2(x2+2)²})}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleBanana;

impl Target for DoubleBanana {
    fn id(&self) -> &str {
        "double-banana"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let s = x[0] * x[0] + x[1] * x[1] - 3.0;
        let a = -2.0 * (x[0] - 2.0).powi(2);
        let b = -2.0 * (x[1] + 2.0).powi(2);
        -2.0 * s * s + log_add_exp(a, b)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let s = x[0] * x[0] + x[1] * x[1] - 3.0;
        let a = -2.0 * (x[0] - 2.0).powi(2);
        let b = -2.0 * (x[1] + 2.0).powi(2);
        let total = log_add_exp(a, b);
        let wa = (a - total).exp();
        let wb = (b - total).exp();
        Some(vec![
            -8.0 * s * x[0] - 4.0 * wa * (x[0] - 2.0),
            -8.0 * s * x[1] - 4.0 * wb * (x[1] + 2.0),
        ])
    }
}

/// Unnormalised sinusoidal ridge: `exp{-((x2 - sin(π x1 / 2)) / 0.4)² / 2}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Wave;

impl Target for Wave {
    fn id(&self) -> &str {
        "wave"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let v = (x[1] - (PI * x[0] / 2.0).sin()) / 0.4;
        -0.5 * v * v
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let v = (x[1] - (PI * x[0] / 2.0).sin()) / 0.4;
        Some(vec![
            v / 0.4 * (PI * x[0] / 2.0).cos() * PI / 2.0,
            -v / 0.4,
        ])
    }
}

/// `N(x2 | 0, σ²) · N(x1 | 0, exp(x2 / 2))`; the second argument of each
/// normal is a variance.
#[derive(Debug, Clone, Copy)]
pub struct NealsFunnel {
    sigma: f64,
}

impl NealsFunnel {
    pub fn new(sigma: f64) -> Self {
        NealsFunnel { sigma }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Variance of `x1` given `x2`.
    pub fn conditional_variance(&self, x2: f64) -> f64 {
        (x2 / 2.0).exp()
    }
}

impl Default for NealsFunnel {
    fn default() -> Self {
        NealsFunnel::new(3.0)
    }
}

impl Target for NealsFunnel {
    fn id(&self) -> &str {
        "neals-funnel"
    }

    fn dim(&self) -> usize {
        2
    }

    fn scale(&self) -> Scale {
        Scale::Density
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let v = self.conditional_variance(x[1]);
        -0.5 * (2.0 * PI * s2).ln() - x[1] * x[1] / (2.0 * s2) - 0.5 * (2.0 * PI * v).ln()
            - x[0] * x[0] / (2.0 * v)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        let inv_v = (-x[1] / 2.0).exp();
        Some(vec![
            -x[0] * inv_v,
            -x[1] / s2 - 0.25 + 0.25 * x[0] * x[0] * inv_v,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::test_util::{fd_gradient, max_rel_err};
    use rand::{Rng, SeedableRng};

    #[test]
    fn unimodal_peak_value() {
        let t = GaussianUnimodal::default();
        let peak = t.density(&[0.5, 0.5]);
        assert!((peak - 1.0 / (2.0 * PI * 0.05)).abs() < 1e-12);
        assert!((peak - 3.1831).abs() < 1e-4);
    }

    #[test]
    fn unimodal_is_isotropic() {
        let t = GaussianUnimodal::default();
        // 0.5 + a and 0.5 - a round differently, so compare to a few ulps.
        for a in [0.01, 0.1, 0.3, 0.7] {
            let (p, q) = (t.density(&[0.5 + a, 0.5]), t.density(&[0.5 - a, 0.5]));
            assert!((p - q).abs() <= 1e-13 * p);
            let (p, q) = (t.density(&[0.5, 0.5 + a]), t.density(&[0.5 + a, 0.5]));
            assert!((p - q).abs() <= 1e-13 * p);
        }
    }

    #[test]
    fn unimodal_far_tail_vanishes() {
        assert!(GaussianUnimodal::default().density(&[10.0, 10.0]) < 1e-100);
    }

    #[test]
    fn bimodal_integrates_to_one() {
        // Trapezoid rule over [-8, 12]^2.
        let t = GaussianBimodal::default();
        let n = 801;
        let (lo, hi) = (-8.0, 12.0);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            for j in 0..n {
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                let x = [lo + i as f64 * h, lo + j as f64 * h];
                total += wi * wj * t.density(&x);
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn bimodal_major_mode_is_higher() {
        let t = GaussianBimodal::default();
        assert!(t.density(&[0.0, 0.0]) > t.density(&[4.0, 4.0]));
        for c in &t.components {
            let p = c.precision;
            let det_inv = p[0][0] * p[1][1] - p[0][1] * p[1][0];
            assert!((1.0 / det_inv - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn moon_crest() {
        assert_eq!(Moon.log_density(&[0.0, 0.3]), -0.0);
        assert!((Moon.density(&[0.0, 0.3]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wave_crest() {
        for x1 in [-2.5, -1.0, 0.0, 0.3, 1.7] {
            let x = [x1, (PI * x1 / 2.0).sin()];
            assert_eq!(Wave.density(&x), 1.0);
        }
    }

    #[test]
    fn double_banana_argmax_near_ring() {
        let n = 200;
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in 0..n {
            for j in 0..n {
                let x = [
                    -3.0 + 6.0 * i as f64 / (n - 1) as f64,
                    -3.0 + 6.0 * j as f64 / (n - 1) as f64,
                ];
                let v = DoubleBanana.log_density(&x);
                if v > best.0 {
                    best = (v, x);
                }
            }
        }
        let r2 = best.1[0].powi(2) + best.1[1].powi(2);
        assert!((r2 - 3.0).abs() < 0.3, "argmax {:?} has |x|^2 = {r2}", best.1);
    }

    #[test]
    fn funnel_log_density_at_origin() {
        let t = NealsFunnel::default();
        let expected = -0.5 * (2.0 * PI * 9.0).ln() - 0.5 * (2.0 * PI).ln();
        assert!((t.log_density(&[0.0, 0.0]) - expected).abs() < 1e-14);
        assert!((t.log_density(&[0.0, 0.0]) + 2.936).abs() < 1e-3);
        assert!((t.conditional_variance(2.0) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn funnel_marginal_of_x2() {
        // Integrate x1 out by Simpson's rule; the result must be N(x2 | 0, 9).
        let t = NealsFunnel::default();
        for x2 in [-2.0, 0.0, 2.0] {
            let sd = t.conditional_variance(x2).sqrt();
            let (lo, hi) = (-14.0 * sd, 14.0 * sd);
            let n = 4000;
            let h = (hi - lo) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * t.density(&[lo + i as f64 * h, x2]);
            }
            s *= h / 3.0;
            let expected = (-x2 * x2 / 18.0).exp() / (2.0 * PI * 9.0).sqrt();
            assert!((s - expected).abs() < 1e-6, "x2={x2}: {s} vs {expected}");
        }
    }

    #[test]
    fn toy_densities_are_non_negative() {
        let targets: Vec<Box<dyn Target>> = vec![
            Box::new(GaussianUnimodal::default()),
            Box::new(GaussianBimodal::default()),
            Box::new(Moon),
            Box::new(DoubleBanana),
            Box::new(Wave),
            Box::new(NealsFunnel::default()),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for t in &targets {
            for _ in 0..10_000 {
                let x = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
                let p = t.density(&x);
                assert!(p >= 0.0 && p.is_finite(), "{} at {x:?}: {p}", t.id());
            }
        }
    }

    #[test]
    fn toy_gradients_match_finite_differences() {
        let targets: Vec<Box<dyn Target>> = vec![
            Box::new(GaussianUnimodal::default()),
            Box::new(GaussianBimodal::default()),
            Box::new(Moon),
            Box::new(DoubleBanana),
            Box::new(Wave),
            Box::new(NealsFunnel::default()),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for t in &targets {
            for _ in 0..20 {
                let x = [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)];
                let g = t.gradient(&x).unwrap();
                let fd = fd_gradient(t.as_ref(), &x, 1e-5);
                let err = max_rel_err(&g, &fd);
                assert!(err < 1e-4, "{} at {x:?}: {g:?} vs {fd:?}", t.id());
            }
        }
    }
}
