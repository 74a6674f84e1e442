use super::{Scale, Target};
use crate::error::{Error, Result};

/// Hudson Bay Company hare and lynx pelt counts (thousands), 1900 to 1920.
pub const LYNX_HARE_CSV: &str = include_str!("../../data/lynx_hare.csv");

/// Observations, known initial state, noise level and prior box of the
/// predator-prey model.
#[derive(Debug, Clone, PartialEq)]
pub struct LvModel {
    /// Observation times in years since the first record.
    pub times: Vec<f64>,
    pub hare: Vec<f64>,
    pub lynx: Vec<f64>,
    pub x0: f64,
    pub y0: f64,
    pub sigma: f64,
    /// Uniform prior support for (a, b, c, d).
    pub prior: [(f64, f64); 4],
    /// RK4 step in years.
    pub step: f64,
}

impl LvModel {
    pub const DEFAULT_X0: f64 = 33.956;
    pub const DEFAULT_Y0: f64 = 5.933;
    pub const DEFAULT_SIGMA: f64 = 0.25;
    pub const DEFAULT_PRIOR: [(f64, f64); 4] =
        [(0.001, 1.0), (0.001, 0.05), (0.001, 0.05), (0.001, 1.0)];
    pub const DEFAULT_STEP: f64 = 0.01;

    /// Reads a `year,hare,lynx` CSV. Times are measured from the first year.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
        };
        let (iy, ih, il) = (col("year")?, col("hare")?, col("lynx")?);
        let (mut years, mut hare, mut lynx) = (Vec::new(), Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let get = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))
            };
            years.push(get(iy)?);
            hare.push(get(ih)?);
            lynx.push(get(il)?);
        }
        let first = *years
            .first()
            .ok_or_else(|| Error::Data("no observations".into()))?;
        let times = years.iter().map(|y| y - first).collect();
        Self::new(times, hare, lynx)
    }

    /// A model with default initial state, noise, prior and step.
    pub fn new(times: Vec<f64>, hare: Vec<f64>, lynx: Vec<f64>) -> Result<Self> {
        if times.len() != hare.len() || times.len() != lynx.len() || times.is_empty() {
            return Err(Error::Data("times, hare and lynx must have equal, non-zero length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("observation times must be strictly increasing".into()));
        }
        if let Some(v) = hare.iter().chain(&lynx).find(|v| !(**v > 0.0)) {
            return Err(Error::Data(format!("observations must be positive, found {v}")));
        }
        Ok(LvModel {
            times,
            hare,
            lynx,
            x0: Self::DEFAULT_X0,
            y0: Self::DEFAULT_Y0,
            sigma: Self::DEFAULT_SIGMA,
            prior: Self::DEFAULT_PRIOR,
            step: Self::DEFAULT_STEP,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn in_prior(&self, theta: &[f64]) -> bool {
        theta.len() == 4
            && theta
                .iter()
                .zip(&self.prior)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// States at the requested times. `valid` is false on blow-up or when any
/// state at an observation time is not strictly positive; the recorded
/// states stop at the first non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub valid: bool,
}

fn rhs(theta: &[f64], x: f64, y: f64) -> (f64, f64) {
    let (a, b, c, d) = (theta[0], theta[1], theta[2], theta[3]);
    (a * x - b * x * y, c * x * y - d * y)
}

fn rk4(theta: &[f64], x: f64, y: f64, h: f64) -> (f64, f64) {
    let (k1x, k1y) = rhs(theta, x, y);
    let (k2x, k2y) = rhs(theta, x + 0.5 * h * k1x, y + 0.5 * h * k1y);
    let (k3x, k3y) = rhs(theta, x + 0.5 * h * k2x, y + 0.5 * h * k2y);
    let (k4x, k4y) = rhs(theta, x + h * k3x, y + h * k3y);
    (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )
}

/// Integrates `dx/dt = ax - bxy`, `dy/dt = cxy - dy` from `(x0, y0)` at
/// `times[0]` with fixed-step RK4. Each gap between consecutive times is
/// split into `ceil(gap / step)` equal steps so observations are hit exactly.
pub fn lv_simulate(theta: &[f64], model: &LvModel, times: &[f64]) -> Result<Trajectory> {
    if theta.len() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: theta.len(),
        });
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Data("simulation times must be non-empty and ascending".into()));
    }
    if !(model.step > 0.0) {
        return Err(Error::Config(format!("RK4 step must be positive, got {}", model.step)));
    }
    let mut out = Trajectory {
        times: Vec::with_capacity(times.len()),
        x: Vec::with_capacity(times.len()),
        y: Vec::with_capacity(times.len()),
        valid: true,
    };
    let (mut x, mut y) = (model.x0, model.y0);
    let mut t = times[0];
    for &target in times {
        let gap = target - t;
        if gap > 0.0 {
            let n = (gap / model.step - 1e-9).ceil().max(1.0) as usize;
            let h = gap / n as f64;
            for _ in 0..n {
                (x, y) = rk4(theta, x, y, h);
                if !x.is_finite() || !y.is_finite() {
                    out.valid = false;
                    return Ok(out);
                }
            }
        }
        t = target;
        if x <= 0.0 || y <= 0.0 {
            out.valid = false;
        }
        out.times.push(target);
        out.x.push(x);
        out.y.push(y);
    }
    Ok(out)
}

/// Posterior over `(a, b, c, d)` with uniform priors and log-normal
/// observation noise.
#[derive(Debug, Clone)]
pub struct LotkaVolterra {
    model: LvModel,
    /// Terms of the log posterior that do not depend on theta.
    constant: f64,
}

impl LotkaVolterra {
    pub fn new(model: LvModel) -> Self {
        let n = model.len() as f64;
        let prior: f64 = model.prior.iter().map(|(lo, hi)| -(hi - lo).ln()).sum();
        let norm = -2.0 * n * ((2.0 * std::f64::consts::PI).sqrt() * model.sigma).ln();
        let jacobian: f64 = -model
            .hare
            .iter()
            .zip(&model.lynx)
            .map(|(h, l)| h.ln() + l.ln())
            .sum::<f64>();
        LotkaVolterra {
            constant: prior + norm + jacobian,
            model,
        }
    }

    pub fn model(&self) -> &LvModel {
        &self.model
    }

    pub fn simulate(&self, theta: &[f64]) -> Result<Trajectory> {
        lv_simulate(theta, &self.model, &self.model.times)
    }
}

impl Target for LotkaVolterra {
    fn id(&self) -> &str {
        "lotka-volterra"
    }

    fn dim(&self) -> usize {
        4
    }

    fn scale(&self) -> Scale {
        Scale::LogDensity
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.model.in_prior(theta) {
            return f64::NEG_INFINITY;
        }
        let traj = match self.simulate(theta) {
            Ok(t) if t.valid => t,
            _ => return f64::NEG_INFINITY,
        };
        let m = &self.model;
        let sq: f64 = (0..m.len())
            .map(|i| {
                (m.hare[i].ln() - traj.x[i].ln()).powi(2) + (m.lynx[i].ln() - traj.y[i].ln()).powi(2)
            })
            .sum();
        self.constant - sq / (2.0 * m.sigma * m.sigma)
    }

    fn reference_values(&self) -> Vec<(&'static str, f64)> {
        vec![("map_a", 0.539), ("map_b", 0.027), ("map_c", 0.024), ("map_d", 0.795)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    fn model() -> LvModel {
        LvModel::from_csv(LYNX_HARE_CSV).unwrap()
    }

    fn decoupled_error(step: f64) -> f64 {
        let mut m = model();
        m.step = step;
        let theta = [0.4, 0.0, 0.0, 0.7];
        let traj = lv_simulate(&theta, &m, &m.times).unwrap();
        traj.times
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ex = m.x0 * (theta[0] * t).exp();
                let ey = m.y0 * (-theta[3] * t).exp();
                ((traj.x[i] - ex) / ex).abs().max(((traj.y[i] - ey) / ey).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn bundled_data_shape() {
        let m = model();
        assert_eq!(m.len(), 21);
        assert_eq!(m.times[0], 0.0);
        assert_eq!(m.times[20], 20.0);
        assert_eq!((m.hare[0], m.lynx[0]), (30.0, 4.0));
    }

    #[test]
    fn decoupled_case_matches_exponentials() {
        assert!(decoupled_error(0.01) < 1e-6);
    }

    #[test]
    fn halving_step_shows_fourth_order() {
        let ratio = decoupled_error(0.1) / decoupled_error(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn reference_parameters_oscillate_positively() {
        let m = model();
        let traj = lv_simulate(&[0.55, 0.028, 0.024, 0.80], &m, &m.times).unwrap();
        assert!(traj.valid);
        assert_eq!(traj.x.len(), 21);
        assert!(traj.x.iter().chain(&traj.y).all(|v| *v > 0.0));
        // Hare counts rise and fall more than once over twenty years.
        let turns = traj
            .x
            .windows(3)
            .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
            .count();
        assert!(turns >= 2, "turns {turns}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = model();
        let th = [0.5, 0.03, 0.02, 0.7];
        let a = lv_simulate(&th, &m, &m.times).unwrap();
        let b = lv_simulate(&th, &m, &m.times).unwrap();
        assert!(a.x.iter().zip(&b.x).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.y.iter().zip(&b.y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn blow_up_is_flagged_not_raised() {
        let m = model();
        let traj = lv_simulate(&[50.0, 0.0, 0.0, 0.0], &m, &m.times).unwrap();
        assert!(!traj.valid);
    }

    #[test]
    fn outside_prior_is_invalid() {
        let t = LotkaVolterra::new(model());
        assert!(!t.is_valid(&[0.5, 0.06, 0.02, 0.5]));
        assert!(!t.is_valid(&[0.0, 0.02, 0.02, 0.5]));
        assert!(t.is_valid(&[0.55, 0.028, 0.024, 0.80]));
        assert!(t.gradient(&[0.55, 0.028, 0.024, 0.80]).is_none());
    }

    #[test]
    fn log_posterior_matches_direct_formula() {
        let m = model();
        let t = LotkaVolterra::new(m.clone());
        let th = [0.55, 0.028, 0.024, 0.80];
        let traj = lv_simulate(&th, &m, &m.times).unwrap();
        let s2 = 0.25f64 * 0.25;
        let mut lp = -(0.999f64.ln() * 2.0 + 0.049f64.ln() * 2.0);
        for i in 0..21 {
            let lx = (-(m.hare[i].ln() - traj.x[i].ln()).powi(2) / (2.0 * s2)).exp()
                / ((2.0 * std::f64::consts::PI * s2).sqrt() * m.hare[i]);
            let ly = (-(m.lynx[i].ln() - traj.y[i].ln()).powi(2) / (2.0 * s2)).exp()
                / ((2.0 * std::f64::consts::PI * s2).sqrt() * m.lynx[i]);
            lp += lx.ln() + ly.ln();
        }
        assert!((t.log_density(&th) - lp).abs() < 1e-9 * lp.abs().max(1.0));
    }

    fn coarse_argmax(t: &LotkaVolterra) -> usize {
        let grid = build_grid(&LvModel::DEFAULT_PRIOR, &[8, 8, 8, 8]).unwrap();
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in grid.points().rows().enumerate() {
            let v = t.log_density(p);
            if v > best.0 {
                best = (v, i);
            }
        }
        best.1
    }

    #[test]
    fn rescaling_data_slightly_keeps_coarse_argmax() {
        let base = model();
        let eps = 1e-3;
        let mut scaled = base.clone();
        scaled.hare.iter_mut().for_each(|v| *v *= f64::exp(eps));
        scaled.lynx.iter_mut().for_each(|v| *v *= f64::exp(eps));
        let (t0, t1) = (LotkaVolterra::new(base.clone()), LotkaVolterra::new(scaled));
        assert_eq!(coarse_argmax(&t0), coarse_argmax(&t1));

        // The shift is exactly the data constant plus a term linear in the residuals.
        let th = [0.55, 0.028, 0.024, 0.80];
        let traj = lv_simulate(&th, &base, &base.times).unwrap();
        let resid: f64 = (0..21)
            .map(|i| {
                (base.hare[i].ln() - traj.x[i].ln()) + (base.lynx[i].ln() - traj.y[i].ln())
            })
            .sum();
        let s2 = 0.0625;
        let expected = -42.0 * eps - (2.0 * eps * resid + 42.0 * eps * eps) / (2.0 * s2);
        let got = t1.log_density(&th) - t0.log_density(&th);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}
