//! Model constants, density moments and the quadratic Hamiltonian algebra.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Scalar constants of the interbank model.
///
/// `a` mean reversion, `x0` target mean reserve, `sigma` volatility,
/// `alpha` re-injection weight, `gamma` drift damping, `q` borrowing
/// incentive, `epsilon` deviation penalty, `r` discount rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub a: f64,
    pub x0: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub q: f64,
    pub epsilon: f64,
    pub r: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { a: 0.5, x0: 2.0, sigma: 1.0, alpha: 1.0, gamma: 1.0, q: 0.1, epsilon: 0.01, r: 0.5 }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("x0", self.x0),
            ("sigma", self.sigma),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("q", self.q),
            ("epsilon", self.epsilon),
            ("r", self.r),
        ] {
            ensure(v.is_finite(), name, || format!("must be finite, got {v}"))?;
        }
        ensure(self.a >= 0.0, "a", || format!("must be >= 0, got {}", self.a))?;
        ensure(self.x0 > 0.0, "x0", || format!("must be > 0, got {}", self.x0))?;
        ensure(self.sigma > 0.0, "sigma", || format!("must be > 0, got {}", self.sigma))?;
        ensure(self.r > 0.0, "r", || format!("must be > 0, got {}", self.r))?;
        ensure(self.q > 0.0, "q", || format!("must be > 0, got {}", self.q))?;
        ensure(self.epsilon > 0.0, "epsilon", || format!("must be > 0, got {}", self.epsilon))?;
        // Allow a few ulps so that epsilon = q*q typed as a decimal is accepted.
        ensure(self.q * self.q <= self.epsilon * (1.0 + 1e-12), "epsilon", || {
            format!("running cost needs q^2 <= epsilon, got q^2 = {} > {}", self.q * self.q, self.epsilon)
        })?;
        ensure(self.gamma > 0.0 && self.gamma <= 1.0, "gamma", || {
            format!("must lie in (0, 1], got {}", self.gamma)
        })?;
        Ok(())
    }
}

/// Slack allowed above unit mass for grid densities.
pub const MASS_TOLERANCE: f64 = 1e-2;

/// A density sampled at `x_i = i h`, `i = 0..len`, vanishing at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    values: Vec<f64>,
    h: f64,
}

impl DensitySnapshot {
    pub fn new(values: Vec<f64>, h: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("density grid is empty".into()));
        }
        ensure(h > 0.0 && h.is_finite(), "h", || format!("grid step must be > 0, got {h}"))?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("density contains non-finite value {v}")));
        }
        if values[0].abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "density must vanish at the absorbing boundary, got {}",
                values[0]
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v < -1e-10) {
            return Err(Error::InvalidInput(format!("density has negative value {v}")));
        }
        let snap = DensitySnapshot { values, h };
        let mass = snap.total_mass();
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!("density mass {mass} exceeds 1")));
        }
        Ok(snap)
    }

    /// Samples `f` on `n + 1` nodes of `[0, n h]`, forcing the origin to zero.
    pub fn from_fn(f: impl Fn(f64) -> f64, h: f64, n: usize) -> Result<Self> {
        let mut values: Vec<f64> = (0..=n).map(|i| f(i as f64 * h)).collect();
        values[0] = 0.0;
        Self::new(values, h)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn total_mass(&self) -> f64 {
        self.h * self.values.iter().sum::<f64>()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Piecewise-linear interpolant, zero beyond the last node.
    pub fn interpolate(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let s = x / self.h;
        let i = s.floor() as usize;
        if i + 1 >= self.values.len() {
            return if i + 1 == self.values.len() && s == i as f64 { self.values[i] } else { 0.0 };
        }
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Rectangular-rule first moment `h sum x_i m_i`.
pub fn mass_moment(m: &DensitySnapshot) -> f64 {
    row_mean(m.values(), m.h())
}

/// Boundary-flux default rate `sigma^2 (m_1 - m_0) / (2h)`.
pub fn default_rate_moment(m: &DensitySnapshot, sigma: f64) -> f64 {
    row_default_rate(m.values(), m.h(), sigma)
}

pub(crate) fn row_mean(values: &[f64], h: f64) -> f64 {
    h * values.iter().enumerate().map(|(i, v)| i as f64 * h * v).sum::<f64>()
}

pub(crate) fn row_default_rate(values: &[f64], h: f64, sigma: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    sigma * sigma * (values[1] - values[0]) / (2.0 * h)
}

/// Vertex of the Hamiltonian in `p`: `(q+a)(mbar-x) - gamma erate mbar`.
pub fn hamiltonian_vertex(x: f64, mbar: f64, erate: f64, params: &ModelParams) -> f64 {
    (params.q + params.a) * (mbar - x) - params.gamma * erate * mbar
}

/// Offset `psi = (phi^2 - (q^2-eps)(mbar-x)^2) / 2`.
pub fn hamiltonian_offset(phi: f64, x: f64, mbar: f64, params: &ModelParams) -> f64 {
    let d = mbar - x;
    0.5 * (phi * phi - (params.q * params.q - params.epsilon) * d * d)
}

/// Quadratic Hamiltonian `(p - phi)^2 / 2 - psi`.
pub fn hamiltonian(x: f64, mbar: f64, erate: f64, p: f64, params: &ModelParams) -> f64 {
    let phi = hamiltonian_vertex(x, mbar, erate, params);
    let psi = hamiltonian_offset(phi, x, mbar, params);
    0.5 * (p - phi) * (p - phi) - psi
}

/// Minimizing control `-p + q(mbar - x)`.
pub fn optimal_control(x: f64, mbar: f64, p: f64, params: &ModelParams) -> f64 {
    -p + params.q * (mbar - x)
}

/// Controlled drift `xi + a(mbar - x) - gamma erate mbar`.
pub fn controlled_drift(x: f64, mbar: f64, erate: f64, xi: f64, params: &ModelParams) -> f64 {
    xi + params.a * (mbar - x) - params.gamma * erate * mbar
}

/// Running cost `xi^2/2 - q xi (mbar-x) + eps (mbar-x)^2 / 2`.
pub fn running_cost(x: f64, mbar: f64, xi: f64, params: &ModelParams) -> f64 {
    let d = mbar - x;
    0.5 * xi * xi - params.q * xi * d + 0.5 * params.epsilon * d * d
}

/// A nonnegative function of time on the uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    dt: f64,
    values: Vec<f64>,
}

impl RateCurve {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        ensure(dt > 0.0 && dt.is_finite(), "dt", || format!("must be > 0, got {dt}"))?;
        if values.is_empty() {
            return Err(Error::InvalidInput("rate curve is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("rate curve value {v} is not a nonnegative number")));
        }
        Ok(RateCurve { dt, values })
    }

    pub fn zeros(dt: f64, len: usize) -> Result<Self> {
        Self::new(dt, vec![0.0; len.max(1)])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn sup_distance(&self, other: &RateCurve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
