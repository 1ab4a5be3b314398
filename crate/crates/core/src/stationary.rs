//! Closed-form stationary density of the re-injected Fokker-Planck equation
//! and the scalar equation for the stationary default rate.

use crate::error::{ensure, Error, Result};
use crate::quadrature::{integrate, integrate_with_breaks, Tolerance};
use crate::special::gaussian_tail_scaled;

/// Nodes of the cached inner-integral table on `[0, x0]`.
pub const TABLE_NODES: usize = 4096;

const F_TOL: Tolerance = Tolerance { abs: 1e-13, rel: 1e-13, max_intervals: 4000 };
const MOMENT_TOL: Tolerance = Tolerance { abs: 1e-12, rel: 1e-12, max_intervals: 4000 };

/// `F(u) = (1/tau^2) int_{c1-c2}^{c1} exp(y^2/2) int_y^inf exp(-s^2/2) ds dy`
/// with `tau = sqrt(2a)`, `c1 = 2 x0 u / tau`, `c2 = tau x0`.
pub fn f_of_u(u: f64, a: f64, x0: f64) -> Result<f64> {
    ensure(u > 0.0, "u", || format!("must be > 0, got {u}"))?;
    ensure(a > 0.0, "a", || format!("must be > 0, got {a}"))?;
    ensure(x0 > 0.0, "x0", || format!("must be > 0, got {x0}"))?;
    let tau = (2.0 * a).sqrt();
    let c1 = 2.0 * x0 * u / tau;
    let c2 = tau * x0;
    let v = integrate(gaussian_tail_scaled, c1 - c2, c1, F_TOL)?;
    Ok(v / (tau * tau))
}

/// Right-hand side `G(u) = 1/(2u)`.
pub fn g_of_u(u: f64) -> f64 {
    0.5 / u
}

/// Gaussian-tail bounds on `F(u)`, valid for `u > tau^2/2`: (lower, upper).
pub fn f_bounds(u: f64, a: f64, x0: f64) -> Option<(f64, f64)> {
    let tau2 = 2.0 * a;
    if u <= 0.5 * tau2 {
        return None;
    }
    let upper = (2.0 * u / (2.0 * u - tau2)).ln() / tau2;
    let num = tau2 + 4.0 * x0 * x0 * u * u;
    let shifted = 2.0 * x0 * u - tau2 * x0;
    let lower = (num / (tau2 + shifted * shifted)).ln() / (2.0 * tau2);
    Some((lower, upper))
}

/// Upper end of the a-priori bracket for the stationary default rate.
///
/// The logarithmic term enters only when `2 a x0^2 > 1`, where its derivation
/// applies.
pub fn e0_upper_bound(a: f64, x0: f64) -> f64 {
    let s = 2.0 * a * x0 * x0;
    let quadratic = ((1.0 + s) * std::f64::consts::E.powi(2) - 1.0) / (2.0 * x0 * x0);
    if s > 1.0 {
        quadratic.max(2.0 * a / s.ln())
    } else {
        quadratic
    }
}

/// Stationary default rate for unit volatility.
///
/// For `a = 0` this is `1/x0^2`; otherwise the unique root of `F(u) = G(u)`,
/// found by bisection to relative width `tol`.
pub fn solve_e0(a: f64, x0: f64, tol: f64) -> Result<f64> {
    ensure(a >= 0.0 && a.is_finite(), "a", || format!("must be >= 0, got {a}"))?;
    ensure(x0 > 0.0 && x0.is_finite(), "x0", || format!("must be > 0, got {x0}"))?;
    ensure(tol > 0.0, "tol", || format!("must be > 0, got {tol}"))?;
    if a == 0.0 {
        return Ok(1.0 / (x0 * x0));
    }
    let diff = |u: f64| -> Result<f64> { Ok(f_of_u(u, a, x0)? - g_of_u(u)) };

    let mut lo = 1e-14_f64.min(0.5 / (x0 * x0));
    let mut hi = e0_upper_bound(a, x0);
    let mut f_lo = diff(lo)?;
    let mut f_hi = diff(hi)?;
    let mut tries = 0;
    while (f_lo >= 0.0 || f_hi <= 0.0) && tries < 60 {
        if f_lo >= 0.0 {
            lo *= 1e-4;
            f_lo = diff(lo)?;
        }
        if f_hi <= 0.0 {
            hi *= 2.0;
            f_hi = diff(hi)?;
        }
        tries += 1;
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
    }
    // Relative stopping rule: rates span many decades across the parameter range.
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if diff(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Return whichever point of the final bracket has the smallest defect.
    let mid = 0.5 * (lo + hi);
    let mut best = (mid, diff(mid)?.abs());
    for u in [lo, hi] {
        let d = diff(u)?.abs();
        if d < best.1 {
            best = (u, d);
        }
    }
    Ok(best.0)
}

/// Stationary density, evaluated through a cached table of
/// `J(x) = exp(-E(x)) int_0^x exp(E(y)) dy` with `E(y) = a y^2 + k y`.
#[derive(Debug, Clone)]
pub struct StationarySolution {
    a: f64,
    x0: f64,
    sigma: f64,
    /// Rate and reversion expressed for unit volatility.
    unit_a: f64,
    unit_e0: f64,
    slope: f64,
    table_h: f64,
    table: Vec<f64>,
    peak: f64,
}

impl StationarySolution {
    /// Solves for the stationary rate with unit volatility.
    pub fn new(a: f64, x0: f64) -> Result<Self> {
        Self::with_sigma(a, x0, 1.0)
    }

    /// General volatility: the unit-volatility solution at reversion `a/sigma^2`,
    /// with default rate scaled by `sigma^2`.
    pub fn with_sigma(a: f64, x0: f64, sigma: f64) -> Result<Self> {
        ensure(sigma > 0.0 && sigma.is_finite(), "sigma", || format!("must be > 0, got {sigma}"))?;
        let unit_a = a / (sigma * sigma);
        let unit_e0 = solve_e0(unit_a, x0, 1e-15)?;
        Self::build(a, x0, sigma, unit_e0)
    }

    /// Uses a given unit-volatility rate instead of solving for it.
    pub fn with_unit_rate(a: f64, x0: f64, sigma: f64, unit_e0: f64) -> Result<Self> {
        ensure(unit_e0 > 0.0, "e0", || format!("must be > 0, got {unit_e0}"))?;
        Self::build(a, x0, sigma, unit_e0)
    }

    fn build(a: f64, x0: f64, sigma: f64, unit_e0: f64) -> Result<Self> {
        ensure(a >= 0.0, "a", || format!("must be >= 0, got {a}"))?;
        ensure(x0 > 0.0, "x0", || format!("must be > 0, got {x0}"))?;
        let unit_a = a / (sigma * sigma);
        let slope = 2.0 * x0 * (unit_e0 - unit_a);
        let exponent = |y: f64| unit_a * y * y + slope * y;
        let table_h = x0 / TABLE_NODES as f64;
        let mut table = vec![0.0; TABLE_NODES + 1];
        let panel_tol = Tolerance { abs: 1e-17, rel: 1e-15, max_intervals: 50 };
        for j in 0..TABLE_NODES {
            let (xl, xr) = (j as f64 * table_h, (j + 1) as f64 * table_h);
            let er = exponent(xr);
            let panel = integrate(|y| (exponent(y) - er).exp(), xl, xr, panel_tol)?;
            table[j + 1] = table[j] * (exponent(xl) - er).exp() + panel;
        }
        let peak = 2.0 * unit_e0 * table[TABLE_NODES];
        Ok(StationarySolution { a, x0, sigma, unit_a, unit_e0, slope, table_h, table, peak })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Stationary default rate `sigma^2/2 p'(0)`.
    pub fn e0(&self) -> f64 {
        self.sigma * self.sigma * self.unit_e0
    }

    fn inner(&self, x: f64) -> f64 {
        let s = (x / self.table_h).min(TABLE_NODES as f64);
        let j = (s.floor() as usize).min(TABLE_NODES - 1);
        let t = s - j as f64;
        let (xl, xr) = (j as f64 * self.table_h, (j + 1) as f64 * self.table_h);
        let (jl, jr) = (self.table[j], self.table[j + 1]);
        let dl = 1.0 - (2.0 * self.unit_a * xl + self.slope) * jl;
        let dr = 1.0 - (2.0 * self.unit_a * xr + self.slope) * jr;
        let h = self.table_h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * jl
            + (t3 - 2.0 * t2 + t) * h * dl
            + (-2.0 * t3 + 3.0 * t2) * jr
            + (t3 - t2) * h * dr
    }

    /// Density value; rejects negative arguments.
    pub fn density(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::InvalidInput(format!("density evaluated at negative point {x}")));
        }
        Ok(self.pdf(x))
    }

    /// Density value, zero on the negative half-line.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x <= self.x0 {
            2.0 * self.unit_e0 * self.inner(x)
        } else {
            let d = x - self.x0;
            self.peak * (-self.unit_a * d * d - 2.0 * self.x0 * self.unit_e0 * d).exp()
        }
    }

    /// Point beyond which the density is below `exp(-60)` of its value at `x0`.
    pub fn tail_end(&self) -> f64 {
        let b = 2.0 * self.x0 * self.unit_e0;
        let d = if self.unit_a > 0.0 {
            (-b + (b * b + 240.0 * self.unit_a).sqrt()) / (2.0 * self.unit_a)
        } else {
            60.0 / b
        };
        self.x0 + d
    }

    /// Integral of `f(x) p(x)` over the support.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        integrate_with_breaks(|x| f(x) * self.pdf(x), 0.0, self.tail_end(), &[self.x0], MOMENT_TOL)
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.expect(|_| 1.0)
    }

    pub fn mean(&self) -> Result<f64> {
        self.expect(|x| x)
    }

    /// One-sided derivatives at `x0` (left, right).
    pub fn derivative_at_target(&self) -> (f64, f64) {
        let jx = self.table[TABLE_NODES];
        let left = 2.0 * self.unit_e0 * (1.0 - (2.0 * self.unit_a * self.x0 + self.slope) * jx);
        let right = -2.0 * self.x0 * self.unit_e0 * self.peak;
        (left, right)
    }

    /// Tabulated inverse distribution function for sampling.
    pub fn inverse_cdf(&self, nodes: usize) -> InverseCdf {
        let end = self.tail_end();
        let n = nodes.max(16);
        let h = end / n as f64;
        let mut cdf = vec![0.0; n + 1];
        for i in 0..n {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            let m = 0.5 * (a + b);
            cdf[i + 1] = cdf[i] + h * (self.pdf(a) + 4.0 * self.pdf(m) + self.pdf(b)) / 6.0;
        }
        let total = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= total);
        InverseCdf { h, cdf }
    }
}

#[derive(Debug, Clone)]
pub struct InverseCdf {
    h: f64,
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn sample(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        ((i - 1) as f64 + w) * self.h
    }
}
