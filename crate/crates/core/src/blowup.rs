//! Laplace-transform certificate for finite-time breakdown of the
//! re-injected Fokker-Planck equation.

use crate::error::{Error, Result};
use crate::model::DensitySnapshot;
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::stationary::StationarySolution;

/// A density given by a formula on a bounded support.
pub trait AnalyticDensity: Sync {
    fn pdf(&self, x: f64) -> f64;
    fn support(&self) -> (f64, f64);
    /// Points where the density is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Triangle on `(0, 2c)` with mode `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularDensity {
    c: f64,
}

impl TriangularDensity {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter { name: "c", reason: format!("must be > 0, got {c}") });
        }
        Ok(TriangularDensity { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Exact Laplace transform `((1 - exp(-mu c)) / (mu c))^2`.
    pub fn laplace(&self, mu: f64) -> f64 {
        let s = mu * self.c;
        let f = if s.abs() < 1e-8 { 1.0 - 0.5 * s } else { -(-s).exp_m1() / s };
        f * f
    }
}

impl AnalyticDensity for TriangularDensity {
    fn pdf(&self, x: f64) -> f64 {
        let c = self.c;
        if x <= 0.0 || x >= 2.0 * c {
            0.0
        } else if x <= c {
            x / (c * c)
        } else {
            (2.0 * c - x) / (c * c)
        }
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 2.0 * self.c)
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.c]
    }
}

impl AnalyticDensity for StationarySolution {
    fn pdf(&self, x: f64) -> f64 {
        StationarySolution::pdf(self, x)
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.tail_end())
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.x0()]
    }
}

/// Initial data accepted by the certificate.
#[derive(Clone, Copy)]
pub enum InitialDensity<'a> {
    Grid(&'a DensitySnapshot),
    Analytic(&'a dyn AnalyticDensity),
}

/// Rectangular-rule Laplace moment `h sum exp(-mu x_i) p_i`.
pub fn laplace_moment(p: &DensitySnapshot, mu: f64) -> f64 {
    let h = p.h();
    h * p.values().iter().enumerate().map(|(i, v)| (-mu * i as f64 * h).exp() * v).sum::<f64>()
}

/// Laplace transform of an analytic density by adaptive quadrature.
pub fn laplace_transform(p: &dyn AnalyticDensity, mu: f64) -> Result<f64> {
    let (lo, hi) = p.support();
    let tol = Tolerance { abs: 1e-13, rel: 1e-12, max_intervals: 2000 };
    integrate_with_breaks(|x| (-mu * x).exp() * p.pdf(x), lo, hi, &p.breakpoints(), tol)
}

/// Right-hand side `(1 - exp(-mu x0)) / (mu x0)`.
pub fn certificate_threshold(mu: f64, x0: f64) -> f64 {
    -(-mu * x0).exp_m1() / (mu * x0)
}

/// Smallest admissible exponent is strictly above this value.
pub fn exponent_floor(a: f64, x0: f64) -> f64 {
    (2.0 * a * x0).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupCertificate {
    pub mu: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub triggered: bool,
}

impl BlowupCertificate {
    /// Time after which `M(t) >= exp(mu (mu/2 - a x0) t) M(0)` would exceed one.
    pub fn contradiction_time(&self, a: f64, x0: f64) -> f64 {
        let rate = self.mu * (0.5 * self.mu - a * x0);
        (1.0 / self.lhs).ln() / rate
    }

    /// Lower bound `lambda / x0` that the Laplace moment keeps once triggered.
    pub fn moment_floor(&self, x0: f64) -> f64 {
        certificate_threshold(self.mu, x0)
    }
}

/// Evaluates both sides of the blow-up condition for one exponent.
pub fn check_blowup_condition(p0: InitialDensity<'_>, a: f64, x0: f64, mu: f64) -> Result<BlowupCertificate> {
    if !(x0 > 0.0) {
        return Err(Error::InvalidParameter { name: "x0", reason: format!("must be > 0, got {x0}") });
    }
    let bound = exponent_floor(a, x0);
    if !(mu > bound) || !mu.is_finite() {
        return Err(Error::ExponentTooSmall { mu, bound });
    }
    let lhs = match p0 {
        InitialDensity::Grid(p) => laplace_moment(p, mu),
        InitialDensity::Analytic(p) => laplace_transform(p, mu)?,
    };
    let rhs = certificate_threshold(mu, x0);
    Ok(BlowupCertificate { mu, lhs, rhs, triggered: lhs >= rhs })
}

/// Scans a logarithmic grid of exponents in `(floor, 1e3]` and returns the
/// first triggering certificate together with the last one evaluated.
pub fn scan_exponents(
    p0: InitialDensity<'_>,
    a: f64,
    x0: f64,
    points: usize,
) -> Result<(Option<BlowupCertificate>, BlowupCertificate)> {
    let floor = exponent_floor(a, x0);
    let top = 1e3_f64.max(floor * 2.0);
    let start = floor * (1.0 + 1e-6);
    let n = points.max(2);
    let ratio = (top / start).ln() / (n - 1) as f64;
    let mut last = None;
    for k in 0..n {
        let mu = start * (ratio * k as f64).exp();
        let cert = check_blowup_condition(p0, a, x0, mu)?;
        if cert.triggered {
            return Ok((Some(cert), cert));
        }
        last = Some(cert);
    }
    Ok((None, last.expect("at least two exponents")))
}
