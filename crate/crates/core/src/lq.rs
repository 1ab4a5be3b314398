//! Explicit stationary equilibrium for the linear-quadratic structure: a
//! quadratic value function, the compatible drift damping, the matching exit
//! cost, and the closed-form density with strengthened mean reversion.

use crate::error::{ensure, Error, Result};
use crate::mfg::{RowMoments, ValueBoundary};
use crate::model::ModelParams;
use crate::stationary::StationarySolution;

/// Coefficients of `u(x) = A(x-m)^2/2 + B(x-m) + C` and the quantities they
/// depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqCoefficients {
    /// Curvature `A`.
    pub curvature: f64,
    /// Slope `B` at the mean.
    pub slope: f64,
    /// Offset `C`.
    pub offset: f64,
    /// Drift damping compatible with the quadratic ansatz.
    pub gamma_star: f64,
    /// Exit cost charged at default.
    pub exit_cost: f64,
    /// Effective mean reversion `A + q + a` of the equilibrium density.
    pub a_eff: f64,
    pub e0_eff: f64,
    pub mbar: f64,
    /// Denominator `q + a + A + r` shared by `B` and `gamma_star`.
    pub denom: f64,
}

/// Nonnegative root of `A^2 + (r + 2(q+a)) A + q^2 - eps = 0`.
pub fn curvature(params: &ModelParams) -> Result<f64> {
    let b = params.r + 2.0 * (params.q + params.a);
    let disc = b * b - 4.0 * (params.q * params.q - params.epsilon);
    if disc < 0.0 {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("quadratic ansatz has no real curvature (discriminant {disc})"),
        });
    }
    // Avoid cancellation when eps is close to q^2.
    let c = params.q * params.q - params.epsilon;
    let root = if c == 0.0 { 0.0 } else { -2.0 * c / (b + disc.sqrt()) };
    Ok(root.max(0.0))
}

/// `(B, C)` for given curvature, damping and moments.
fn slope_offset(curv: f64, gamma: f64, denom: f64, rate: f64, mean: f64, sigma: f64, r: f64) -> (f64, f64) {
    let push = gamma * rate * mean;
    let slope = -curv * push / denom;
    let offset = (0.5 * sigma * sigma * curv - 0.5 * slope * slope - slope * push) / r;
    (slope, offset)
}

/// Exit cost `A m^2/2 - B m + C`.
fn exit_cost_of(curv: f64, slope: f64, offset: f64, mean: f64) -> f64 {
    0.5 * curv * mean * mean - slope * mean + offset
}

/// Curvature, the self-consistent stationary rate and mean, then slope,
/// offset, compatible damping and exit cost. The mean of the equilibrium
/// density is `x0`.
pub fn compute_lq_coefficients(params: &ModelParams) -> Result<LqCoefficients> {
    params.validate()?;
    let curv = curvature(params)?;
    let a_eff = curv + params.q + params.a;
    let mbar = params.x0;
    let density = StationarySolution::with_sigma(a_eff, mbar, params.sigma)?;
    let e0_eff = density.e0();
    let denom = params.q + params.a + curv + params.r;
    let gamma_star = 1.0 - curv / denom;
    let (slope, offset) = slope_offset(curv, gamma_star, denom, e0_eff, mbar, params.sigma, params.r);
    Ok(LqCoefficients {
        curvature: curv,
        slope,
        offset,
        gamma_star,
        exit_cost: exit_cost_of(curv, slope, offset, mbar),
        a_eff,
        e0_eff,
        mbar,
        denom,
    })
}

impl LqCoefficients {
    pub fn value(&self, x: f64) -> f64 {
        let y = x - self.mbar;
        0.5 * self.curvature * y * y + self.slope * y + self.offset
    }

    pub fn value_derivative(&self, x: f64) -> f64 {
        self.curvature * (x - self.mbar) + self.slope
    }

    /// Exit cost evaluated at other moments, with slope and offset recomputed.
    pub fn exit_cost_at(&self, mo: RowMoments, params: &ModelParams) -> f64 {
        let (slope, offset) =
            slope_offset(self.curvature, self.gamma_star, self.denom, mo.rate, mo.mean, params.sigma, params.r);
        exit_cost_of(self.curvature, slope, offset, mo.mean)
    }

    /// Model parameters with the damping replaced by the compatible value.
    pub fn params_with_gamma(&self, params: &ModelParams) -> ModelParams {
        ModelParams { gamma: self.gamma_star, ..*params }
    }
}

/// Equilibrium control as `-u'(x) = -A(x-m) - B`.
pub fn equilibrium_control(coef: &LqCoefficients, x: f64) -> f64 {
    -coef.value_derivative(x)
}

/// Minimizer of the Hamiltonian at `p = u'(x)`: `-u'(x) + q(m - x)`.
pub fn equilibrium_control_full(coef: &LqCoefficients, x: f64, params: &ModelParams) -> f64 {
    -coef.value_derivative(x) + params.q * (coef.mbar - x)
}

/// Quadratic value function paired with its density.
#[derive(Debug, Clone)]
pub struct LqSolution {
    pub coef: LqCoefficients,
    pub density: StationarySolution,
}

impl LqSolution {
    pub fn value(&self, x: f64) -> f64 {
        self.coef.value(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.density.pdf(x)
    }
}

pub fn assemble_stationary_solution(coef: &LqCoefficients, params: &ModelParams) -> Result<LqSolution> {
    ensure(coef.a_eff > 0.0, "a_eff", || format!("must be > 0, got {}", coef.a_eff))?;
    let density = StationarySolution::with_sigma(coef.a_eff, coef.mbar, params.sigma)?;
    Ok(LqSolution { coef: *coef, density })
}

/// Dirichlet data matching the ansatz: exit cost from the current moments on
/// the left, the quadratic on the right and at the horizon.
#[derive(Debug, Clone, Copy)]
pub struct LqBoundary {
    pub coef: LqCoefficients,
    pub params: ModelParams,
}

impl ValueBoundary for LqBoundary {
    fn left(&self, mo: RowMoments) -> f64 {
        self.coef.exit_cost_at(mo, &self.params)
    }
    fn right(&self, x: f64) -> f64 {
        self.coef.value(x)
    }
    fn terminal(&self, x: f64) -> f64 {
        self.coef.value(x)
    }
}
