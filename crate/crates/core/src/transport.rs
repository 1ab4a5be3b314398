//! Implicit upwind transport-diffusion step shared by the controlled and the
//! uncontrolled Fokker-Planck solvers.
//!
//! Row `i` of the step solves
//! `(M'_i - M_i)/dt - sigma^2/2 (D2 M')_i - B_i(M') - source_i = 0`
//! with `B_i(M) = (M_i L_i - M_{i-1} L_{i-1} + M_{i+1} R_{i+1} - M_i R_i) / h`,
//! `L <= 0` and `R >= 0` the one-sided transport coefficients. Nodes `0`,
//! `n-2` and `n-1` are held at zero.

use crate::error::{Error, Result};
use crate::tridiag;

/// One-sided transport coefficients on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Upwind {
    /// Nonpositive coefficient carrying mass to the right.
    pub left: Vec<f64>,
    /// Nonnegative coefficient carrying mass to the left.
    pub right: Vec<f64>,
}

impl Upwind {
    /// Coefficients for a prescribed velocity field.
    pub fn from_velocity(v: &[f64]) -> Self {
        Upwind {
            left: v.iter().map(|&v| -v.max(0.0)).collect(),
            right: v.iter().map(|&v| (-v).max(0.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// `B_i(M)` for an interior node.
pub fn transport_term(m: &[f64], up: &Upwind, h: f64, i: usize) -> f64 {
    (m[i] * up.left[i] - m[i - 1] * up.left[i - 1] + m[i + 1] * up.right[i + 1] - m[i] * up.right[i]) / h
}

/// Advances `m_now` by one implicit step.
pub fn implicit_step(m_now: &[f64], up: &Upwind, source: &[f64], h: f64, dt: f64, sigma: f64) -> Result<Vec<f64>> {
    let n = m_now.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("transport grid needs at least 4 nodes, got {n}")));
    }
    if up.len() != n || source.len() != n {
        return Err(Error::InvalidInput("transport coefficients and source must match the grid".into()));
    }
    let diff = 0.5 * sigma * sigma / (h * h);
    let interior = n - 3;
    let mut lower = vec![0.0; interior];
    let mut diag = vec![0.0; interior];
    let mut upper = vec![0.0; interior];
    let mut rhs = vec![0.0; interior];
    for k in 0..interior {
        let i = k + 1;
        diag[k] = 1.0 / dt + 2.0 * diff + (up.right[i] - up.left[i]) / h;
        lower[k] = -diff + up.left[i - 1] / h;
        upper[k] = -diff - up.right[i + 1] / h;
        rhs[k] = m_now[i] / dt + source[i];
    }
    let sol = tridiag::solve(&lower, &diag, &upper, &rhs)?;
    let mut out = vec![0.0; n];
    out[1..n - 2].copy_from_slice(&sol);
    Ok(out)
}

/// Residual of the step equations for a candidate `m_next` (interior rows).
pub fn step_residual(m_now: &[f64], m_next: &[f64], up: &Upwind, source: &[f64], h: f64, dt: f64, sigma: f64) -> f64 {
    let n = m_now.len();
    let mut worst: f64 = 0.0;
    for i in 1..n - 2 {
        let lap = (m_next[i + 1] - 2.0 * m_next[i] + m_next[i - 1]) / (h * h);
        let r = (m_next[i] - m_now[i]) / dt - 0.5 * sigma * sigma * lap - transport_term(m_next, up, h, i) - source[i];
        worst = worst.max(r.abs());
    }
    worst
}

/// Mass change predicted by summing the step equations over interior rows:
/// `dt * (h sum source - sigma^2/(2h)(M'_1 + M'_{n-3}) + M'_{n-3} L_{n-3} - M'_1 R_1)`.
pub fn mass_ledger(m_next: &[f64], up: &Upwind, source: &[f64], h: f64, dt: f64, sigma: f64) -> f64 {
    let n = m_next.len();
    let last = n - 3;
    let injected: f64 = h * source[1..n - 2].iter().sum::<f64>();
    let diffusive = 0.5 * sigma * sigma / h * (m_next[1] + m_next[last]);
    let advective = m_next[last] * up.left[last] - m_next[1] * up.right[1];
    dt * (injected - diffusive + advective)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(n: usize, h: f64, c: f64, w: f64) -> Vec<f64> {
        let mut m: Vec<f64> = (0..n).map(|i| (-(i as f64 * h - c).powi(2) / (2.0 * w * w)).exp()).collect();
        m[0] = 0.0;
        m[n - 1] = 0.0;
        m[n - 2] = 0.0;
        let mass: f64 = h * m.iter().sum::<f64>();
        m.iter_mut().for_each(|v| *v /= mass);
        m
    }

    #[test]
    fn pure_diffusion_keeps_mass_away_from_edges() {
        let (n, h) = (201, 0.05);
        let m0 = bump(n, h, 5.0, 0.5);
        let up = Upwind::from_velocity(&vec![0.0; n]);
        let mut m = m0.clone();
        for _ in 0..50 {
            m = implicit_step(&m, &up, &vec![0.0; n], h, 0.01, 1.0).unwrap();
        }
        let mass: f64 = h * m.iter().sum::<f64>();
        assert!((mass - 1.0).abs() < 1e-3);
        assert!(m.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ledger_matches_mass_change() {
        let (n, h, dt) = (120, 0.05, 0.02);
        let m0 = bump(n, h, 1.0, 0.4);
        let v: Vec<f64> = (0..n).map(|i| 0.7 * (2.0 - i as f64 * h)).collect();
        let up = Upwind::from_velocity(&v);
        let mut src = vec![0.0; n];
        src[40] = 3.0;
        src[41] = 1.0;
        let m1 = implicit_step(&m0, &up, &src, h, dt, 1.2).unwrap();
        let change = h * (m1.iter().sum::<f64>() - m0.iter().sum::<f64>());
        let predicted = mass_ledger(&m1, &up, &src, h, dt, 1.2);
        assert!((change - predicted).abs() < 1e-12);
        assert!(step_residual(&m0, &m1, &up, &src, h, dt, 1.2) < 1e-9);
    }

    #[test]
    fn rightward_velocity_moves_center_of_mass() {
        let (n, h) = (200, 0.05);
        let m0 = bump(n, h, 4.0, 0.5);
        let up = Upwind::from_velocity(&vec![1.0; n]);
        let m1 = implicit_step(&m0, &up, &vec![0.0; n], h, 0.05, 1.0).unwrap();
        let com = |m: &[f64]| m.iter().enumerate().map(|(i, v)| i as f64 * h * v).sum::<f64>() / m.iter().sum::<f64>();
        assert!(com(&m1) > com(&m0));
    }
}
