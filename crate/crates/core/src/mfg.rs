//! Finite-difference solver for the coupled value/density system on a
//! truncated domain: upwind discrete Hamiltonian, Newton sweeps backward in
//! time, linear implicit sweeps forward in time, and an outer fixed-point
//! loop between the two.

use crate::error::{ensure, Error, Result};
use crate::model::{hamiltonian_offset, row_default_rate, row_mean, DensitySnapshot, ModelParams};
use crate::transport::{implicit_step, step_residual, Upwind};
use crate::tridiag;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfgGrid {
    pub l: f64,
    pub t_end: f64,
    pub n_space: usize,
    pub n_time: usize,
}

impl MfgGrid {
    pub fn new(l: f64, t_end: f64, n_space: usize, n_time: usize) -> Result<Self> {
        ensure(l > 0.0 && l.is_finite(), "L", || format!("must be > 0, got {l}"))?;
        ensure(t_end > 0.0 && t_end.is_finite(), "T", || format!("must be > 0, got {t_end}"))?;
        ensure(n_space >= 8, "N_h", || format!("need at least 8 intervals, got {n_space}"))?;
        ensure(n_time >= 2, "N_T", || format!("need at least 2 steps, got {n_time}"))?;
        Ok(MfgGrid { l, t_end, n_space, n_time })
    }

    pub fn h(&self) -> f64 {
        self.l / self.n_space as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_time as f64
    }

    pub fn nodes(&self) -> usize {
        self.n_space + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Index of the last node at or left of `x`, for `x` in `[0, L)`.
    pub fn ind(&self, x: f64) -> Result<usize> {
        if !(0.0..self.l).contains(&x) {
            return Err(Error::OutsideGrid { x, limit: self.l });
        }
        Ok(((x / self.h()).floor() as usize).min(self.n_space - 1))
    }

    /// Samples `f` with the pinned boundary nodes set to zero.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Result<DensitySnapshot> {
        let n = self.nodes();
        let mut v: Vec<f64> = (0..n).map(|i| f(self.x(i))).collect();
        v[0] = 0.0;
        v[n - 2] = 0.0;
        v[n - 1] = 0.0;
        DensitySnapshot::new(v, self.h())
    }
}

/// Mean and default rate of a density row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMoments {
    pub mean: f64,
    pub rate: f64,
}

impl RowMoments {
    pub fn of(row: &[f64], h: f64, sigma: f64) -> Self {
        RowMoments { mean: row_mean(row, h), rate: row_default_rate(row, h, sigma) }
    }
}

/// Vertex `(q+a)(mean - x) - gamma rate mean` of the discrete Hamiltonian.
pub fn phi_tilde(x: f64, mo: RowMoments, params: &ModelParams) -> f64 {
    (params.q + params.a) * (mo.mean - x) - params.gamma * mo.rate * mo.mean
}

/// Upwind Hamiltonian `([(p1-phi)^-]^2 + [(p2-phi)^+]^2)/2 - psi`.
pub fn discrete_hamiltonian(x: f64, mo: RowMoments, p1: f64, p2: f64, params: &ModelParams) -> f64 {
    let phi = phi_tilde(x, mo, params);
    let psi = hamiltonian_offset(phi, x, mo.mean, params);
    let lo = (p1 - phi).min(0.0);
    let hi = (p2 - phi).max(0.0);
    0.5 * (lo * lo + hi * hi) - psi
}

/// Partial derivatives in `p1` (nonpositive) and `p2` (nonnegative).
pub fn discrete_hamiltonian_grad(x: f64, mo: RowMoments, p1: f64, p2: f64, params: &ModelParams) -> (f64, f64) {
    let phi = phi_tilde(x, mo, params);
    ((p1 - phi).min(0.0), (p2 - phi).max(0.0))
}

/// Convenience form taking the density row directly.
pub fn discrete_hamiltonian_row(x: f64, row: &[f64], grid: &MfgGrid, p1: f64, p2: f64, params: &ModelParams) -> f64 {
    discrete_hamiltonian(x, RowMoments::of(row, grid.h(), params.sigma), p1, p2, params)
}

/// Two-node re-injection weights for a Dirac of mass `rate` at `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaWeights {
    pub index: usize,
    pub at_index: f64,
    pub at_next: f64,
}

impl BetaWeights {
    pub fn get(&self, i: usize) -> f64 {
        if i == self.index {
            self.at_index
        } else if i == self.index + 1 {
            self.at_next
        } else {
            0.0
        }
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.get(i)).collect()
    }
}

/// Weights with `h sum beta = rate` and `sum beta W = rate W(mu)` for
/// piecewise-linear `W`.
pub fn beta_weights_for_rate(rate: f64, mu: f64, grid: &MfgGrid) -> Result<BetaWeights> {
    let h = grid.h();
    if !(mu >= 0.0 && mu < grid.l - h) {
        return Err(Error::OutsideGrid { x: mu, limit: grid.l - h });
    }
    let index = grid.ind(mu)?;
    // Split by the fractional offset so the two weights sum to rate/h
    // without cancellation between node positions.
    let theta = ((mu - grid.x(index)) / h).clamp(0.0, 1.0);
    let scale = rate / h;
    let at_next = scale * theta;
    Ok(BetaWeights { index, at_index: scale - at_next, at_next })
}

/// Re-injection weights for the default rate of `row` placed at `mu`.
pub fn beta_weights(row: &[f64], mu: f64, grid: &MfgGrid, sigma: f64) -> Result<BetaWeights> {
    beta_weights_for_rate(row_default_rate(row, grid.h(), sigma), mu, grid)
}

/// Dirichlet data for the value function.
pub trait ValueBoundary {
    /// Value at `x = 0` given the density moments at the next time level.
    fn left(&self, mo: RowMoments) -> f64;
    /// Value at the two rightmost nodes.
    fn right(&self, x: f64) -> f64;
    fn terminal(&self, x: f64) -> f64;
}

/// Homogeneous data everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBoundary;

impl ValueBoundary for ZeroBoundary {
    fn left(&self, _: RowMoments) -> f64 {
        0.0
    }
    fn right(&self, _: f64) -> f64 {
        0.0
    }
    fn terminal(&self, _: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-10, max_iter: 50 }
    }
}

/// Residual of the backward step on interior nodes (entries 0 and the pinned
/// right nodes are zero).
pub fn hjb_residual(u: &[f64], u_next: &[f64], mo: RowMoments, grid: &MfgGrid, params: &ModelParams) -> Vec<f64> {
    let n = grid.nodes();
    let (h, dt) = (grid.h(), grid.dt());
    let d = 0.5 * params.sigma * params.sigma / (h * h);
    let mut r = vec![0.0; n];
    for i in 1..n - 2 {
        let p1 = (u[i + 1] - u[i]) / h;
        let p2 = (u[i] - u[i - 1]) / h;
        r[i] = params.r * u[i] - (u_next[i] - u[i]) / dt - d * (u[i + 1] - 2.0 * u[i] + u[i - 1])
            + discrete_hamiltonian(grid.x(i), mo, p1, p2, params);
    }
    r
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solution of one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbStep {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the implicit backward step for the value row at `t_n` given the row
/// at `t_{n+1}` and the density row at `t_{n+1}`. `left` and `right` are the
/// pinned boundary values.
pub fn solve_hjb_step(
    u_next: &[f64],
    m_row: &[f64],
    grid: &MfgGrid,
    params: &ModelParams,
    boundary: (f64, f64),
    newton: NewtonSettings,
) -> Result<HjbStep> {
    let n = grid.nodes();
    if u_next.len() != n || m_row.len() != n {
        return Err(Error::InvalidInput(format!("rows must have {n} entries")));
    }
    let mo = RowMoments::of(m_row, grid.h(), params.sigma);
    hjb_newton(u_next, mo, grid, params, boundary, newton)
}

fn hjb_newton(
    u_next: &[f64],
    mo: RowMoments,
    grid: &MfgGrid,
    params: &ModelParams,
    (left, right): (f64, f64),
    newton: NewtonSettings,
) -> Result<HjbStep> {
    let n = grid.nodes();
    let (h, dt) = (grid.h(), grid.dt());
    let d = 0.5 * params.sigma * params.sigma / (h * h);
    let mut u = u_next.to_vec();
    u[0] = left;
    u[n - 2] = right;
    u[n - 1] = right;
    let mut res = hjb_residual(&u, u_next, mo, grid, params);
    let mut norm = max_abs(&res);
    let m = n - 3;
    let (mut lower, mut diag, mut upper, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for it in 0..newton.max_iter {
        if norm < newton.tol {
            return Ok(HjbStep { u, iterations: it, residual: norm });
        }
        for k in 0..m {
            let i = k + 1;
            let p1 = (u[i + 1] - u[i]) / h;
            let p2 = (u[i] - u[i - 1]) / h;
            let (g1, g2) = discrete_hamiltonian_grad(grid.x(i), mo, p1, p2, params);
            diag[k] = params.r + 1.0 / dt + 2.0 * d + (g2 - g1) / h;
            upper[k] = -d + g1 / h;
            lower[k] = -d - g2 / h;
            rhs[k] = -res[i];
        }
        let delta = tridiag::solve(&lower, &diag, &upper, &rhs)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let mut trial = u.clone();
            for k in 0..m {
                trial[k + 1] += step * delta[k];
            }
            let tr = hjb_residual(&trial, u_next, mo, grid, params);
            let tn = max_abs(&tr);
            if tn < norm {
                u = trial;
                res = tr;
                norm = tn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm < newton.tol {
        return Ok(HjbStep { u, iterations: newton.max_iter, residual: norm });
    }
    Err(Error::NewtonFailed { step: 0, residual: norm, iterations: newton.max_iter })
}

/// Transport coefficients `H_p1`, `H_p2` induced by a value row.
pub fn upwind_from_value(u_row: &[f64], mo: RowMoments, grid: &MfgGrid, params: &ModelParams) -> Upwind {
    let n = u_row.len();
    let h = grid.h();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        let p1 = if i + 1 < n { (u_row[i + 1] - u_row[i]) / h } else { 0.0 };
        let p2 = if i > 0 { (u_row[i] - u_row[i - 1]) / h } else { p1 };
        let (g1, g2) = discrete_hamiltonian_grad(grid.x(i), mo, p1, p2, params);
        left[i] = g1;
        right[i] = g2;
    }
    Upwind { left, right }
}

/// Coupling terms frozen from an earlier density iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenCoupling {
    pub moments: RowMoments,
    pub beta: BetaWeights,
}

impl FrozenCoupling {
    /// Moments of `row` and re-injection of its default rate at its mean.
    pub fn from_row(row: &[f64], grid: &MfgGrid, params: &ModelParams) -> Result<Self> {
        let moments = RowMoments::of(row, grid.h(), params.sigma);
        let mu = moments.mean.clamp(0.0, grid.l - 2.0 * grid.h());
        let beta = beta_weights_for_rate(moments.rate.max(0.0), mu, grid)?;
        Ok(FrozenCoupling { moments, beta })
    }
}

/// Forward step for the density from `t_n` to `t_{n+1}`; linear because the
/// coupling is frozen.
pub fn solve_fp_step(
    m_now: &[f64],
    u_row: &[f64],
    frozen: &FrozenCoupling,
    grid: &MfgGrid,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let n = grid.nodes();
    if m_now.len() != n || u_row.len() != n {
        return Err(Error::InvalidInput(format!("rows must have {n} entries")));
    }
    let up = upwind_from_value(u_row, frozen.moments, grid, params);
    implicit_step(m_now, &up, &frozen.beta.dense(n), grid.h(), grid.dt(), params.sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfgSettings {
    pub outer_tol: f64,
    pub outer_max: usize,
    pub newton: NewtonSettings,
}

impl Default for MfgSettings {
    fn default() -> Self {
        MfgSettings { outer_tol: 1e-6, outer_max: 200, newton: NewtonSettings::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub grid: MfgGrid,
    /// `u[n][i]` and `m[n][i]` for `n = 0..=N_T`.
    pub u: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    /// `(dU, dM)` per outer iteration.
    pub history: Vec<(f64, f64)>,
    pub converged: bool,
    /// Density entries below `-1e-10` seen in the final iterate.
    pub negative_entries: usize,
}

impl MfgSolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn moments(&self, params: &ModelParams) -> Vec<RowMoments> {
        self.m.iter().map(|row| RowMoments::of(row, self.grid.h(), params.sigma)).collect()
    }

    /// Largest residual of the forward equations with the coupling taken from
    /// the solution itself, relative to `max |M| / dt`.
    pub fn fp_consistency_residual(&self, params: &ModelParams) -> Result<f64> {
        let grid = &self.grid;
        let n = grid.nodes();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..grid.n_time {
            let coupling = FrozenCoupling::from_row(&self.m[k + 1], grid, params)?;
            let up = upwind_from_value(&self.u[k], coupling.moments, grid, params);
            let r = step_residual(&self.m[k], &self.m[k + 1], &up, &coupling.beta.dense(n), grid.h(), grid.dt(), params.sigma);
            worst = worst.max(r);
            scale = scale.max(max_abs(&self.m[k + 1]) / grid.dt());
        }
        Ok(if scale > 0.0 { worst / scale } else { worst })
    }
}

fn relative_l2(new: &[Vec<f64>], old: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in new.iter().zip(old) {
        for (x, y) in a.iter().zip(b) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Alternates forward density sweeps (coupling frozen at the previous
/// iterate) and backward Newton sweeps until both iterates agree in
/// normalized l2 to `outer_tol`.
pub fn solve_mfg(
    m0: &DensitySnapshot,
    grid: &MfgGrid,
    params: &ModelParams,
    settings: &MfgSettings,
    boundary: &dyn ValueBoundary,
) -> Result<MfgSolution> {
    params.validate()?;
    let n = grid.nodes();
    let nt = grid.n_time;
    if m0.len() != n || (m0.h() - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(Error::InvalidInput(format!(
            "initial density has {} nodes with step {}, the grid needs {} nodes with step {}",
            m0.len(),
            m0.h(),
            n,
            grid.h()
        )));
    }
    let mut first = m0.values().to_vec();
    first[0] = 0.0;
    first[n - 2] = 0.0;
    first[n - 1] = 0.0;
    let mut m_it: Vec<Vec<f64>> = vec![first.clone(); nt + 1];
    let mut u_it: Vec<Vec<f64>> = vec![vec![0.0; n]; nt + 1];
    let terminal: Vec<f64> = (0..n).map(|i| boundary.terminal(grid.x(i))).collect();
    let right = boundary.right(grid.x(n - 2));
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..settings.outer_max {
        let mut m_new = Vec::with_capacity(nt + 1);
        m_new.push(first.clone());
        for k in 0..nt {
            let frozen = FrozenCoupling::from_row(&m_it[k + 1], grid, params)?;
            let next = solve_fp_step(&m_new[k], &u_it[k], &frozen, grid, params)?;
            m_new.push(next);
        }
        let mut u_new = vec![Vec::new(); nt + 1];
        u_new[nt] = terminal.clone();
        for k in (0..nt).rev() {
            let mo = RowMoments::of(&m_new[k + 1], grid.h(), params.sigma);
            let step = hjb_newton(&u_new[k + 1], mo, grid, params, (boundary.left(mo), right), settings.newton)
                .map_err(|e| match e {
                    Error::NewtonFailed { residual, iterations, .. } => Error::NewtonFailed { step: k, residual, iterations },
                    other => other,
                })?;
            u_new[k] = step.u;
        }
        let du = relative_l2(&u_new, &u_it);
        let dm = relative_l2(&m_new, &m_it);
        history.push((du, dm));
        u_it = u_new;
        m_it = m_new;
        if du.max(dm) < settings.outer_tol {
            converged = true;
            break;
        }
    }
    let negative_entries = m_it.iter().flatten().filter(|&&v| v < -1e-10).count();
    Ok(MfgSolution { grid: *grid, u: u_it, m: m_it, history, converged, negative_entries })
}

/// Truncated Gaussian initial density: the Gaussian minus its value at the
/// origin, clipped at zero and normalized on the grid.
pub fn truncated_gaussian(grid: &MfgGrid, center: f64, std: f64) -> Result<DensitySnapshot> {
    ensure(std > 0.0, "std", || format!("must be > 0, got {std}"))?;
    let g = |x: f64| (-(x - center) * (x - center) / (2.0 * std * std)).exp();
    let g0 = g(0.0);
    let n = grid.nodes();
    let mut v: Vec<f64> = (0..n).map(|i| (g(grid.x(i)) - g0).max(0.0)).collect();
    v[0] = 0.0;
    v[n - 2] = 0.0;
    v[n - 1] = 0.0;
    let mass = grid.h() * v.iter().sum::<f64>();
    if mass <= 0.0 {
        return Err(Error::InvalidInput("initial density has no mass on the grid".into()));
    }
    v.iter_mut().for_each(|x| *x /= mass);
    DensitySnapshot::new(v, grid.h())
}
