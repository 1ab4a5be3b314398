//! Time-dependent uncontrolled Fokker-Planck equation with re-injection of
//! defaulted mass at the current mean.

use crate::error::{ensure, Error, Result};
use crate::model::{row_default_rate, row_mean, DensitySnapshot, ModelParams};
use crate::transport::{implicit_step, Upwind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpGrid {
    pub l: f64,
    pub t_end: f64,
    pub n_space: usize,
    pub n_time: usize,
}

impl FpGrid {
    /// Grid on `[0, L]` with `L = max(10, x0 + 8 sigma sqrt(T))` and the
    /// requested steps.
    pub fn covering(x0: f64, sigma: f64, t_end: f64, h: f64, dt: f64) -> Self {
        let l = (x0 + 8.0 * sigma * t_end.sqrt()).max(10.0);
        let n_space = (l / h).round().max(4.0) as usize;
        let n_time = (t_end / dt).round().max(1.0) as usize;
        FpGrid { l: n_space as f64 * h, t_end, n_space, n_time }
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

    /// Samples `f` on the grid nodes with the boundary nodes set to zero.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Result<DensitySnapshot> {
        let h = self.h();
        let n = self.nodes();
        let mut v: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
        v[0] = 0.0;
        v[n - 1] = 0.0;
        v[n - 2] = 0.0;
        DensitySnapshot::new(v, h)
    }

    fn validate(&self) -> Result<()> {
        ensure(self.l > 0.0 && self.t_end > 0.0, "grid", || "domain and horizon must be positive".into())?;
        ensure(self.n_space >= 8, "n_space", || format!("need at least 8 intervals, got {}", self.n_space))?;
        ensure(self.n_time >= 1, "n_time", || "need at least one step".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpSettings {
    pub grid: FpGrid,
    /// Breakdown is declared when the default rate exceeds this value.
    pub rate_ceiling: f64,
    /// Breakdown is declared when one step loses more than this mass fraction.
    pub mass_loss_limit: f64,
    /// Keep every `store_every`-th density (the last one is always kept).
    pub store_every: usize,
}

impl FpSettings {
    pub fn new(grid: FpGrid) -> Self {
        FpSettings { grid, rate_ceiling: 1e3, mass_loss_limit: 0.01, store_every: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Breakdown {
    RateCeiling { time: f64, rate: f64 },
    MassLoss { time: f64, loss: f64 },
}

impl Breakdown {
    pub fn time(&self) -> f64 {
        match *self {
            Breakdown::RateCeiling { time, .. } | Breakdown::MassLoss { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FpRun {
    pub h: f64,
    pub dt: f64,
    pub sigma: f64,
    pub a: f64,
    pub alpha: f64,
    /// Stored `(step, density)` pairs.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// Per step `n`: the rate, mean and mass used to advance from `t_n`.
    pub rate: Vec<f64>,
    pub mean: Vec<f64>,
    pub mass: Vec<f64>,
    /// Cumulative defaults `e(t_n)`.
    pub cumulative: Vec<f64>,
    pub breakdown: Option<Breakdown>,
    /// Entries clipped from tiny negative values to zero.
    pub clipped: usize,
}

impl FpRun {
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn final_density(&self) -> &[f64] {
        &self.snapshots.last().expect("initial density is stored").1
    }

    pub fn completed(&self) -> bool {
        self.breakdown.is_none()
    }
}

/// Advances `p0` on the grid of `settings`. Each step takes the rate from the
/// current boundary slope, moves mass with the drift
/// `-a (x - mean) - alpha mean rate`, and re-injects `rate dt` at the mean.
pub fn evolve_density(p0: &DensitySnapshot, params: &ModelParams, settings: &FpSettings) -> Result<FpRun> {
    let grid = settings.grid;
    grid.validate()?;
    let (h, dt, n) = (grid.h(), grid.dt(), grid.nodes());
    if p0.len() != n || (p0.h() - h).abs() > 1e-12 * h {
        return Err(Error::InvalidInput(format!(
            "initial density has {} nodes with step {}, the grid needs {} nodes with step {}",
            p0.len(),
            p0.h(),
            n,
            h
        )));
    }
    ensure(params.a >= 0.0, "a", || format!("must be >= 0, got {}", params.a))?;
    ensure(params.sigma > 0.0, "sigma", || format!("must be > 0, got {}", params.sigma))?;
    let sigma = params.sigma;
    let mut p = p0.values().to_vec();
    p[n - 1] = 0.0;
    p[n - 2] = 0.0;
    let store_every = settings.store_every.max(1);
    let mut run = FpRun {
        h,
        dt,
        sigma,
        a: params.a,
        alpha: params.alpha,
        snapshots: vec![(0, p.clone())],
        rate: Vec::new(),
        mean: Vec::new(),
        mass: Vec::new(),
        cumulative: vec![0.0],
        breakdown: None,
        clipped: 0,
    };
    let mut velocity = vec![0.0; n];
    let mut source = vec![0.0; n];
    for step in 0..grid.n_time {
        let t = step as f64 * dt;
        let rate = row_default_rate(&p, h, sigma).max(0.0);
        let mean = row_mean(&p, h);
        let mass = h * p.iter().sum::<f64>();
        run.rate.push(rate);
        run.mean.push(mean);
        run.mass.push(mass);
        if rate > settings.rate_ceiling {
            run.breakdown = Some(Breakdown::RateCeiling { time: t, rate });
            break;
        }
        let inject = mean.clamp(0.0, grid.l - 3.0 * h);
        for (i, v) in velocity.iter_mut().enumerate() {
            *v = -params.a * (i as f64 * h - mean) - params.alpha * mean * rate;
        }
        let up = Upwind::from_velocity(&velocity);
        source.iter_mut().for_each(|s| *s = 0.0);
        let (j, wj, wk) = dirac_weights(inject, h, rate);
        source[j] = wj;
        source[j + 1] = wk;
        let mut next = implicit_step(&p, &up, &source, h, dt, sigma)?;
        for v in next.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-12 {
                    run.clipped += 1;
                }
                *v = 0.0;
            }
        }
        let next_mass = h * next.iter().sum::<f64>();
        let e_prev = *run.cumulative.last().unwrap();
        run.cumulative.push(e_prev + rate * dt);
        p = next;
        if (step + 1) % store_every == 0 || step + 1 == grid.n_time {
            run.snapshots.push((step + 1, p.clone()));
        }
        if mass - next_mass > settings.mass_loss_limit * mass.max(f64::MIN_POSITIVE) {
            run.breakdown = Some(Breakdown::MassLoss { time: t + dt, loss: (mass - next_mass) / mass });
            break;
        }
    }
    if run.breakdown.is_none() {
        // Diagnostics at the final time.
        run.rate.push(row_default_rate(&p, h, sigma).max(0.0));
        run.mean.push(row_mean(&p, h));
        run.mass.push(h * p.iter().sum::<f64>());
    }
    Ok(run)
}

/// Two-node weights placing mass `rate` at `mu`: `(j, w_j, w_{j+1})`, `j = floor(mu/h)`.
pub(crate) fn dirac_weights(mu: f64, h: f64, rate: f64) -> (usize, f64, f64) {
    let j = (mu / h).floor() as usize;
    let xj = j as f64 * h;
    let wj = rate * (xj + h - mu) / (h * h);
    let wk = rate * (mu - xj) / (h * h);
    (j, wj, wk)
}

/// Smooth test function for the weak formulation.
pub trait TestFunction {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

pub struct Constant;

impl TestFunction for Constant {
    fn value(&self, _: f64) -> f64 {
        1.0
    }
    fn d1(&self, _: f64) -> f64 {
        0.0
    }
    fn d2(&self, _: f64) -> f64 {
        0.0
    }
}

pub struct Linear;

impl TestFunction for Linear {
    fn value(&self, x: f64) -> f64 {
        x
    }
    fn d1(&self, _: f64) -> f64 {
        1.0
    }
    fn d2(&self, _: f64) -> f64 {
        0.0
    }
}

/// `exp(-mu x)`.
pub struct Exponential(pub f64);

impl TestFunction for Exponential {
    fn value(&self, x: f64) -> f64 {
        (-self.0 * x).exp()
    }
    fn d1(&self, x: f64) -> f64 {
        -self.0 * (-self.0 * x).exp()
    }
    fn d2(&self, x: f64) -> f64 {
        self.0 * self.0 * (-self.0 * x).exp()
    }
}

/// Largest defect of the weak formulation over the stored snapshots.
///
/// The time derivative of `int phi p` is a centered difference between
/// neighbouring snapshots; the right-hand side is evaluated at the middle
/// one with the rate and mean that the scheme used there.
pub fn weak_form_residual(run: &FpRun, phi: &dyn TestFunction) -> Result<f64> {
    if !run.completed() {
        return Err(Error::InvalidInput("weak-form residual needs a run without breakdown".into()));
    }
    if run.snapshots.len() < 3 {
        return Err(Error::InvalidInput("weak-form residual needs at least three stored densities".into()));
    }
    let h = run.h;
    let pair = |p: &[f64]| h * p.iter().enumerate().map(|(i, v)| phi.value(i as f64 * h) * v).sum::<f64>();
    let mut worst: f64 = 0.0;
    for w in run.snapshots.windows(3) {
        let (s0, ref p0) = w[0];
        let (s1, ref p1) = w[1];
        let (s2, ref p2) = w[2];
        let lhs = (pair(p2) - pair(p0)) / ((s2 - s0) as f64 * run.dt);
        let rate = run.rate[s1];
        let mean = run.mean[s1];
        let gen: f64 = h * p1
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = i as f64 * h;
                let drift = -run.a * (x - mean) - run.alpha * mean * rate;
                (phi.d1(x) * drift + 0.5 * run.sigma * run.sigma * phi.d2(x)) * v
            })
            .sum::<f64>();
        let rhs = gen + rate * (phi.value(mean) - phi.value(0.0));
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// L1 distance between two grid functions with step `h`.
pub fn l1_distance(p: &[f64], q: &[f64], h: f64) -> f64 {
    h * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
