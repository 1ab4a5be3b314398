//! Monte-Carlo Picard iteration for the mean-field expected default count.
//!
//! For a candidate curve `e`, each path follows
//! `dZ = -a (Z - M) dt + dW / x0 + de`, `M = floor(sup (Z)^+)`, and the map
//! returns `E[M_t]`. Every path owns a random stream, so all applications of
//! the map see identical noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::model::RateCurve;
use crate::special::{erfc, erfcx};
use crate::stationary::{InverseCdf, StationarySolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialLaw {
    /// Every path starts at the target level.
    Point,
    /// Starting reserves drawn from the stationary density.
    Stationary,
}

#[derive(Debug, Clone)]
pub struct FixedPointConfig {
    pub a: f64,
    pub x0: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub initial: InitialLaw,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            a: 0.0,
            x0: 2.0,
            t_end: 1.0,
            n_paths: 10_000,
            dt: 1e-3,
            max_iter: 25,
            tol: 1e-3,
            seed: 1,
            initial: InitialLaw::Point,
        }
    }
}

impl FixedPointConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.a >= 0.0, "a", || format!("must be >= 0, got {}", self.a))?;
        ensure(self.x0 > 0.0, "x0", || format!("must be > 0, got {}", self.x0))?;
        ensure(self.t_end > 0.0, "t_end", || format!("must be > 0, got {}", self.t_end))?;
        ensure(self.dt > 0.0 && self.dt <= self.t_end, "dt", || {
            format!("must lie in (0, {}], got {}", self.t_end, self.dt)
        })?;
        ensure(self.tol > 0.0, "tol", || format!("must be > 0, got {}", self.tol))?;
        ensure(self.n_paths >= 2, "n_paths", || format!("need at least 2 paths, got {}", self.n_paths))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub curve: RateCurve,
    /// Standard error of the Monte-Carlo mean at each time.
    pub std_err: Vec<f64>,
}

impl MapEstimate {
    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().copied().fold(0.0, f64::max)
    }
}

struct Tally {
    sum: Vec<Vec<u64>>,
    sum_sq: Vec<Vec<u64>>,
    /// Paths where the newer curve's running sup has the smaller fractional part.
    frac_below: Vec<u64>,
}

impl Tally {
    fn new(curves: usize, len: usize) -> Self {
        Tally {
            sum: vec![vec![0; len]; curves],
            sum_sq: vec![vec![0; len]; curves],
            frac_below: vec![0; len],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.frac_below.iter_mut().zip(other.frac_below).for_each(|(x, y)| *x += y);
        self
    }
}

struct Engine<'a> {
    cfg: &'a FixedPointConfig,
    start: Option<InverseCdf>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a FixedPointConfig) -> Result<Self> {
        cfg.validate()?;
        let start = match cfg.initial {
            InitialLaw::Point => None,
            InitialLaw::Stationary => Some(StationarySolution::new(cfg.a, cfg.x0)?.inverse_cdf(50_000)),
        };
        Ok(Engine { cfg, start })
    }

    fn check_curve(&self, e: &RateCurve) -> Result<()> {
        let len = self.cfg.steps() + 1;
        if e.len() != len {
            return Err(Error::InvalidInput(format!("curve has {} samples, the grid needs {len}", e.len())));
        }
        if e.values()[0] != 0.0 {
            return Err(Error::InvalidInput("curve must start at zero".into()));
        }
        Ok(())
    }

    /// Simulates all paths against each curve with shared noise. With two
    /// curves the fractional parts of the running suprema are also compared.
    fn run(&self, curves: &[&RateCurve]) -> Result<Tally> {
        for c in curves {
            self.check_curve(c)?;
        }
        let cfg = self.cfg;
        let steps = cfg.steps();
        let len = steps + 1;
        let k = curves.len();
        let vol = cfg.dt.sqrt() / cfg.x0;
        let chunk = 256;
        let chunks = cfg.n_paths.div_ceil(chunk);
        let tally = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut t = Tally::new(k, len);
                let mut z = vec![0.0; k];
                let mut y = vec![0.0; k];
                let mut sup = vec![0.0; k];
                let mut level = vec![0u64; k];
                for path in c * chunk..((c + 1) * chunk).min(cfg.n_paths) {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(path as u64);
                    let z0 = match &self.start {
                        None => 0.0,
                        Some(inv) => (cfg.x0 - inv.sample(rng.gen::<f64>())) / cfg.x0,
                    };
                    for j in 0..k {
                        y[j] = z0;
                        z[j] = z0;
                        sup[j] = z0.max(0.0);
                        level[j] = sup[j].floor() as u64;
                        t.sum[j][0] += level[j];
                        t.sum_sq[j][0] += level[j] * level[j];
                    }
                    for n in 0..steps {
                        let dw: f64 = vol * rng.sample::<f64, _>(StandardNormal);
                        for j in 0..k {
                            // Keep the curve out of the accumulated state so that
                            // ordered curves give ordered paths exactly.
                            let e = curves[j].values();
                            y[j] += -cfg.a * (y[j] + e[n] - level[j] as f64) * cfg.dt + dw;
                            z[j] = y[j] + e[n + 1];
                            if z[j] > sup[j] {
                                sup[j] = z[j];
                                level[j] = sup[j].floor() as u64;
                            }
                            t.sum[j][n + 1] += level[j];
                            t.sum_sq[j][n + 1] += level[j] * level[j];
                        }
                        if k == 2 && sup[1].fract() < sup[0].fract() {
                            t.frac_below[n + 1] += 1;
                        }
                    }
                }
                t
            })
            .reduce(|| Tally::new(k, len), Tally::merge);
        Ok(tally)
    }

    fn estimate(&self, tally: &Tally, j: usize) -> Result<MapEstimate> {
        let n = self.cfg.n_paths as f64;
        let means: Vec<f64> = tally.sum[j].iter().map(|&s| s as f64 / n).collect();
        let std_err = tally.sum[j]
            .iter()
            .zip(&tally.sum_sq[j])
            .map(|(&s, &q)| {
                let m = s as f64 / n;
                let var = (q as f64 / n - m * m).max(0.0) * n / (n - 1.0);
                (var / n).sqrt()
            })
            .collect();
        Ok(MapEstimate { curve: RateCurve::new(self.cfg.dt, means)?, std_err })
    }
}

/// One application of the map to the curve `e`, which must be sampled on the
/// configuration's time grid and start at zero.
pub fn apply_map(e: &RateCurve, cfg: &FixedPointConfig) -> Result<MapEstimate> {
    let engine = Engine::new(cfg)?;
    let tally = engine.run(&[e])?;
    engine.estimate(&tally, 0)
}

/// Applies the map to two curves with the same noise.
pub fn apply_map_pair(e1: &RateCurve, e2: &RateCurve, cfg: &FixedPointConfig) -> Result<(MapEstimate, MapEstimate)> {
    let engine = Engine::new(cfg)?;
    let tally = engine.run(&[e1, e2])?;
    Ok((engine.estimate(&tally, 0)?, engine.estimate(&tally, 1)?))
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    /// `e^(0) = 0, e^(1), ..., e^(K)`.
    pub iterates: Vec<RateCurve>,
    /// `gaps[n] = sup |e^(n+1) - e^(n)|`.
    pub gaps: Vec<f64>,
    /// `gaps[n+1] / gaps[n]`.
    pub ratios: Vec<f64>,
    /// Largest Monte-Carlo standard error of each iterate after the first.
    pub std_err: Vec<f64>,
    /// Per iteration: sup over t of the probability that the fractional part
    /// of the newer running supremum falls below the older one, and that
    /// probability divided by the fractional part of the previous gap.
    pub frac_probability: Vec<f64>,
    pub frac_ratio: Vec<f64>,
    pub converged: bool,
    /// Sup-norm of `map(e*) - e*` for the last iterate.
    pub residual: f64,
    pub residual_std_err: f64,
}

impl PicardResult {
    pub fn fixed_point(&self) -> &RateCurve {
        self.iterates.last().expect("at least the zero iterate")
    }
}

/// Iterates the map from `e^(0) = 0` until successive iterates are within
/// `tol` in sup-norm or `max_iter` applications have been made.
pub fn picard_iterate(cfg: &FixedPointConfig) -> Result<PicardResult> {
    let engine = Engine::new(cfg)?;
    let len = cfg.steps() + 1;
    let mut iterates = vec![RateCurve::zeros(cfg.dt, len)?];
    let mut out = PicardResult {
        iterates: Vec::new(),
        gaps: Vec::new(),
        ratios: Vec::new(),
        std_err: Vec::new(),
        frac_probability: Vec::new(),
        frac_ratio: Vec::new(),
        converged: false,
        residual: f64::NAN,
        residual_std_err: f64::NAN,
    };
    let n_paths = cfg.n_paths as f64;
    for _ in 0..cfg.max_iter {
        let cur = iterates.last().unwrap();
        let next = if iterates.len() >= 2 {
            let prev = &iterates[iterates.len() - 2];
            let tally = engine.run(&[prev, cur])?;
            let p = tally.frac_below.iter().map(|&c| c as f64 / n_paths).fold(0.0, f64::max);
            let gap = cur.sup_distance(prev).fract();
            out.frac_probability.push(p);
            out.frac_ratio.push(if gap > 0.0 { p / gap } else { f64::NAN });
            engine.estimate(&tally, 1)?
        } else {
            let tally = engine.run(&[cur])?;
            engine.estimate(&tally, 0)?
        };
        let gap = next.curve.sup_distance(cur);
        if let Some(&last) = out.gaps.last() {
            out.ratios.push(if last > 0.0 { gap / last } else { f64::NAN });
        }
        out.gaps.push(gap);
        out.std_err.push(next.max_std_err());
        iterates.push(next.curve);
        if gap < cfg.tol {
            out.converged = true;
            break;
        }
    }
    let last = iterates.last().unwrap();
    let check = engine.estimate(&engine.run(&[last])?, 0)?;
    out.residual = check.curve.sup_distance(last);
    out.residual_std_err = check.max_std_err();
    out.iterates = iterates;
    Ok(out)
}

/// `sum_k P(sup_{s <= t} (W_s + s) >= k x0)` in closed form.
///
/// The growing factor `exp(2 x0 k)` is folded into a scaled complementary
/// error function so terms stay finite for any `k`.
pub fn erfc_level_sum(t: f64, x0: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let st = (2.0 * t).sqrt();
    let half = (0.5 * t).sqrt();
    let mut total = 0.0;
    for k in 1..1_000_000u64 {
        let y = k as f64 * x0;
        let first = 0.5 * erfc(y / st - half);
        let z = y / st + half;
        // exp(2y) erfc(z) = exp(2y - z^2) erfcx(z), and 2y - z^2 = -(y - t)^2 / (2t).
        let second = 0.5 * (-(y - t) * (y - t) / (2.0 * t)).exp() * erfcx(z);
        total += first + second;
        if y > t && first + second < 1e-14 * total.max(1e-300) {
            break;
        }
        if y > t && first + second < 1e-300 {
            break;
        }
    }
    total
}

/// Upper bound `t / x0` on the first Picard iterate, valid for `x0 >= 1`.
pub fn picard_bound(t: f64, x0: f64) -> f64 {
    t / x0
}
