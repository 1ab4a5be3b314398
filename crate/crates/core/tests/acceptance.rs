//! Acceptance run: one line per criterion, each at its stated tolerance and
//! runtime budget.
//!
//! Failing criteria are reported, not hidden. The process exits with status 1
//! on any failure only when `ACCEPTANCE_STRICT` is set, so `cargo test` stays
//! usable while known gaps remain visible in its output.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use mfbank::blowup::{check_blowup_condition, InitialDensity, TriangularDensity};
use mfbank::evolution::{evolve_density, l1_distance, weak_form_residual, Constant, Exponential, FpGrid, FpSettings, Linear, TestFunction};
use mfbank::fixed_point::{erfc_level_sum, picard_iterate, FixedPointConfig, InitialLaw};
use mfbank::lq::{assemble_stationary_solution, compute_lq_coefficients, LqBoundary};
use mfbank::mfg::{
    beta_weights_for_rate, discrete_hamiltonian, discrete_hamiltonian_grad, solve_mfg, truncated_gaussian, MfgGrid, MfgSettings,
    RowMoments, ZeroBoundary,
};
use mfbank::model::{hamiltonian, DensitySnapshot, ModelParams};
use mfbank::particle::{resolve_default_cascade, simulate_system, DynamicsVariant, SimConfig};
use mfbank::stationary::{e0_upper_bound, f_of_u, g_of_u, solve_e0, StationarySolution};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = o.pass && in_time;
    let timing = if in_time { String::new() } else { format!(" [over budget {budget:?}]") };
    println!("{} {name}: {} ({:.2?}){timing}", if pass { "PASS" } else { "FAIL" }, o.detail, took);
    pass
}

fn baseline_params(x0: f64) -> ModelParams {
    ModelParams { a: 0.5, x0, r: 0.5, sigma: 1.0, q: 0.1, epsilon: 0.01, gamma: 1.0, alpha: 1.0 }
}

fn e0_closed_form() -> Outcome {
    let worst = [1.0, 2.0, 5.0].iter().map(|&x0| (solve_e0(0.0, x0, 1e-14).unwrap() - 1.0 / (x0 * x0)).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max |e0 - 1/x0^2| = {worst:e}"))
}

fn e0_consistency() -> Outcome {
    let a_vals = [0.01125, 0.5, 2.0];
    let x_vals = [1.0, 2.0, 3.0];
    let mut grid = [[0.0; 3]; 3];
    let (mut eq, mut mass, mut mean) = (0.0f64, 0.0f64, 0.0f64);
    let mut bound_ok = true;
    for (i, &a) in a_vals.iter().enumerate() {
        for (j, &x0) in x_vals.iter().enumerate() {
            let e0 = solve_e0(a, x0, 1e-14).unwrap();
            grid[i][j] = e0;
            eq = eq.max((f_of_u(e0, a, x0).unwrap() - g_of_u(e0)).abs());
            let sol = StationarySolution::new(a, x0).unwrap();
            mass = mass.max((sol.total_mass().unwrap() - 1.0).abs());
            mean = mean.max((sol.mean().unwrap() - x0).abs());
            if 2.0 * a * x0 * x0 > 1.0 && !(e0 > 0.0 && e0 < e0_upper_bound(a, x0)) {
                bound_ok = false;
            }
        }
    }
    let along_a = (0..3).all(|j| (0..2).all(|i| grid[i + 1][j] <= grid[i][j]));
    let along_x = (0..3).all(|i| (0..2).all(|j| grid[i][j + 1] <= grid[i][j]));
    let pass = eq < 1e-8 && mass <= 1e-6 && mean <= 1e-6 && bound_ok && along_a && along_x;
    outcome(
        pass,
        format!("|F-G| {eq:.1e}, mass err {mass:.1e}, mean err {mean:.1e}, bound {bound_ok}, monotone a {along_a} x0 {along_x}"),
    )
}

fn stationary_vs_particles() -> Outcome {
    let (a, x0) = (2.0, 2.0);
    let params = ModelParams { a, x0, ..baseline_params(x0) };
    let sol = StationarySolution::new(a, x0).unwrap();
    let n = 10_000;
    let mut cfg = SimConfig::new(100.0, 1e-2, 7);
    cfg.snapshot_times = vec![100.0];
    cfg.bin_width = 0.1;
    cfg.hist_max = 12.0;
    let go = |variant: DynamicsVariant| {
        let s = simulate_system(&vec![x0; n], variant, &params, &cfg).unwrap();
        let h = s.histograms.last().unwrap();
        (h.l1_distance(|x| sol.pdf(x)), *s.mean.last().unwrap())
    };
    let ((l1_m, mean_m), (l1_p, mean_p)) = rayon::join(|| go(DynamicsVariant::MeanFieldStationary { x0 }), || go(DynamicsVariant::Ps));
    let pass = l1_m <= 0.12 && (mean_m - x0).abs() <= 0.05 * x0 && l1_p <= 0.15 && (mean_p - x0).abs() <= 0.05 * x0;
    outcome(pass, format!("mfsta L1 {l1_m:.4} mean {mean_m:.4}; ps L1 {l1_p:.4} mean {mean_p:.4}"))
}

/// Cascade built from the set recursion and the post-default map as written:
/// seed with banks at or below zero, add every bank pushed to or below zero
/// by the current count, repeat until nothing changes.
fn cascade_by_definition(x: &[f64], level: f64) -> (Vec<usize>, Vec<f64>) {
    let n = x.len() as f64;
    let mut set: Vec<usize> = (0..x.len()).filter(|&i| x[i] <= 0.0).collect();
    loop {
        let size = set.len() as f64;
        let next: Vec<usize> = (0..x.len()).filter(|i| !set.contains(i) && x[*i] - level / n * size <= 0.0).collect();
        if next.is_empty() {
            break;
        }
        set.extend(next);
    }
    set.sort_unstable();
    let size = set.len() as f64;
    let out = (0..x.len())
        .map(|i| {
            let hit = if set.contains(&i) { 1.0 } else { 0.0 };
            x[i] + level * ((1.0 + 1.0 / n) * hit - size / n)
        })
        .collect();
    (set, out)
}

fn cascade_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut cascades = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=6);
        let x: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { -rng.gen::<f64>() * 0.05 } else { rng.gen::<f64>() * 0.6 })
            .collect();
        let mfsta = trial % 2 == 1;
        let (variant, level) = if mfsta {
            (DynamicsVariant::MeanFieldStationary { x0: 1.0 }, 1.0)
        } else {
            (DynamicsVariant::Ps, x.iter().sum::<f64>() / n as f64)
        };
        let got = resolve_default_cascade(&x, variant);
        if level <= 0.0 {
            if !got.absorbed {
                mismatches += 1;
            }
            continue;
        }
        let (set, out) = cascade_by_definition(&x, level);
        if set.len() > 1 {
            cascades += 1;
        }
        if got.defaulted != set || got.x_new != out {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in 1000 states ({cascades} multi-default cascades)"))
}

fn picard_suite() -> Outcome {
    let cfg = FixedPointConfig {
        a: 0.0,
        x0: 2.0,
        t_end: 1.0,
        n_paths: 10_000,
        dt: 1e-3,
        max_iter: 25,
        tol: 1e-3,
        seed: 5,
        initial: InitialLaw::Stationary,
    };
    let res = picard_iterate(&cfg).unwrap();
    let monotone = res.iterates.windows(2).all(|w| w[0].values().iter().zip(w[1].values()).all(|(a, b)| a <= b));
    let first = &res.iterates[1];
    let bounded = (0..first.len()).all(|k| first.values()[k] <= first.time(k) / cfg.x0 + 1e-12);
    let residual_ok = res.residual <= 1e-3 + 3.0 * res.residual_std_err;
    let pass = monotone && bounded && res.converged && residual_ok;
    outcome(
        pass,
        format!(
            "monotone {monotone}, e1 <= t/x0 {bounded}, converged {} in {} iterations, residual {:.2e} (allowed {:.2e})",
            res.converged,
            res.gaps.len(),
            res.residual,
            1e-3 + 3.0 * res.residual_std_err
        ),
    )
}

/// Monte-Carlo mean of `floor(sup_{s<=t}(W_s + s) / x0)`, with the running
/// maximum on each step drawn exactly from the Brownian-bridge law.
fn level_count_mc(t: f64, x0: f64, paths: usize, seed: u64) -> (f64, f64) {
    let steps = 64;
    let dt = t / steps as f64;
    let counts: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (mut w, mut sup) = (0.0f64, 0.0f64);
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let next = w + dt + dt.sqrt() * z;
                let u: f64 = 1.0 - rng.gen::<f64>();
                let d = next - w;
                let peak = 0.5 * (w + next + (d * d - 2.0 * dt * u.ln()).sqrt());
                sup = sup.max(peak);
                w = next;
            }
            (sup / x0).floor()
        })
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn erfc_oracle() -> Outcome {
    let mut worst_z: f64 = 0.0;
    let mut bound_ok = true;
    let mut seed = 100;
    for &t in &[0.5, 1.0, 3.0] {
        for &x0 in &[1.0, 2.0] {
            let exact = erfc_level_sum(t, x0);
            let (mc, se) = level_count_mc(t, x0, 100_000, seed);
            seed += 1;
            worst_z = worst_z.max((exact - mc).abs() / se);
            if x0 >= 1.0 && exact > t / x0 {
                bound_ok = false;
            }
        }
    }
    outcome(worst_z <= 3.0 && bound_ok, format!("worst deviation {worst_z:.2} standard errors, bound t/x0 holds {bound_ok}"))
}

fn blowup_certificate() -> Outcome {
    let (a, x0, mu) = (5.0, 0.2, 1.0);
    let c = x0 / (2.0 * a);
    let tri = TriangularDensity::new(c).unwrap();
    let want_lhs = ((1.0 - (-mu * 0.04f64).exp()) / (mu * 0.04)).powi(2);
    let want_rhs = (1.0 - (-mu * x0).exp()) / (mu * x0);
    let (cert_ok, cert_text) = match check_blowup_condition(InitialDensity::Analytic(&tri), a, x0, mu) {
        Ok(cert) => (
            cert.triggered && (cert.lhs - want_lhs).abs() <= 1e-3 && (cert.rhs - want_rhs).abs() <= 1e-3,
            format!("lhs {:.4} rhs {:.4} triggered {}", cert.lhs, cert.rhs, cert.triggered),
        ),
        Err(e) => (false, format!("certificate refused: {e}")),
    };
    // What the same density gives at the smallest admissible exponent with
    // the spread that reproduces the quoted left-hand side.
    let wide = TriangularDensity::new(0.04).unwrap();
    let alt = check_blowup_condition(InitialDensity::Analytic(&wide), a, x0, 2.01).unwrap();

    let grid = FpGrid::covering(x0, 1.0, 5.0, 0.005, 0.005);
    let p0 = grid.sample(|x| mfbank::blowup::AnalyticDensity::pdf(&tri, x)).unwrap();
    let params = ModelParams { a, x0, ..baseline_params(x0) };
    let run = evolve_density(&p0, &params, &FpSettings::new(grid)).unwrap();
    let breaks = run.breakdown.map(|b| b.time() < 5.0).unwrap_or(false);

    let (sa, sx) = (2.0, 2.0);
    let grid = FpGrid::covering(sx, 1.0, 10.0, 0.01, 1e-2);
    let sol = StationarySolution::new(sa, sx).unwrap();
    let p0 = grid.sample(|x| sol.pdf(x)).unwrap();
    let mut settings = FpSettings::new(grid);
    settings.store_every = 100;
    let params = ModelParams { a: sa, x0: sx, ..baseline_params(sx) };
    let run = evolve_density(&p0, &params, &settings).unwrap();
    let drift = run.snapshots.iter().map(|(_, p)| l1_distance(p, p0.values(), run.h)).fold(0.0, f64::max);

    let pass = cert_ok && breaks && drift <= 0.02;
    outcome(
        pass,
        format!(
            "{cert_text} (quoted {want_lhs:.4} vs {want_rhs:.4}); at c=0.04, mu=2.01: lhs {:.4} rhs {:.4} triggered {}; \
             breakdown before T=5 {breaks}; stationary L1 drift {drift:.2e}",
            alt.lhs, alt.rhs, alt.triggered
        ),
    )
}

fn hamiltonian_probes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut mono, mut consist, mut convex, mut grad_bad, mut grad_checked) = (0, 0.0f64, 0, 0, 0);
    for _ in 0..10_000 {
        let params = ModelParams {
            a: rng.gen_range(0.0..2.0),
            x0: 2.0,
            r: 0.5,
            sigma: 1.0,
            q: rng.gen_range(0.0..1.0),
            epsilon: 0.0,
            gamma: rng.gen_range(0.0..1.0),
            alpha: 1.0,
        };
        let params = ModelParams { epsilon: params.q * params.q + rng.gen_range(0.0..1.0), ..params };
        let mo = RowMoments { mean: rng.gen_range(0.0..5.0), rate: rng.gen_range(0.0..1.0) };
        let x = rng.gen_range(0.0..10.0);
        let p1 = rng.gen_range(-5.0..5.0);
        let p2 = rng.gen_range(-5.0..5.0);
        let d = rng.gen_range(0.0..1.0);
        let hv = discrete_hamiltonian(x, mo, p1, p2, &params);
        if discrete_hamiltonian(x, mo, p1 + d, p2, &params) > hv + 1e-12 || discrete_hamiltonian(x, mo, p1, p2 + d, &params) < hv - 1e-12 {
            mono += 1;
        }
        let diag = discrete_hamiltonian(x, mo, p1, p1, &params);
        let exact = hamiltonian(x, mo.mean, mo.rate, p1, &params);
        consist = consist.max((diag - exact).abs() / exact.abs().max(1.0));
        let (q1, q2) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let mid = discrete_hamiltonian(x, mo, 0.5 * (p1 + q1), 0.5 * (p2 + q2), &params);
        if mid > 0.5 * (hv + discrete_hamiltonian(x, mo, q1, q2, &params)) + 1e-12 {
            convex += 1;
        }
        let phi = (params.q + params.a) * (mo.mean - x) - params.gamma * mo.rate * mo.mean;
        let e = 1e-5;
        if (p1 - phi).abs() > 10.0 * e && (p2 - phi).abs() > 10.0 * e {
            grad_checked += 1;
            let (g1, g2) = discrete_hamiltonian_grad(x, mo, p1, p2, &params);
            let c1 = (discrete_hamiltonian(x, mo, p1 + e, p2, &params) - discrete_hamiltonian(x, mo, p1 - e, p2, &params)) / (2.0 * e);
            let c2 = (discrete_hamiltonian(x, mo, p1, p2 + e, &params) - discrete_hamiltonian(x, mo, p1, p2 - e, &params)) / (2.0 * e);
            if (g1 - c1).abs() > 1e-6 || (g2 - c2).abs() > 1e-6 {
                grad_bad += 1;
            }
        }
    }
    let pass = mono == 0 && consist <= 1e-12 && convex == 0 && grad_bad == 0;
    outcome(
        pass,
        format!("monotonicity violations {mono}, max diagonal gap {consist:.1e}, convexity violations {convex}, gradient mismatches {grad_bad}/{grad_checked}"),
    )
}

fn beta_identity() -> Outcome {
    let grid = MfgGrid::new(10.0, 1.0, 200, 10).unwrap();
    let h = grid.h();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rate = rng.gen_range(0.0..5.0);
        let mu = rng.gen_range(0.0..grid.l - h);
        let b = beta_weights_for_rate(rate, mu, &grid).unwrap();
        let dense = b.dense(grid.nodes());
        let mass = h * dense.iter().sum::<f64>();
        let (s, c) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let w = |x: f64| s * x + c;
        let pair: f64 = dense.iter().enumerate().map(|(i, v)| v * w(grid.x(i))).sum::<f64>() * h;
        let scale = rate.max(1.0) * (1.0 + s.abs() * grid.l + c.abs());
        worst = worst.max((mass - rate).abs() / rate.max(1.0)).max((pair - rate * w(mu)).abs() / scale);
    }
    outcome(worst <= 1e-14, format!("max relative identity defect {worst:.1e}"))
}

fn mfg_baseline() -> Outcome {
    let grid = MfgGrid::new(10.0, 10.0, 200, 100).unwrap();
    let settings = MfgSettings::default();
    let solve = |x0: f64| {
        let p = baseline_params(x0);
        let m0 = truncated_gaussian(&grid, x0, 0.5).unwrap();
        let s = solve_mfg(&m0, &grid, &p, &settings, &ZeroBoundary).unwrap();
        let rates: Vec<f64> = s.moments(&p).iter().map(|m| m.rate).collect();
        (s.converged, s.iterations(), rates)
    };
    let (conv, iters, rates) = solve(2.0);
    let tail = &rates[75..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    let plateau = (hi - lo) / hi < 0.1;
    let (conv3, iters3, rates3) = solve(3.0);
    let max3 = rates3.iter().cloned().fold(0.0, f64::max);
    let pass = conv && iters <= 200 && rates[0] <= 1e-3 && plateau && conv3 && max3 < 1e-2;
    outcome(
        pass,
        format!(
            "converged {conv} in {iters}; start rate {:.3e} (limit 1e-3); last-quarter variation {:.1}%; x0=3 converged {conv3} in {iters3}, max rate {max3:.2e}",
            rates[0],
            100.0 * (hi - lo) / hi
        ),
    )
}

fn mfg_vs_lq() -> Outcome {
    let base = ModelParams { epsilon: 0.5, ..baseline_params(2.0) };
    let coef = compute_lq_coefficients(&base).unwrap();
    let params = coef.params_with_gamma(&base);
    let grid = MfgGrid::new(10.0, 10.0, 200, 100).unwrap();
    let m0 = truncated_gaussian(&grid, 2.0, 0.5).unwrap();
    let boundary = LqBoundary { coef, params };
    let sol = solve_mfg(&m0, &grid, &params, &MfgSettings::default(), &boundary).unwrap();
    let (mut gap, mut scale) = (0.0f64, 0.0f64);
    for i in 1..grid.nodes() - 2 {
        let x = grid.x(i);
        gap = gap.max((sol.u[0][i] - coef.value(x)).abs());
        scale = scale.max(coef.value(x).abs());
    }
    let rel = gap / scale;
    let density = assemble_stationary_solution(&coef, &params).unwrap();
    let last = sol.m.last().unwrap();
    let l1 = grid.h() * (0..grid.nodes()).map(|i| (last[i] - density.density(grid.x(i))).abs()).sum::<f64>();
    let mean = sol.moments(&params).last().unwrap().mean;
    let balancing = coef.denom / (coef.denom - coef.curvature);
    let pass = sol.converged && rel <= 0.05 && l1 <= 0.05;
    outcome(
        pass,
        format!(
            "converged {} in {}; u relative sup gap {rel:.4} (limit 0.05); m L1 gap {l1:.4} (limit 0.05), terminal mean {mean:.3} vs {}; \
             gamma* {:.4}, mean-balancing gamma would be {balancing:.4}",
            sol.converged,
            sol.iterations(),
            coef.mbar,
            coef.gamma_star
        ),
    )
}

fn weak_form() -> Outcome {
    let params = ModelParams { a: 0.5, x0: 2.0, ..baseline_params(2.0) };
    let residuals = |h: f64, dt: f64| -> Vec<f64> {
        let grid = FpGrid::covering(2.0, 1.0, 2.0, h, dt);
        let n = grid.nodes();
        // Start density vanishing at the origin, so the absorbing boundary
        // sees compatible data and no initial layer masks the rate.
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 * h;
                x * (-(x - 2.0).powi(2) / 0.5).exp()
            })
            .collect();
        v[n - 1] = 0.0;
        let mass = h * v.iter().sum::<f64>();
        v.iter_mut().for_each(|x| *x /= mass);
        let p0 = DensitySnapshot::new(v, h).unwrap();
        let run = evolve_density(&p0, &params, &FpSettings::new(grid)).unwrap();
        let phis: [&dyn TestFunction; 3] = [&Constant, &Linear, &Exponential(1.0)];
        phis.iter().map(|phi| weak_form_residual(&run, *phi).unwrap()).collect()
    };
    let coarse = residuals(0.02, 2e-3);
    let fine = residuals(0.01, 1e-3);
    let mut ratios = Vec::new();
    let mut pass = true;
    for (c, f) in coarse.iter().zip(&fine) {
        // Residuals already at rounding level cannot show a refinement rate.
        let ratio = c / f;
        ratios.push(ratio);
        if !(ratio >= 1.5 || *c < 1e-10) {
            pass = false;
        }
    }
    let constant = coarse.iter().map(|c| c / (0.02 + 2e-3)).fold(0.0, f64::max);
    let text = format!(
        "residuals (1, x, e^-x) coarse {:?} fine {:?}, halving ratios {:?}, C ~ {constant:.3}",
        coarse.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
        fine.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
        ratios.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
    );
    outcome(pass, text)
}

fn main() {
    // Skip when the test harness only lists tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let s = Duration::from_secs;
    let results = [
        run("e0 closed form (a = 0)", s(1), e0_closed_form),
        run("e0 consistency (a > 0)", s(10), e0_consistency),
        run("stationary density vs particles", s(300), stationary_vs_particles),
        run("cascade oracle", s(1), cascade_oracle),
        run("Picard suite", s(120), picard_suite),
        run("erfc level-sum oracle", s(60), erfc_oracle),
        run("blow-up certificate", s(120), blowup_certificate),
        run("discrete Hamiltonian properties", s(5), hamiltonian_probes),
        run("re-injection weight identity", s(1), beta_identity),
        run("MFG baseline", s(600), mfg_baseline),
        run("MFG vs LQ ansatz", s(600), mfg_vs_lq),
        run("weak-form residual", s(120), weak_form),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
