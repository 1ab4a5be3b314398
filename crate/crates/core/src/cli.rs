//! Command-line front end: subcommands that run one solver each, figure tags
//! that chain several runs, CSV outputs and a manifest per run directory.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::blowup::{check_blowup_condition, scan_exponents, BlowupCertificate, InitialDensity, TriangularDensity};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evolution::{evolve_density, Breakdown, FpGrid, FpSettings};
use crate::fixed_point::{picard_iterate, FixedPointConfig, InitialLaw};
use crate::lq::{assemble_stationary_solution, compute_lq_coefficients, equilibrium_control, equilibrium_control_full, LqBoundary};
use crate::mfg::{solve_mfg, truncated_gaussian, MfgGrid, MfgSettings, MfgSolution, NewtonSettings, ValueBoundary, ZeroBoundary};
use crate::model::{DensitySnapshot, ModelParams};
use crate::output::{num, write_table, write_text_table, Destination, Manifest};
use crate::particle::{simulate_system, DynamicsVariant, SimConfig};
use crate::stationary::{e0_upper_bound, solve_e0, StationarySolution};

/// Exit status for a run whose numerics completed but flagged blow-up or
/// non-convergence.
pub const EXIT_FLAGGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mfbank", version, about = "Interbank default model: simulations, mean-field solvers and figure data")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (or a .csv path for single-table commands).
    #[arg(long, global = true, value_name = "PATH", default_value = "out")]
    pub out: PathBuf,
    /// Override a configuration key.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use full-size samples for figure runs instead of desk-scale ones.
    #[arg(long, global = true)]
    pub exact_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// N-bank particle system.
    SimulateParticles {
        #[arg(long, value_parser = ["ps", "psa", "psb", "mfsta"])]
        variant: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Picard iteration of the mean-field default-rate map.
    FixedPoint,
    /// Stationary density and rate.
    StationaryDensity {
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
    },
    /// Stationary rate over a grid of (a, x0).
    E0Surface {
        /// `lo:hi:count` or a comma-separated list.
        #[arg(long)]
        a_range: Option<String>,
        #[arg(long)]
        x0_range: Option<String>,
    },
    /// Time-dependent density with re-injection.
    EvolveFp,
    /// Laplace-transform blow-up certificate.
    BlowupCheck {
        #[arg(long, conflicts_with = "scan")]
        mu: Option<f64>,
        #[arg(long)]
        scan: bool,
    },
    /// Finite-difference mean-field game.
    SolveMfg {
        #[arg(long, value_parser = ["zero", "lq"])]
        exit_cost: Option<String>,
    },
    /// Explicit linear-quadratic stationary equilibrium.
    LqBenchmark,
    /// Data for one figure analog.
    Figure { tag: FigureTag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum FigureTag {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
}

/// Result of a run that did not fail outright.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub outputs: Vec<String>,
    pub results: Manifest,
    /// Reasons for a nonzero exit despite completed numerics.
    pub flags: Vec<String>,
}

impl Report {
    fn output(&mut self, dest: &Destination, name: &str) -> PathBuf {
        let p = dest.file(name);
        self.outputs.push(p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
        p
    }

    fn merge(&mut self, prefix: &str, other: Report) {
        self.outputs.extend(other.outputs.into_iter().map(|o| format!("{prefix}/{o}")));
        for line in other.results.render().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                self.results.set(format!("{prefix}.{k}"), v);
            }
        }
        self.flags.extend(other.flags.into_iter().map(|f| format!("{prefix}: {f}")));
    }
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. }
        | Error::InvalidInput(_)
        | Error::ExponentTooSmall { .. }
        | Error::Config(_)
        | Error::Io(_) => 1,
        Error::NoBracket { .. }
        | Error::OutsideGrid { .. }
        | Error::SingularSystem { .. }
        | Error::NewtonFailed { .. }
        | Error::Quadrature { .. } => 2,
    }
}

fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse range `{spec}`; use lo:hi:count or a comma list"));
    if let Some((lo, rest)) = spec.split_once(':') {
        let (hi, n) = rest.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Ok(vec![lo]);
        }
        return Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect());
    }
    spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn toml_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

/// Overrides implied by subcommand flags and global options; they are
/// applied after `--set`.
fn command_overrides(cli: &Cli) -> Result<Vec<String>> {
    let mut o = Vec::new();
    if let Some(seed) = cli.seed {
        o.push(format!("simulation.seed={seed}"));
        o.push(format!("fixed_point.seed={seed}"));
    }
    match &cli.command {
        Command::SimulateParticles { variant, n, t, dt } => {
            if let Some(v) = variant {
                o.push(format!("simulation.variant=\"{v}\""));
            }
            if let Some(n) = n {
                o.push(format!("simulation.n={n}"));
            }
            if let Some(t) = t {
                o.push(format!("simulation.t_end={t:?}"));
            }
            if let Some(dt) = dt {
                o.push(format!("simulation.dt={dt:?}"));
            }
        }
        Command::StationaryDensity { a, x0 } => {
            if let Some(a) = a {
                o.push(format!("model.a={a:?}"));
            }
            if let Some(x0) = x0 {
                o.push(format!("model.x0={x0:?}"));
            }
        }
        Command::E0Surface { a_range, x0_range } => {
            if let Some(r) = a_range {
                o.push(format!("stationary.a_values={}", toml_list(&parse_axis(r)?)));
            }
            if let Some(r) = x0_range {
                o.push(format!("stationary.x0_values={}", toml_list(&parse_axis(r)?)));
            }
        }
        Command::BlowupCheck { mu: Some(mu), .. } => o.push(format!("blowup.mu={mu:?}")),
        Command::SolveMfg { exit_cost: Some(e) } => o.push(format!("mfg.exit_cost=\"{e}\"")),
        _ => {}
    }
    Ok(o)
}

fn command_name(cmd: &Command) -> String {
    match cmd {
        Command::SimulateParticles { .. } => "simulate-particles".into(),
        Command::FixedPoint => "fixed-point".into(),
        Command::StationaryDensity { .. } => "stationary-density".into(),
        Command::E0Surface { .. } => "e0-surface".into(),
        Command::EvolveFp => "evolve-fp".into(),
        Command::BlowupCheck { .. } => "blowup-check".into(),
        Command::SolveMfg { .. } => "solve-mfg".into(),
        Command::LqBenchmark => "lq-benchmark".into(),
        Command::Figure { tag } => format!("figure {tag:?}"),
    }
}

/// Loads the configuration, runs the command and writes the manifest.
pub fn run(cli: &Cli) -> Result<Report> {
    let mut overrides = cli.set.clone();
    overrides.extend(command_overrides(cli)?);
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let dest = Destination::from_arg(&cli.out);
    let work = || -> Result<Report> {
        match &cli.command {
            Command::SimulateParticles { .. } => run_particles(&cfg, &dest, ""),
            Command::FixedPoint => run_fixed_point(&cfg, &dest),
            Command::StationaryDensity { .. } => run_stationary(&cfg, &dest),
            Command::E0Surface { .. } => run_e0_surface(&cfg, &dest),
            Command::EvolveFp => run_evolve(&cfg, &dest),
            Command::BlowupCheck { mu, scan } => run_blowup(&cfg, &dest, mu.is_none() && (*scan || cfg.blowup.mu.is_none())),
            Command::SolveMfg { .. } => run_mfg(&cfg, &dest),
            Command::LqBenchmark => run_lq(&cfg, &dest),
            Command::Figure { tag } => run_figure(*tag, &cfg, &dest, cli.exact_scale),
        }
    };
    let report = match cli.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} workers: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut manifest = Manifest::new();
    manifest.set("command", command_name(&cli.command));
    manifest.set("version", env!("CARGO_PKG_VERSION"));
    manifest.set("seed", cli.seed.unwrap_or(cfg.simulation.seed));
    manifest.set("exact_scale", cli.exact_scale);
    manifest.extend("config.", &cfg.flatten());
    manifest.extend("result.", &flat(&report.results));
    manifest.set("outputs", report.outputs.join(","));
    manifest.set("flags", report.flags.join("; "));
    manifest.write(&dest.manifest_path())?;
    Ok(report)
}

fn flat(m: &Manifest) -> std::collections::BTreeMap<String, String> {
    m.render()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Parses arguments, runs, prints errors, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(report) => {
            for f in &report.flags {
                eprintln!("flagged: {f}");
            }
            if report.flags.is_empty() {
                0
            } else {
                EXIT_FLAGGED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

// ---------------------------------------------------------------------------
// Individual runs.

fn stationary_for(params: &ModelParams) -> Result<StationarySolution> {
    StationarySolution::with_sigma(params.a, params.x0, params.sigma)
}

/// Samples `f` on `n` nodes of step `h`, zeroes the origin and normalizes.
fn normalized_sample(f: impl Fn(f64) -> f64, h: f64, n: usize, pinned_right: bool) -> Result<DensitySnapshot> {
    let mut v: Vec<f64> = (0..n).map(|i| f(i as f64 * h).max(0.0)).collect();
    v[0] = 0.0;
    if pinned_right {
        v[n - 1] = 0.0;
        v[n - 2] = 0.0;
    }
    let mass = h * v.iter().sum::<f64>();
    if !(mass > 0.0) {
        return Err(Error::InvalidInput("initial density has no mass on the grid".into()));
    }
    v.iter_mut().for_each(|x| *x /= mass);
    DensitySnapshot::new(v, h)
}

pub fn run_particles(cfg: &ExperimentConfig, dest: &Destination, prefix: &str) -> Result<Report> {
    dest.prepare()?;
    let s = &cfg.simulation;
    let params = cfg.model;
    let variant = DynamicsVariant::parse(&s.variant, params.x0)?;
    if s.n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "need at least one bank".into() });
    }
    let init: Vec<f64> = match s.init.as_str() {
        "point" => vec![params.x0; s.n],
        "stationary" => {
            let inv = stationary_for(&params)?.inverse_cdf(4096);
            (0..s.n).map(|i| inv.sample((i as f64 + 0.5) / s.n as f64)).collect()
        }
        other => return Err(Error::Config(format!("simulation.init must be `point` or `stationary`, got `{other}`"))),
    };
    let mut sim = SimConfig::new(s.t_end, s.dt, s.seed);
    if !s.snapshot_times.is_empty() {
        sim.snapshot_times = s.snapshot_times.clone();
    }
    sim.bin_width = s.bin_width;
    sim.hist_max = s.hist_max;
    sim.record_every = s.record_every;
    let out = simulate_system(&init, variant, &params, &sim)?;

    let mut rep = Report::default();
    let n = out.n as f64;
    let p = rep.output(dest, &format!("{prefix}mean.csv"));
    write_table(&p, &["t", "mean"], out.times.iter().zip(&out.mean).map(|(&t, &m)| vec![t, m]))?;
    let p = rep.output(dest, &format!("{prefix}defaults.csv"));
    write_table(
        &p,
        &["t", "rate", "cumulative"],
        (0..out.times.len()).map(|k| vec![out.times[k], out.default_rate[k], out.cumulative_defaults[k] as f64 / n]),
    )?;
    for h in &out.histograms {
        let p = rep.output(dest, &format!("{prefix}hist_{}.csv", num(h.time)));
        write_table(&p, &["bin_left", "bin_right", "density"], (0..h.counts.len()).map(|k| vec![h.bin_left(k), h.bin_right(k), h.density(k)]))?;
    }
    let tag = prefix.trim_end_matches('_');
    let key = |k: &str| if tag.is_empty() { k.to_string() } else { format!("{tag}.{k}") };
    rep.results.set(key("variant"), out.variant);
    rep.results.set(key("final_mean"), *out.mean.last().unwrap_or(&f64::NAN));
    rep.results.set(key("total_defaults"), out.cumulative_defaults.last().copied().unwrap_or(0));
    if let Some(t) = out.absorbed_at {
        rep.results.set(key("absorbed_at"), t);
        rep.flags.push(format!("system absorbed at t = {t}"));
    }
    Ok(rep)
}

pub fn run_fixed_point(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let f = &cfg.fixed_point;
    let initial = match f.initial.as_str() {
        "point" => InitialLaw::Point,
        "stationary" => InitialLaw::Stationary,
        other => return Err(Error::Config(format!("fixed_point.initial must be `point` or `stationary`, got `{other}`"))),
    };
    let fp = FixedPointConfig {
        a: cfg.model.a,
        x0: cfg.model.x0,
        t_end: f.t_end,
        n_paths: f.n_paths,
        dt: f.dt,
        max_iter: f.max_iter,
        tol: f.tol,
        seed: f.seed,
        initial,
    };
    let res = picard_iterate(&fp)?;
    let mut rep = Report::default();
    let k = res.iterates.len() - 1;
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=k).map(|i| format!("e_{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let len = res.iterates[0].len();
    let p = rep.output(dest, "picard_iterates.csv");
    write_table(
        &p,
        &header_refs,
        (0..len).map(|j| {
            let mut row = vec![res.iterates[0].time(j)];
            row.extend(res.iterates[1..].iter().map(|c| c.values()[j]));
            row
        }),
    )?;
    let p = rep.output(dest, "diagnostics.csv");
    write_table(
        &p,
        &["iteration", "gap", "ratio", "std_err", "frac_probability", "frac_ratio"],
        (1..=k).map(|n| {
            let opt = |v: &Vec<f64>, i: Option<usize>| i.and_then(|i| v.get(i).copied()).unwrap_or(f64::NAN);
            let back2 = n.checked_sub(2);
            vec![n as f64, res.gaps[n - 1], opt(&res.ratios, back2), res.std_err[n - 1], opt(&res.frac_probability, back2), opt(&res.frac_ratio, back2)]
        }),
    )?;
    rep.results.set("iterations", k);
    rep.results.set("converged", res.converged);
    rep.results.set("residual", res.residual);
    rep.results.set("residual_std_err", res.residual_std_err);
    if !res.converged {
        rep.flags.push(format!("Picard iteration did not reach tolerance {} in {} steps", f.tol, f.max_iter));
    }
    Ok(rep)
}

pub fn run_stationary(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let s = &cfg.stationary;
    let sol = stationary_for(&cfg.model)?;
    let mut rep = Report::default();
    let p = rep.output(dest, "density.csv");
    let n = s.points.max(2);
    write_table(&p, &["x", "p"], (0..n).map(|i| {
        let x = s.x_max * i as f64 / (n - 1) as f64;
        vec![x, sol.pdf(x)]
    }))?;
    rep.results.set("e0", sol.e0());
    rep.results.set("mass", sol.total_mass()?);
    rep.results.set("mean", sol.mean()?);
    Ok(rep)
}

pub fn run_e0_surface(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let s = &cfg.stationary;
    let sig2 = cfg.model.sigma * cfg.model.sigma;
    let mut rows = Vec::new();
    for &a in &s.a_values {
        for &x0 in &s.x0_values {
            let unit_a = a / sig2;
            let e0 = sig2 * solve_e0(unit_a, x0, s.tol)?;
            let bound = if unit_a > 0.0 { sig2 * e0_upper_bound(unit_a, x0) } else { e0 };
            rows.push(vec![a, x0, e0, bound]);
        }
    }
    let mut rep = Report::default();
    let p = rep.output(dest, "e0_surface.csv");
    write_table(&p, &["a", "x0", "e0", "bound"], rows)?;
    Ok(rep)
}

fn fp_initial(cfg: &ExperimentConfig, grid: &FpGrid) -> Result<DensitySnapshot> {
    let params = &cfg.model;
    let (h, n) = (grid.h(), grid.nodes());
    match cfg.fp.initial.as_str() {
        "stationary" => {
            let sol = stationary_for(params)?;
            normalized_sample(|x| sol.pdf(x), h, n, true)
        }
        "triangular" => {
            let tri = TriangularDensity::new(cfg.fp.c.unwrap_or(params.x0 / (2.0 * params.a)))?;
            normalized_sample(|x| crate::blowup::AnalyticDensity::pdf(&tri, x), h, n, true)
        }
        "gaussian" => {
            let sd = cfg.fp.std;
            normalized_sample(|x| (-(x - params.x0).powi(2) / (2.0 * sd * sd)).exp(), h, n, true)
        }
        other => Err(Error::Config(format!("fp.initial must be stationary, triangular or gaussian, got `{other}`"))),
    }
}

pub fn run_evolve(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let f = &cfg.fp;
    let grid = FpGrid::covering(cfg.model.x0, cfg.model.sigma, f.t_end, f.h, f.dt);
    let p0 = fp_initial(cfg, &grid)?;
    let settings = FpSettings { grid, rate_ceiling: f.rate_ceiling, mass_loss_limit: f.mass_loss_limit, store_every: f.store_every.max(1) };
    let run = evolve_density(&p0, &cfg.model, &settings)?;
    let mut rep = Report::default();
    let h = run.h;
    let p = rep.output(dest, "density.csv");
    write_table(
        &p,
        &["t", "x", "p"],
        run.snapshots.iter().flat_map(|(step, v)| {
            let t = run.time(*step);
            v.iter().enumerate().map(move |(i, &p)| vec![t, i as f64 * h, p])
        }),
    )?;
    let p = rep.output(dest, "rates.csv");
    write_table(&p, &["t", "edot", "e", "mean"], (0..run.rate.len()).map(|n| vec![run.time(n), run.rate[n], run.cumulative[n], run.mean[n]]))?;
    let p = rep.output(dest, "flags.csv");
    let flag_rows: Vec<Vec<String>> = match run.breakdown {
        None => vec![vec!["none".into(), String::new(), String::new(), run.clipped.to_string()]],
        Some(Breakdown::RateCeiling { time, rate }) => vec![vec!["rate_ceiling".into(), time.to_string(), rate.to_string(), run.clipped.to_string()]],
        Some(Breakdown::MassLoss { time, loss }) => vec![vec!["mass_loss".into(), time.to_string(), loss.to_string(), run.clipped.to_string()]],
    };
    write_text_table(&p, &["breakdown", "time", "value", "clipped"], flag_rows)?;
    rep.results.set("completed", run.completed());
    rep.results.set("final_mass", *run.mass.last().unwrap_or(&f64::NAN));
    if let Some(b) = run.breakdown {
        rep.results.set("breakdown_time", b.time());
        rep.flags.push(format!("density evolution broke down at t = {}", b.time()));
    }
    Ok(rep)
}

fn certificate_lines(c: &BlowupCertificate, a: f64, x0: f64) -> Vec<(&'static str, String)> {
    let mut v = vec![("mu", num(c.mu)), ("lhs", num(c.lhs)), ("rhs", num(c.rhs)), ("triggered", c.triggered.to_string())];
    if c.triggered {
        v.push(("contradiction_time", num(c.contradiction_time(a, x0))));
    }
    v
}

pub fn run_blowup(cfg: &ExperimentConfig, dest: &Destination, scan: bool) -> Result<Report> {
    dest.prepare()?;
    let b = &cfg.blowup;
    let (a, x0) = (cfg.model.a, cfg.model.x0);
    let tri;
    let sol;
    let snap;
    let p0 = match b.initial.as_str() {
        "triangular" => {
            tri = TriangularDensity::new(b.c.unwrap_or(x0 / (2.0 * a)))?;
            InitialDensity::Analytic(&tri)
        }
        "stationary" => {
            sol = stationary_for(&cfg.model)?;
            InitialDensity::Analytic(&sol)
        }
        "gaussian" => {
            let sd = b.std;
            let h = 1e-3;
            let n = ((x0 + 10.0 * sd) / h).ceil() as usize + 3;
            snap = normalized_sample(|x| (-(x - x0).powi(2) / (2.0 * sd * sd)).exp(), h, n, false)?;
            InitialDensity::Grid(&snap)
        }
        other => return Err(Error::Config(format!("blowup.initial must be triangular, stationary or gaussian, got `{other}`"))),
    };
    let cert = if scan {
        let (hit, last) = scan_exponents(p0, a, x0, b.scan_points.max(2))?;
        hit.unwrap_or(last)
    } else {
        let mu = b.mu.ok_or_else(|| Error::Config("blowup-check needs --mu, blowup.mu or --scan".into()))?;
        check_blowup_condition(p0, a, x0, mu)?
    };
    let lines = certificate_lines(&cert, a, x0);
    for (k, v) in &lines {
        println!("{k} = {v}");
    }
    let mut rep = Report::default();
    let p = rep.output(dest, "certificate.csv");
    write_text_table(&p, &["key", "value"], lines.iter().map(|(k, v)| vec![k.to_string(), v.clone()]))?;
    for (k, v) in lines {
        rep.results.set(k, v);
    }
    if cert.triggered {
        rep.flags.push(format!("blow-up certificate triggered at mu = {}", cert.mu));
    }
    Ok(rep)
}

fn mfg_inputs(cfg: &ExperimentConfig) -> Result<(MfgGrid, DensitySnapshot, MfgSettings)> {
    let m = &cfg.mfg;
    let grid = MfgGrid::new(m.l, m.t_end, m.n_space, m.n_time)?;
    let m0 = truncated_gaussian(&grid, m.m0_center.unwrap_or(cfg.model.x0), m.m0_std)?;
    let settings = MfgSettings {
        outer_tol: m.outer_tol,
        outer_max: m.outer_max,
        newton: NewtonSettings { tol: m.newton_tol, max_iter: m.newton_max },
    };
    Ok((grid, m0, settings))
}

/// Solves the game with the configured exit cost; returns the solution and
/// the parameters actually used.
pub fn solve_configured_mfg(cfg: &ExperimentConfig) -> Result<(MfgSolution, ModelParams, Report)> {
    let (grid, m0, settings) = mfg_inputs(cfg)?;
    let mut rep = Report::default();
    let (params, boundary): (ModelParams, Box<dyn ValueBoundary>) = match cfg.mfg.exit_cost.as_str() {
        "zero" => (cfg.model, Box::new(ZeroBoundary)),
        "lq" => {
            let coef = compute_lq_coefficients(&cfg.model)?;
            let params = coef.params_with_gamma(&cfg.model);
            rep.results.set("gamma", params.gamma);
            rep.results.set("exit_cost", coef.exit_cost);
            rep.results.set("mean_pinned_to_x0", true);
            (params, Box::new(LqBoundary { coef, params }))
        }
        other => return Err(Error::Config(format!("mfg.exit_cost must be `zero` or `lq`, got `{other}`"))),
    };
    let sol = solve_mfg(&m0, &grid, &params, &settings, boundary.as_ref())?;
    rep.results.set("converged", sol.converged);
    rep.results.set("iterations", sol.iterations());
    rep.results.set("negative_entries", sol.negative_entries);
    rep.results.set("fp_consistency_residual", sol.fp_consistency_residual(&params)?);
    if !sol.converged {
        rep.flags.push(format!("outer loop did not converge in {} iterations", cfg.mfg.outer_max));
    }
    Ok((sol, params, rep))
}

fn write_mfg(sol: &MfgSolution, params: &ModelParams, dest: &Destination, rep: &mut Report) -> Result<()> {
    let grid = sol.grid;
    let long = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.iter()
            .enumerate()
            .flat_map(|(n, r)| r.iter().enumerate().map(move |(i, &v)| vec![n as f64, i as f64, v]))
            .collect()
    };
    let p = rep.output(dest, "u.csv");
    write_table(&p, &["n", "i", "value"], long(&sol.u))?;
    let p = rep.output(dest, "m.csv");
    write_table(&p, &["n", "i", "value"], long(&sol.m))?;
    let mo = sol.moments(params);
    let p = rep.output(dest, "summary.csv");
    write_table(
        &p,
        &["t", "mean", "default_rate", "mass"],
        (0..sol.m.len()).map(|n| vec![grid.t(n), mo[n].mean, mo[n].rate, grid.h() * sol.m[n].iter().sum::<f64>()]),
    )?;
    let p = rep.output(dest, "convergence.csv");
    write_table(&p, &["k", "dU", "dM"], sol.history.iter().enumerate().map(|(k, &(du, dm))| vec![(k + 1) as f64, du, dm]))?;
    Ok(())
}

pub fn run_mfg(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let (sol, params, mut rep) = solve_configured_mfg(cfg)?;
    write_mfg(&sol, &params, dest, &mut rep)?;
    Ok(rep)
}

pub fn run_lq(cfg: &ExperimentConfig, dest: &Destination) -> Result<Report> {
    dest.prepare()?;
    let params = cfg.model;
    let coef = compute_lq_coefficients(&params)?;
    let sol = assemble_stationary_solution(&coef, &params)?;
    let mut rep = Report::default();
    let named = [
        ("A", coef.curvature),
        ("B", coef.slope),
        ("C", coef.offset),
        ("gamma_star", coef.gamma_star),
        ("exit_cost", coef.exit_cost),
        ("a_eff", coef.a_eff),
        ("e0_eff", coef.e0_eff),
        ("mbar", coef.mbar),
    ];
    let p = rep.output(dest, "coefficients.csv");
    write_text_table(&p, &["name", "value"], named.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]))?;
    let n = cfg.lq.points.max(2);
    let xs: Vec<f64> = (0..n).map(|i| cfg.lq.x_max * i as f64 / (n - 1) as f64).collect();
    let p = rep.output(dest, "u_ansatz.csv");
    write_table(
        &p,
        &["x", "u", "control", "control_full"],
        xs.iter().map(|&x| vec![x, coef.value(x), equilibrium_control(&coef, x), equilibrium_control_full(&coef, x, &params)]),
    )?;
    let p = rep.output(dest, "m_ansatz.csv");
    write_table(&p, &["x", "m"], xs.iter().map(|&x| vec![x, sol.density(x)]))?;
    let p = rep.output(dest, "exit_cost.txt");
    std::fs::write(&p, format!("exit_cost = {}\n", coef.exit_cost))?;
    for (k, v) in named {
        rep.results.set(k, v);
    }
    rep.results.set("mean_pinned_to_x0", true);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Figure analogs.

fn with_model(cfg: &ExperimentConfig, f: impl FnOnce(&mut ModelParams)) -> ExperimentConfig {
    let mut c = cfg.clone();
    f(&mut c.model);
    c
}

/// Stationary density plus both particle variants from a point mass at `x0`.
fn density_comparison(cfg: &ExperimentConfig, dest: &Destination, rep: &mut Report) -> Result<()> {
    let mut st = cfg.clone();
    st.stationary.x_max = cfg.simulation.hist_max;
    rep.merge("analytic", run_stationary(&st, &dest.subdir("analytic"))?);
    let runs: Vec<(&str, ExperimentConfig)> = ["ps", "mfsta"]
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.simulation.variant = v.to_string();
            c.simulation.init = "point".into();
            (*v, c)
        })
        .collect();
    let (r0, r1) = rayon::join(
        || run_particles(&runs[0].1, &dest.subdir(runs[0].0), ""),
        || run_particles(&runs[1].1, &dest.subdir(runs[1].0), ""),
    );
    rep.merge(runs[0].0, r0?);
    rep.merge(runs[1].0, r1?);
    Ok(())
}

fn particle_figure_config(cfg: &ExperimentConfig, a: f64, exact: bool) -> ExperimentConfig {
    let mut c = with_model(cfg, |m| {
        m.a = a;
        m.x0 = 2.0;
        m.sigma = 1.0;
        m.alpha = 1.0;
    });
    c.simulation.t_end = 100.0;
    c.simulation.dt = 1e-2;
    c.simulation.n = if exact { 1_000_000 } else { cfg.simulation.n };
    // A weak mean reversion spreads the stationary law far to the right.
    c.simulation.hist_max = if a < 0.1 { 40.0 } else { 10.0 };
    c
}

fn mfg_baseline(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = with_model(cfg, |m| {
        *m = ModelParams { a: 0.5, x0: 2.0, r: 0.5, sigma: 1.0, q: 0.1, epsilon: 0.01, gamma: 1.0, alpha: 1.0 };
    });
    c.mfg.l = 10.0;
    c.mfg.t_end = 10.0;
    c.mfg.exit_cost = "zero".into();
    c
}

pub fn run_figure(tag: FigureTag, cfg: &ExperimentConfig, dest: &Destination, exact: bool) -> Result<Report> {
    dest.prepare()?;
    let mut rep = Report::default();
    match tag {
        FigureTag::F1 => {
            let mut c = with_model(cfg, |m| {
                m.a = 0.0;
                m.x0 = 2.0;
            });
            c.fixed_point.initial = "stationary".into();
            c.fixed_point.max_iter = 21;
            c.fixed_point.tol = 1e-12;
            if exact {
                c.fixed_point.n_paths = 1_000_000;
            }
            let r = run_fixed_point(&c, dest)?;
            // The fan has a fixed number of curves; hitting the iteration cap
            // is expected here.
            rep.outputs = r.outputs;
            rep.results = r.results;
        }
        FigureTag::F2 => rep = run_e0_surface(cfg, dest)?,
        FigureTag::F3 => density_comparison(&particle_figure_config(cfg, 0.01125, exact), dest, &mut rep)?,
        FigureTag::F4 => density_comparison(&particle_figure_config(cfg, 2.0, exact), dest, &mut rep)?,
        FigureTag::F5 | FigureTag::F6 => {
            let cases: &[(&str, f64)] = if tag == FigureTag::F5 { &[("a_0.01125", 0.01125), ("a_2", 2.0)] } else { &[("a_0.01125", 0.01125)] };
            for &(name, a) in cases {
                let c = particle_figure_config(cfg, a, exact);
                for v in ["ps", "mfsta"] {
                    let mut cv = c.clone();
                    cv.simulation.variant = v.into();
                    cv.simulation.snapshot_times = Vec::new();
                    rep.merge(&format!("{name}/{v}"), run_particles(&cv, &dest.subdir(name).subdir(v), "")?);
                }
            }
        }
        FigureTag::F7 => {
            let mut c = with_model(cfg, |m| {
                *m = ModelParams { a: 0.5, x0: 2.0, r: 0.5, sigma: 1.0, q: 0.1, epsilon: 0.5, gamma: 1.0, alpha: 1.0 };
            });
            c.mfg.t_end = 5.0;
            c.mfg.n_time = 50;
            c.mfg.exit_cost = "lq".into();
            rep.merge("ansatz", run_lq(&c, &dest.subdir("ansatz"))?);
            let sub = dest.subdir("mfg");
            sub.prepare()?;
            let (sol, params, mut r) = solve_configured_mfg(&c)?;
            write_mfg(&sol, &params, &sub, &mut r)?;
            let coef = compute_lq_coefficients(&c.model)?;
            let grid = sol.grid;
            let p = r.output(&sub, "u_slices.csv");
            let slices = [0.0, 2.0, 3.0, 5.0];
            write_table(
                &p,
                &["t", "x", "u", "u_ansatz"],
                slices.iter().flat_map(|&t| {
                    let n = ((t / grid.dt()).round() as usize).min(grid.n_time);
                    let row = sol.u[n].clone();
                    (0..grid.nodes()).map(move |i| vec![t, grid.x(i), row[i], coef.value(grid.x(i))])
                }),
            )?;
            rep.merge("mfg", r);
        }
        FigureTag::F8 => {
            let base = mfg_baseline(cfg);
            let runs: Vec<(&str, ExperimentConfig)> = vec![
                ("baseline", base.clone()),
                ("x0_3", with_model(&base, |m| m.x0 = 3.0)),
                ("a_1", with_model(&base, |m| m.a = 1.0)),
                ("sigma_0.8", with_model(&base, |m| m.sigma = 0.8)),
            ];
            use rayon::prelude::*;
            let results: Vec<Result<Report>> = runs
                .par_iter()
                .map(|(name, c)| -> Result<Report> {
                    let sub = dest.subdir(name);
                    sub.prepare()?;
                    let (sol, params, mut r) = solve_configured_mfg(c)?;
                    let mo = sol.moments(&params);
                    let grid = sol.grid;
                    let p = r.output(&sub, "default_rate.csv");
                    write_table(&p, &["t", "default_rate"], (0..mo.len()).map(|n| vec![grid.t(n), mo[n].rate]))?;
                    let p = r.output(&sub, "mean.csv");
                    write_table(&p, &["t", "mean"], (0..mo.len()).map(|n| vec![grid.t(n), mo[n].mean]))?;
                    let p = r.output(&sub, "final_density.csv");
                    let last = sol.m.last().expect("at least one time level");
                    write_table(&p, &["x", "m"], (0..grid.nodes()).map(|i| vec![grid.x(i), last[i]]))?;
                    Ok(r)
                })
                .collect();
            for ((name, _), r) in runs.iter().zip(results) {
                rep.merge(name, r?);
            }
        }
        FigureTag::F9 => rep = run_mfg(&mfg_baseline(cfg), dest)?,
    }
    rep.results.set("figure", format!("{tag:?}"));
    Ok(rep)
}
