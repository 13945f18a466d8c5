//! Subcommand implementations. Each writes its tables into the output
//! directory and finishes with a manifest.

use std::path::Path;

use rayon::prelude::*;
use sbdnet_core::fluid::{integrate_fluid, stability_witness_check, FluidOutcome, FluidState, StepControl, WitnessVerdict};
use sbdnet_core::heuristics::{
    cavity_fixed_point, poisson_critical_rate, BisectionSettings, PoissonKernel, PoissonSolution,
};
use sbdnet_core::lattice::{
    build_discrete_pathloss, lattice_simulate, lattice_threshold, transience_threshold, KernelMode, LatticeConfig,
    LatticeError, LatticeTrajectory, Tessellation,
};
use sbdnet_core::sim::{simulate, EventKind, SimConfig, SimError, StopReason, Trajectory};
use sbdnet_core::stability::{lambda_bounds_with, load_factor};
use sbdnet_core::stats::{
    classify_stability, default_window, ergodic_density, staying_times, StabilitySettings, Verdict, PALM_BIAS_PRESET,
};
use sbdnet_core::{ClassProfile, ClassSet, Error};
use serde::Serialize;

use crate::config::{ExperimentConfig, KernelSpec, LambdaSpec, ProfileSpec, RatePoint, Resolved};
use crate::error::CliError;
use crate::output::{num, Manifest, Output, Table};

/// `1-2` for the class of bands 1 and 2.
pub fn class_label(c: ClassSet) -> String {
    c.bands().iter().map(|b| b.to_string()).collect::<Vec<_>>().join("-")
}

fn rel(r: &RatePoint) -> String {
    r.relative.map(num).unwrap_or_default()
}

fn stop_label(s: StopReason) -> &'static str {
    match s {
        StopReason::Budget => "budget",
        StopReason::Quiescent => "quiescent",
        StopReason::Explosion => "explosion",
    }
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Stable => "stable",
        Verdict::Unstable => "unstable",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn finish(out: Output, command: &str, cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    out.finish(command, &cfg.name, &cfg.hash(), &cfg.seeds)
}

fn lattice_eps(cfg: &ExperimentConfig) -> f64 {
    cfg.lattice.eps.unwrap_or(cfg.domain.side / 20.0)
}

fn eps_table(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.lattice.eps_table.is_empty() {
        [5.0, 10.0, 20.0, 40.0].iter().map(|d| cfg.domain.side / d).collect()
    } else {
        cfg.lattice.eps_table.clone()
    }
}

#[derive(Debug, Serialize)]
pub struct LambdaCReport {
    pub load_factor: f64,
    pub mean_pathloss: f64,
    pub lambda_c: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub non_symmetric_warning: bool,
    pub resolved_rates: Vec<RatePoint>,
}

/// `λ_c`, its bounds and the lattice thresholds over the cell sizes.
pub fn lambda_c(cfg: &ExperimentConfig, dir: &Path) -> Result<LambdaCReport, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let (lower, upper) = lambda_bounds_with(&res.profile, &res.dom, &res.pl, res.critical.mean_pathloss);
    let report = LambdaCReport {
        load_factor: load_factor(&res.profile),
        mean_pathloss: res.critical.mean_pathloss,
        lambda_c: res.critical.value,
        lower_bound: lower,
        upper_bound: upper,
        non_symmetric_warning: res.critical.non_symmetric_warning,
        resolved_rates: res.rates.clone(),
    };
    println!("load factor      {}", report.load_factor);
    println!("mean path loss   {}", report.mean_pathloss);
    println!("lambda_c         {}", report.lambda_c);
    println!("bounds           [{}, {}]", lower, upper);
    if report.non_symmetric_warning {
        println!("warning: profile is not symmetric; lambda_c is only a reference value");
    }
    out.write_json("lambda_c.json", &report)?;
    if res.dom.link_length() == 0.0 {
        let mut table = Table::new(["eps", "lambda_upper_eps", "lambda_lower_eps"]);
        println!("{:>10} {:>16} {:>16}", "eps", "upper chain", "lower chain");
        for eps in eps_table(cfg) {
            let t = Tessellation::new(res.dom, eps)?;
            let up = lattice_threshold(&build_discrete_pathloss(&t, &res.pl, KernelMode::Upper), &res.profile).value;
            let lo = transience_threshold(&t, &res.pl, &res.profile).value;
            println!("{eps:>10} {up:>16.8} {lo:>16.8}");
            table.push(vec![num(eps), num(up), num(lo)]);
        }
        out.write_table("eps_table.csv", &table)?;
    } else {
        println!("lattice thresholds need a zero link length; table skipped");
    }
    finish(out, "lambda-c", cfg)?;
    Ok(report)
}

struct SimRun {
    index: usize,
    rate: RatePoint,
    seed: u64,
    traj: Trajectory,
}

fn run_simulations(cfg: &ExperimentConfig, res: &Resolved) -> Result<Vec<SimRun>, CliError> {
    let jobs: Vec<(usize, RatePoint, u64)> =
        res.rates.iter().enumerate().flat_map(|(i, r)| cfg.seeds.iter().map(move |&s| (i, *r, s))).collect();
    jobs.par_iter()
        .map(|&(index, rate, seed)| {
            let sc = SimConfig::new(res.dom, res.pl.clone(), res.profile.clone(), rate.lambda, cfg.n0, seed, res.budget)?
                .with_population_cap(cfg.budget.population_cap);
            let traj = match simulate(&sc) {
                Ok(t) => t,
                Err(SimError::Explosion { partial, .. }) => *partial,
                Err(e) => return Err(e.into()),
            };
            Ok(SimRun { index, rate, seed, traj })
        })
        .collect()
}

fn summary_table(cfg: &ExperimentConfig, res: &Resolved, runs: &[SimRun]) -> Result<Table, CliError> {
    let labels: Vec<String> = res.profile.classes().map(class_label).collect();
    let mut header: Vec<String> = [
        "rate_index", "relative", "lambda", "seed", "events", "end_time", "stop", "final_total", "max_total", "verdict",
        "slope", "slope_low", "slope_high",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().map(|l| format!("density[{l}]")));
    header.extend(labels.iter().map(|l| format!("density_se[{l}]")));
    let mut table = Table::new(header);
    let settings = StabilitySettings {
        confidence: cfg.stats.confidence,
        population_cap: cfg.budget.population_cap,
        ..StabilitySettings::default()
    };
    for r in runs {
        let v = classify_stability(&r.traj, &settings);
        let (slope, lo, hi) = v.pooled.map_or((String::new(), String::new(), String::new()), |f| {
            (num(f.slope), num(f.interval.0), num(f.interval.1))
        });
        let mut row = vec![
            r.index.to_string(),
            rel(&r.rate),
            num(r.rate.lambda),
            r.seed.to_string(),
            r.traj.len().to_string(),
            num(r.traj.end_time),
            stop_label(r.traj.stop).to_string(),
            r.traj.final_total().to_string(),
            v.max_total.to_string(),
            verdict_label(v.verdict).to_string(),
            slope,
            lo,
            hi,
        ];
        let (start, len) = default_window(&r.traj);
        let mut dens = Vec::new();
        let mut ses = Vec::new();
        for c in res.profile.classes() {
            match ergodic_density(&r.traj, res.dom.area(), c, start, len, cfg.stats.bias_factor) {
                Ok(d) => {
                    dens.push(num(d.density));
                    ses.push(d.std_error.map(num).unwrap_or_default());
                }
                Err(_) => {
                    dens.push(String::new());
                    ses.push(String::new());
                }
            }
        }
        row.extend(dens);
        row.extend(ses);
        table.push(row);
    }
    Ok(table)
}

fn trajectory_table(traj: &Trajectory) -> Table {
    let mut t = Table::new(["time", "kind", "class", "total", "staying_time"]);
    for e in &traj.events {
        t.push(vec![
            num(e.time),
            if e.kind == EventKind::Arrival { "arrival" } else { "departure" }.into(),
            class_label(e.class),
            e.total.to_string(),
            e.staying_time.map(num).unwrap_or_default(),
        ]);
    }
    t
}

/// Exact simulation for every rate and seed, with per-run event logs.
pub fn simulate_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let runs = run_simulations(cfg, &res)?;
    for r in &runs {
        out.write_table(&format!("trajectory_r{}_s{}.csv", r.index, r.seed), &trajectory_table(&r.traj))?;
    }
    let table = summary_table(cfg, &res, &runs)?;
    print_summary(&table);
    out.write_table("summary.csv", &table)?;
    finish(out, "simulate", cfg)
}

fn print_summary(table: &Table) {
    let col = |name: &str| table.header.iter().position(|h| h == name).unwrap();
    let (l, s, v, m) = (col("lambda"), col("seed"), col("verdict"), col("max_total"));
    for row in &table.rows {
        println!("lambda {:<22} seed {:<6} {:<13} max population {}", row[l], row[s], row[v], row[m]);
    }
}

/// Parallel rate × seed sweep with a verdict table and a majority vote per rate.
pub fn sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let runs = run_simulations(cfg, &res)?;
    let table = summary_table(cfg, &res, &runs)?;
    out.write_table("verdicts.csv", &table)?;
    let vcol = table.header.iter().position(|h| h == "verdict").unwrap();
    let mut votes = Table::new(["rate_index", "relative", "lambda", "stable", "unstable", "inconclusive", "majority"]);
    for (i, rate) in res.rates.iter().enumerate() {
        let rows: Vec<&Vec<String>> = table.rows.iter().filter(|r| r[0] == i.to_string()).collect();
        let count = |v: &str| rows.iter().filter(|r| r[vcol] == v).count();
        let (s, u, n) = (count("stable"), count("unstable"), count("inconclusive"));
        let majority = if 2 * s > rows.len() {
            "stable"
        } else if 2 * u > rows.len() {
            "unstable"
        } else {
            "inconclusive"
        };
        println!("lambda {:<22} stable {s} unstable {u} inconclusive {n} -> {majority}", num(rate.lambda));
        votes.push(vec![i.to_string(), rel(rate), num(rate.lambda), s.to_string(), u.to_string(), n.to_string(), majority.into()]);
    }
    out.write_table("sweep_summary.csv", &votes)?;
    finish(out, "sweep", cfg)
}

fn kernel_mode(k: KernelSpec) -> KernelMode {
    match k {
        KernelSpec::Upper => KernelMode::Upper,
        KernelSpec::Lower => KernelMode::Lower,
    }
}

/// Lattice bounding-chain runs at cell size `lattice.eps`.
pub fn lattice_sim(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let tess = Tessellation::new(res.dom, lattice_eps(cfg))?;
    let dpl = build_discrete_pathloss(&tess, &res.pl, kernel_mode(cfg.lattice.kernel));
    let jobs: Vec<(usize, RatePoint, u64)> =
        res.rates.iter().enumerate().flat_map(|(i, r)| cfg.seeds.iter().map(move |&s| (i, *r, s))).collect();
    let runs: Vec<(usize, RatePoint, u64, LatticeTrajectory)> = jobs
        .par_iter()
        .map(|&(i, rate, seed)| {
            let mut lc = LatticeConfig::new(rate.lambda, cfg.n0, seed, res.budget)?;
            lc.population_cap = cfg.budget.population_cap as u64;
            let traj = match lattice_simulate(&dpl, &res.profile, &lc, None) {
                Ok((t, _)) => t,
                Err(LatticeError::Explosion { partial, .. }) => *partial,
                Err(e) => return Err(CliError::from(e)),
            };
            Ok((i, rate, seed, traj))
        })
        .collect::<Result<_, CliError>>()?;
    let mut summary =
        Table::new(["rate_index", "relative", "lambda", "seed", "events", "end_time", "stop", "final_total", "mean_total"]);
    for (i, rate, seed, traj) in &runs {
        let mut t = Table::new(["time", "kind", "cell", "class", "total"]);
        for e in &traj.events {
            t.push(vec![
                num(e.time),
                if e.kind == EventKind::Arrival { "arrival" } else { "departure" }.into(),
                e.cell.to_string(),
                class_label(e.class),
                e.total.to_string(),
            ]);
        }
        out.write_table(&format!("lattice_r{i}_s{seed}.csv"), &t)?;
        summary.push(vec![
            i.to_string(),
            rel(rate),
            num(rate.lambda),
            seed.to_string(),
            traj.events.len().to_string(),
            num(traj.end_time),
            stop_label(traj.stop).into(),
            traj.final_total().to_string(),
            num(traj.mean_total()),
        ]);
    }
    print_lattice(&summary);
    out.write_table("lattice_summary.csv", &summary)?;
    finish(out, "lattice-sim", cfg)
}

fn print_lattice(t: &Table) {
    for row in &t.rows {
        println!("lambda {:<22} seed {:<6} stop {:<10} mean population {}", row[2], row[3], row[6], row[8]);
    }
}

#[derive(Debug, Serialize)]
struct FluidReport {
    lambda: f64,
    threshold: f64,
    witness_certified: bool,
    outcome: String,
    drained_at: Option<f64>,
    clipped: bool,
    steps: usize,
    initial_mass: f64,
    final_mass: f64,
}

/// Fluid model of the upper chain, started on a multiple of the witness.
pub fn fluid(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let tess = Tessellation::new(res.dom, lattice_eps(cfg))?;
    let dpl = build_discrete_pathloss(&tess, &res.pl, kernel_mode(cfg.lattice.kernel));
    let threshold = lattice_threshold(&dpl, &res.profile).value;
    let x0 = FluidState::witness(tess.cell_count(), &res.profile, cfg.fluid.scale);
    let control = StepControl { record_every: cfg.fluid.record_every, ..StepControl::default() };
    let mut reports = Vec::new();
    for (i, rate) in res.rates.iter().enumerate() {
        let traj = integrate_fluid(&x0, cfg.fluid.horizon, &dpl, &res.profile, rate.lambda, &control)?;
        let mut t = Table::new(["time", "mass"]);
        for (time, m) in traj.times.iter().zip(traj.total_mass()) {
            t.push(vec![num(*time), num(m)]);
        }
        out.write_table(&format!("fluid_r{i}.csv"), &t)?;
        let certified = matches!(stability_witness_check(&dpl, &res.profile, rate.lambda)?, WitnessVerdict::Stable { .. });
        let (outcome, drained_at) = match traj.outcome {
            FluidOutcome::Completed => ("completed".to_string(), None),
            FluidOutcome::DrainedAtTime(t) => ("drained".to_string(), Some(t)),
        };
        let r = FluidReport {
            lambda: rate.lambda,
            threshold,
            witness_certified: certified,
            outcome,
            drained_at,
            clipped: traj.clipped,
            steps: traj.steps,
            initial_mass: x0.total_mass(),
            final_mass: traj.terminal().total_mass(),
        };
        println!("lambda {:<22} threshold {:<22} {} final mass {}", num(r.lambda), num(threshold), r.outcome, num(r.final_mass));
        reports.push(r);
    }
    out.write_json("fluid.json", &reports)?;
    finish(out, "fluid", cfg)
}

#[derive(Debug, Serialize)]
struct SolutionExport {
    lambda: f64,
    mu: std::collections::BTreeMap<String, f64>,
    #[serde(rename = "I", skip_serializing_if = "Option::is_none")]
    i: Option<std::collections::BTreeMap<String, f64>>,
    residual: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    second_fixed_point: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn by_class(profile: &ClassProfile, v: &[f64]) -> std::collections::BTreeMap<String, f64> {
    profile.classes().map(|c| (class_label(c), v[c.index()])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    Poisson,
    Cavity,
}

pub fn poisson_solutions(res: &Resolved, n0: f64) -> Result<Vec<(PoissonSolution, bool)>, CliError> {
    let kernel = PoissonKernel::new(res.profile.k(), &res.dom, &res.pl, n0, &res.solver)?;
    res.rates
        .iter()
        .map(|r| {
            let sol = kernel.solve(&res.profile, r.lambda, &res.solver)?;
            let second = kernel.second_fixed_point(&res.profile, &sol, &res.solver)?.is_some();
            Ok((sol, second))
        })
        .collect()
}

/// Fixed points of one heuristic for every configured rate.
pub fn heuristic(cfg: &ExperimentConfig, kind: HeuristicKind, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let mut exports = Vec::new();
    let mut table = Table::new(["lambda", "class", "mu", "I"]);
    match kind {
        HeuristicKind::Poisson => {
            for (sol, second) in poisson_solutions(&res, cfg.n0)? {
                for c in res.profile.classes() {
                    table.push(vec![num(sol.lambda), class_label(c), num(sol.mu[c.index()]), String::new()]);
                }
                exports.push(SolutionExport {
                    lambda: sol.lambda,
                    mu: by_class(&res.profile, &sol.mu),
                    i: None,
                    residual: sol.residual,
                    iterations: sol.iterations,
                    converged: sol.converged,
                    second_fixed_point: Some(second),
                    error: None,
                });
            }
        }
        HeuristicKind::Cavity => {
            for rate in &res.rates {
                match cavity_fixed_point(&res.profile, &res.dom, &res.pl, rate.lambda, cfg.n0, &res.solver) {
                    Ok(sol) => {
                        for c in res.profile.classes() {
                            table.push(vec![num(sol.lambda), class_label(c), num(sol.mu_s[c.index()]), num(sol.i[c.index()])]);
                        }
                        exports.push(SolutionExport {
                            lambda: sol.lambda,
                            mu: by_class(&res.profile, &sol.mu_s),
                            i: Some(by_class(&res.profile, &sol.i)),
                            residual: sol.residual,
                            iterations: sol.iterations,
                            converged: sol.converged,
                            second_fixed_point: None,
                            error: None,
                        });
                    }
                    Err(e @ Error::NoConvergence { iterations, .. }) => exports.push(SolutionExport {
                        lambda: rate.lambda,
                        mu: Default::default(),
                        i: None,
                        residual: f64::INFINITY,
                        iterations,
                        converged: false,
                        second_fixed_point: None,
                        error: Some(e.to_string()),
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    for e in &exports {
        let mu: Vec<String> = e.mu.iter().map(|(k, v)| format!("{k}: {}", num(*v))).collect();
        println!("lambda {:<22} converged {:<5} {}", num(e.lambda), e.converged, mu.join(", "));
    }
    let name = match kind {
        HeuristicKind::Poisson => "poisson",
        HeuristicKind::Cavity => "cavity",
    };
    out.write_json(&format!("{name}.json"), &exports)?;
    out.write_table(&format!("{name}.csv"), &table)?;
    finish(out, &format!("heuristic {name}"), cfg)
}

#[derive(Debug, Serialize)]
pub struct LambdaPReport {
    pub lambda_p: f64,
    pub infeasible_above: f64,
    pub lambda_c: f64,
    pub ratio: f64,
    pub n0: f64,
    pub solves: usize,
}

pub fn lambda_p_of(res: &Resolved, cfg: &ExperimentConfig) -> Result<LambdaPReport, CliError> {
    let settings = BisectionSettings { rel_width: cfg.solver.bisection_width, solver: res.solver };
    let lp = poisson_critical_rate(&res.profile, &res.dom, &res.pl, cfg.n0, &settings)?;
    Ok(LambdaPReport {
        lambda_p: lp.value,
        infeasible_above: lp.infeasible_above,
        lambda_c: lp.critical_rate,
        ratio: lp.value / lp.critical_rate,
        n0: cfg.n0,
        solves: lp.solves,
    })
}

/// The Poisson-heuristic estimate `λ_P` next to `λ_c`.
pub fn lambda_p(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, CliError> {
    let res = cfg.resolve()?;
    let mut out = Output::create(dir)?;
    let report = lambda_p_of(&res, cfg)?;
    println!("lambda_P  {}", report.lambda_p);
    println!("lambda_c  {}", report.lambda_c);
    println!("ratio     {}", report.ratio);
    out.write_json("lambda_p.json", &report)?;
    finish(out, "lambda-p", cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    FigPop,
    FigDelay,
    FigDensity,
    FigLambda,
}

fn with_relative(cfg: &ExperimentConfig, rel: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig { lambda: LambdaSpec { absolute: None, relative: Some(rel) }, ..cfg.clone() }
}

/// Plot-ready tables for the standard experiments.
pub fn preset(cfg: &ExperimentConfig, which: Preset, dir: &Path) -> Result<Manifest, CliError> {
    let mut out = Output::create(dir)?;
    let name = match which {
        Preset::FigPop => "fig-pop",
        Preset::FigDelay => "fig-delay",
        Preset::FigDensity => "fig-density",
        Preset::FigLambda => "fig-lambda",
    };
    match which {
        Preset::FigPop | Preset::FigDelay => {
            // one seed at each side of the critical rate
            let c = ExperimentConfig { seeds: vec![cfg.seeds[0]], ..with_relative(cfg, vec![0.9, 1.1]) };
            let res = c.resolve()?;
            let runs = run_simulations(&c, &res)?;
            for r in &runs {
                let label = num(r.rate.relative.unwrap_or(r.rate.lambda));
                if which == Preset::FigPop {
                    let labels: Vec<String> = res.profile.classes().map(|c| format!("count[{}]", class_label(c))).collect();
                    let mut header = vec!["time".to_string(), "total".to_string()];
                    header.extend(labels);
                    let mut t = Table::new(header);
                    let stride = (r.traj.len() / 2000).max(1);
                    for (k, (time, counts)) in r.traj.counts_after_events().enumerate() {
                        if k % stride == 0 || k + 1 == r.traj.len() {
                            let mut row = vec![num(time), counts.iter().sum::<usize>().to_string()];
                            row.extend(counts.iter().map(|n| n.to_string()));
                            t.push(row);
                        }
                    }
                    out.write_table(&format!("population_rel{label}.csv"), &t)?;
                } else {
                    let mut t = Table::new(["class", "time", "mean_staying_time"]);
                    for s in staying_times(&r.traj) {
                        let stride = (s.times.len() / 1000).max(1);
                        for (k, (time, m)) in s.times.iter().zip(&s.running_mean).enumerate() {
                            if k % stride == 0 || k + 1 == s.times.len() {
                                t.push(vec![class_label(s.class), num(*time), num(*m)]);
                            }
                        }
                    }
                    out.write_table(&format!("staying_time_rel{label}.csv"), &t)?;
                }
                println!("relative rate {label}: final population {}", r.traj.final_total());
            }
            out.write_table("summary.csv", &summary_table(&c, &res, &runs)?)?;
            finish(out, &format!("preset {name}"), &c)
        }
        Preset::FigDensity => {
            let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
            let c = with_relative(cfg, grid);
            let res = c.resolve()?;
            let runs = run_simulations(&c, &res)?;
            let poisson = poisson_solutions(&res, c.n0)?;
            let mut t = Table::new([
                "relative", "lambda", "class", "sim_density", "sim_se", "sim_density_palm", "poisson_mu", "cavity_mu",
            ]);
            for (i, rate) in res.rates.iter().enumerate() {
                let cav = cavity_fixed_point(&res.profile, &res.dom, &res.pl, rate.lambda, c.n0, &res.solver).ok();
                for cl in res.profile.classes() {
                    let ests: Vec<(f64, Option<f64>)> = runs
                        .iter()
                        .filter(|r| r.index == i)
                        .filter_map(|r| {
                            let (s, l) = default_window(&r.traj);
                            ergodic_density(&r.traj, res.dom.area(), cl, s, l, 1.0).ok().map(|d| (d.density, d.std_error))
                        })
                        .collect();
                    let n = ests.len() as f64;
                    let mean = ests.iter().map(|e| e.0).sum::<f64>() / n;
                    // pooled standard error of the seed average
                    let se = (ests.iter().map(|e| e.1.unwrap_or(0.0).powi(2)).sum::<f64>()).sqrt() / n;
                    t.push(vec![
                        rel(rate),
                        num(rate.lambda),
                        class_label(cl),
                        num(mean),
                        num(se),
                        num(PALM_BIAS_PRESET * mean),
                        num(poisson[i].0.mu[cl.index()]),
                        cav.as_ref().map(|s| num(s.mu_s[cl.index()])).unwrap_or_default(),
                    ]);
                }
            }
            out.write_table("density.csv", &t)?;
            println!("wrote {} rows", t.rows.len());
            finish(out, &format!("preset {name}"), &c)
        }
        Preset::FigLambda => {
            let mut t = Table::new(["p12", "lambda_c", "lambda_p", "ratio"]);
            let (l1, l12) = match &cfg.profile {
                ProfileSpec::Symmetric { k: 2, l, .. } => (l[0], l[1]),
                _ => {
                    let p = cfg.build_profile()?;
                    if p.k() != 2 || !p.is_symmetric() {
                        return Err(CliError::Schema("fig-lambda needs a symmetric K=2 profile".into()));
                    }
                    (p.l(ClassSet::from_bands(&[1]).unwrap()), p.l(ClassSet::from_bands(&[1, 2]).unwrap()))
                }
            };
            let rows: Vec<Result<Vec<String>, CliError>> = (1..=9)
                .into_par_iter()
                .map(|i| {
                    let p12 = i as f64 / 10.0;
                    let c = ExperimentConfig {
                        profile: ProfileSpec::Symmetric { k: 2, p: vec![1.0 - p12, p12], l: vec![l1, l12] },
                        ..cfg.clone()
                    };
                    let res = c.resolve()?;
                    let r = lambda_p_of(&res, &c)?;
                    Ok(vec![num(p12), num(r.lambda_c), num(r.lambda_p), num(r.ratio)])
                })
                .collect();
            for row in rows {
                let row = row?;
                println!("p12 {:<4} lambda_c {:<20} lambda_P {:<20} ratio {}", row[0], row[1], row[2], row[3]);
                t.push(row);
            }
            out.write_table("lambda_p.csv", &t)?;
            finish(out, &format!("preset {name}"), cfg)
        }
    }
}
