use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use branching_target::hjb::{cfl_check, HjbError};
use branching_target::report::{
    write_dpp_csv, write_events_csv, write_growth_csv, write_population_csv, write_rates_csv, write_surface_csv,
};
use branching_target::scenario::ScenarioError;
use branching_target::simulate::{population_growth_report, SimError};
use branching_target::target::{dpp_residual, DppTime, TargetError};
use branching_target::verify::{run_suite, Level};
use branching_target::{
    estimate_value, extract_feedback, solve_vi, ConstantControl, FeedbackControl, GridSpec, Label, McConfig,
    PointMeasure, Problem, Scenario, SimConfig,
};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{CliError, Common, DppArgs, GridArgs, LevelArg, SimulateArgs, SolveArgs, ValueMcArgs, VerifyArgs};

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<HjbError> for CliError {
    fn from(e: HjbError) -> Self {
        match e {
            HjbError::Cfl { dt, max_dt, min_nt } => CliError::Numerical(format!(
                "time step {dt} exceeds the stability bound {max_dt}; suggested dt <= {max_dt:.6} (--nt {min_nt} or more)"
            )),
            HjbError::Grid(_) | HjbError::MixedSignCone(_) => CliError::Numerical(e.to_string()),
            HjbError::Dimension { .. } => CliError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Explosion { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TargetError> for CliError {
    fn from(e: TargetError) -> Self {
        match e {
            TargetError::Simulation(s) => s.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

struct Run {
    scenario: Scenario,
    problem: Problem,
    manifest: RunManifest,
    started: Instant,
}

fn start(command: &str, common: &Common) -> Result<Run, CliError> {
    let started = Instant::now();
    let scenario = Scenario::load(&common.scenario)?;
    let problem = scenario.build()?;
    fs::create_dir_all(&common.out)?;
    let manifest = RunManifest::new(command, &common.scenario, scenario.digest());
    Ok(Run { scenario, problem, manifest, started })
}

impl Run {
    fn output(
        &mut self,
        dir: &Path,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        fill(&mut w)?;
        w.flush()?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        self.output(dir, name, |w| writeln!(w, "{text}"))
    }

    fn finish(self, dir: &Path) -> Result<(), CliError> {
        self.manifest.write(dir, self.started)?;
        Ok(())
    }
}

/// Scenario defaults overridden by the flags; `nt` defaults to the
/// smallest value the stability bound allows.
fn build_grid(problem: &Problem, args: &GridArgs) -> Result<GridSpec, CliError> {
    let mut grid = problem.default_grid(args.nx, args.depth);
    let moved = args.x_lo.is_some() || args.x_hi.is_some();
    grid.x_lo = args.x_lo.unwrap_or(grid.x_lo);
    grid.x_hi = args.x_hi.unwrap_or(grid.x_hi);
    if moved {
        grid.epsilon = GridSpec::grid_scale_epsilon(&*problem.model, grid.x_lo, grid.x_hi);
    }
    if let Some(e) = args.epsilon {
        grid.epsilon = e;
    }
    if let Some(k) = args.children {
        grid.offspring_index_cap = k;
    }
    grid.validate(problem.horizon()).map_err(|e| CliError::Numerical(e.to_string()))?;
    let cfl = cfl_check(&*problem.model, &grid, problem.horizon());
    grid.nt = match args.nt {
        Some(nt) => nt,
        None => cfl.min_nt,
    };
    let cfl = cfl_check(&*problem.model, &grid, problem.horizon());
    if !cfl.ok {
        return Err(HjbError::Cfl { dt: cfl.dt, max_dt: cfl.max_dt, min_nt: cfl.min_nt }.into());
    }
    Ok(grid)
}

fn check_dt(dt: f64, horizon: f64) -> Result<(), CliError> {
    if dt > 0.0 && dt <= horizon {
        Ok(())
    } else {
        Err(CliError::Input(format!("--dt must lie in (0, {horizon}], got {dt}")))
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut run = start("simulate", &args.common)?;
    let out = &args.common.out;
    let p = &run.problem;
    check_dt(args.dt, p.horizon())?;
    if args.paths == 0 {
        return Err(CliError::Input("--paths must be positive".into()));
    }
    let sim = p.simulator();
    let init = PointMeasure::singleton(Label::root(), vec![p.x0, args.y0]);
    let mut cfg = SimConfig::new(args.dt, args.seed);
    cfg.population_cap = args.population_cap;
    let control = ConstantControl(args.control);
    let paths = sim.simulate_many(0.0, &init, &control, &cfg, args.paths).into_iter().collect::<Result<Vec<_>, _>>()?;
    let sizes: Vec<usize> = paths.iter().map(|p| p.max_size).collect();
    let growth = population_growth_report(&sizes, init.len(), &p.law, p.horizon());

    run.manifest.seeds.push(args.seed);
    run.manifest.set("paths", args.paths);
    run.manifest.set("dt", args.dt);
    run.manifest.set("control", control.name());
    run.manifest.set("y0", args.y0);
    run.manifest.set("population_cap", args.population_cap);
    run.output(out, "population.csv", |w| write_population_csv(w, &paths))?;
    run.output(out, "events.csv", |w| write_events_csv(w, &paths))?;
    run.output(out, "growth.csv", |w| write_growth_csv(w, &growth, &paths))?;
    println!(
        "{} paths; E sup|V| = {:.4} ± {:.4} (bound {:.4})",
        args.paths, growth.mean_sup_size, growth.se, growth.bound
    );
    run.finish(out)
}

/// Constant controls spread over the control range: the riskless end,
/// quartiles and the top.
fn constant_family(problem: &Problem) -> Vec<ConstantControl> {
    let grid = problem.model.controls();
    let mut v: Vec<f64> =
        [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|q| grid.nearest(grid.min() + q * (grid.max() - grid.min()))).collect();
    v.dedup();
    v.into_iter().map(ConstantControl).collect()
}

pub fn value_mc(args: &ValueMcArgs) -> Result<(), CliError> {
    let mut run = start("value-mc", &args.common)?;
    let out = &args.common.out;
    let p = &run.problem;
    check_dt(args.dt, p.horizon())?;
    let constants = constant_family(p);
    let mut family: Vec<&dyn FeedbackControl> = constants.iter().map(|c| c as &dyn FeedbackControl).collect();
    let pde;
    let mut grid = None;
    if args.with_pde {
        let g = build_grid(p, &args.grid)?;
        let surface = solve_vi(&*p.model, &p.law, &p.target, &g)?;
        pde = extract_feedback(&surface, &*p.model, g.epsilon)?;
        family.push(&pde);
        grid = Some(g);
    }
    let (lo, hi) = p.search_bracket();
    let bracket = (args.lo.unwrap_or(lo), args.hi.unwrap_or(hi));
    let mc = McConfig { n_paths: args.paths, seed: args.seed, dt: args.dt, eta: args.eta, tol: args.tol };
    let mu = PointMeasure::singleton(Label::root(), vec![p.x0]);
    let est = estimate_value(&p.simulator(), &p.target, 0.0, &mu, &family, bracket, &mc)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        x0: f64,
        y_hat: f64,
        failure_rate_at_y_hat: f64,
        ci_halfwidth: f64,
        bracket: (f64, f64),
        best_control: &'a str,
        closed_form_bounds: Option<(f64, f64)>,
    }
    let summary = Summary {
        x0: p.x0,
        y_hat: est.y_hat,
        failure_rate_at_y_hat: est.failure_rate_at_y_hat,
        ci_halfwidth: est.ci_halfwidth,
        bracket: est.bracket,
        best_control: &est.best_control,
        closed_form_bounds: p.value_bounds(0.0),
    };
    println!(
        "v̂(0, {}) = {:.4} (failure {:.4} ± {:.4}, control {})",
        p.x0, est.y_hat, est.failure_rate_at_y_hat, est.ci_halfwidth, est.best_control
    );
    run.manifest.seeds.push(args.seed);
    run.manifest.grid = grid;
    run.manifest.set("monte_carlo", mc);
    run.manifest.set("search_bracket", bracket);
    run.json(out, "value.json", &summary)?;
    run.output(out, "rates.csv", |w| write_rates_csv(w, &est.evaluations))?;
    run.finish(out)
}

pub fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let mut run = start("solve", &args.common)?;
    let out = &args.common.out;
    let p = &run.problem;
    let grid = build_grid(p, &args.grid)?;
    let surface = solve_vi(&*p.model, &p.law, &p.target, &grid)?;
    let feedback = extract_feedback(&surface, &*p.model, grid.epsilon)?;
    let cfl = cfl_check(&*p.model, &grid, p.horizon());

    #[derive(Serialize)]
    struct Summary {
        x0: f64,
        root_value: Option<f64>,
        closed_form_bounds: Option<(f64, f64)>,
        labels: usize,
        children_per_node: u32,
        literal_k_bar: u32,
        dt: f64,
        max_stable_dt: f64,
        obstacle_violation: f64,
        facelift_violation: f64,
        empty_kernel_nodes: usize,
    }
    let summary = Summary {
        x0: p.x0,
        root_value: surface.value(&Label::root(), grid.t0, p.x0),
        closed_form_bounds: p.value_bounds(grid.t0),
        labels: surface.labels.len(),
        children_per_node: surface.children_per_node,
        literal_k_bar: surface.literal_k_bar,
        dt: cfl.dt,
        max_stable_dt: cfl.max_dt,
        obstacle_violation: surface.obstacle_violation().max(0.0),
        facelift_violation: surface.facelift_violation(),
        empty_kernel_nodes: feedback.flagged_count(),
    };
    match summary.root_value {
        Some(v) => {
            println!("v̄(0, {}) = {v:.6} on {} labels, nx = {}, nt = {}", p.x0, surface.labels.len(), grid.nx, grid.nt)
        }
        None => println!("x0 = {} lies outside the grid", p.x0),
    }
    run.manifest.grid = Some(grid);
    run.manifest.set("stride", args.stride);
    run.output(out, "surface.csv", |w| write_surface_csv(w, &surface, Some(&feedback), args.stride))?;
    run.json(out, "solve.json", &summary)?;
    run.finish(out)
}

fn parse_theta(s: &str) -> Result<DppTime, CliError> {
    if s == "first-branch" {
        return Ok(DppTime::FirstBranch);
    }
    s.parse::<f64>()
        .map(DppTime::Fixed)
        .map_err(|_| CliError::Input(format!("--theta expects a time or `first-branch`, got {s}")))
}

pub fn dpp_check(args: &DppArgs) -> Result<(), CliError> {
    let mut run = start("dpp-check", &args.common)?;
    let out = &args.common.out;
    let p = &run.problem;
    check_dt(args.dt, p.horizon())?;
    let theta = parse_theta(&args.theta)?;
    let grid = build_grid(p, &args.grid)?;
    let surface = solve_vi(&*p.model, &p.law, &p.target, &grid)?;
    let feedback = extract_feedback(&surface, &*p.model, grid.epsilon)?;
    let mc = McConfig::new(args.paths, args.seed, args.dt);
    let mu = PointMeasure::singleton(Label::root(), vec![p.x0]);
    let rep = dpp_residual(&p.simulator(), 0.0, &mu, theta, &surface, &feedback, args.slack, &mc)?;
    println!(
        "θ = {}: violation rate {:.4}, out of domain {:.4} ({} paths)",
        args.theta, rep.violation_rate, rep.out_of_domain_rate, rep.n_paths
    );
    run.manifest.seeds.push(args.seed);
    run.manifest.grid = Some(grid);
    run.manifest.set("theta", &args.theta);
    run.manifest.set("slack", args.slack);
    run.manifest.set("max_violation", args.max_violation);
    run.manifest.set("monte_carlo", mc);
    let rows = vec![(args.theta.clone(), rep.clone())];
    run.output(out, "dpp.csv", |w| write_dpp_csv(w, &rows))?;
    run.finish(out)?;
    if rep.violation_rate > args.max_violation {
        return Err(CliError::Check(format!("violation rate {} exceeds {}", rep.violation_rate, args.max_violation)));
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut run = start("verify", &args.common)?;
    let out = &args.common.out;
    let level = match args.level {
        LevelArg::Fast => Level::Fast,
        LevelArg::Full => Level::Full,
    };
    let report = run_suite(&run.scenario, level)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    run.manifest.set("level", level);
    run.json(out, "report.json", &report)?;
    run.finish(out)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.id.as_str()).collect();
        Err(CliError::Check(format!("failed checks: {}", failed.join(", "))))
    }
}
