//! The acceptance suite: property checks tying the simulator, the Monte
//! Carlo target engine and the PDE solver together.
//!
//! Each check returns numbers plus a verdict; `run_suite` collects them into
//! a machine-readable report.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::hjb::{delta_distance, extract_feedback, kernel, solve_vi, GridSpec, ValueSurface};
use crate::labels::Label;
use crate::model::OffspringLaw;
use crate::population::PointMeasure;
use crate::report::{write_events_csv, write_population_csv, write_surface_csv};
use crate::scenario::{strike_boundedness, Problem, Scenario};
use crate::simulate::{mean_and_se, population_growth_report, ConstantControl, FeedbackControl, SimConfig, Simulator};
use crate::target::{branching_consistency, monotonicity_violations, success_probability, McConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
}

impl CheckResult {
    fn new(id: &str, name: &str) -> Self {
        CheckResult {
            id: id.into(),
            name: name.into(),
            status: Status::Skip,
            detail: String::new(),
            metrics: BTreeMap::new(),
            seconds: 0.0,
        }
    }

    fn metric(&mut self, key: &str, v: f64) -> &mut Self {
        self.metrics.insert(key.into(), v);
        self
    }

    fn verdict(mut self, ok: bool, detail: String, started: Instant) -> Self {
        self.status = if ok { Status::Pass } else { Status::Fail };
        self.detail = detail;
        self.seconds = started.elapsed().as_secs_f64();
        self
    }

    fn skip(mut self, why: &str) -> Self {
        self.detail = why.into();
        self
    }

    fn error(self, err: impl std::fmt::Display, started: Instant) -> Self {
        self.verdict(false, format!("error: {err}"), started)
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    /// `PASS [3] branching property: …`
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!("{tag} [{}] {}: {} ({:.2} s)", self.id, self.name, self.detail, self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub scenario_digest: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Sample sizes per level; `Full` uses the acceptance sizes.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSizes {
    pub growth_paths: usize,
    pub monotone_pairs: usize,
    pub branching_paths: usize,
    pub consistency_paths: usize,
    pub flow_paths: usize,
}

impl SuiteSizes {
    pub fn for_level(level: Level) -> Self {
        match level {
            Level::Full => SuiteSizes {
                growth_paths: 10_000,
                monotone_pairs: 1_000,
                branching_paths: 4_000,
                consistency_paths: 2_000,
                flow_paths: 10_000,
            },
            Level::Fast => SuiteSizes {
                growth_paths: 2_000,
                monotone_pairs: 200,
                branching_paths: 1_000,
                consistency_paths: 500,
                flow_paths: 2_000,
            },
        }
    }
}

const SEED: u64 = 20_240_601;
const MC_DT: f64 = 0.01;

fn root_at(x: f64) -> PointMeasure {
    PointMeasure::singleton(Label::root(), vec![x])
}

/// Declared strike bound holds for the strike table (fintech only).
pub fn check_boundedness(scenario: &Scenario) -> CheckResult {
    let started = Instant::now();
    let c = CheckResult::new("B", "strike table boundedness");
    let Scenario::Fintech(spec) = scenario else {
        return c.skip("tabulated payoff is bounded by construction");
    };
    let b = strike_boundedness(spec);
    let mut c = c;
    c.metric("strike_sup", b.sup);
    if let Some(d) = b.declared {
        c.metric("declared_bound", d);
    }
    let detail = if b.ok {
        format!("sup K = {} within declared bound {:?}", b.sup, b.declared)
    } else {
        format!("strikes outside [0, {:?}]: {}", b.declared, b.offenders.join("; "))
    };
    c.verdict(b.ok, detail, started)
}

/// Mean of `sup_s |V_s|` for `γ = 1, p₀ = p₂ = ½`, one initial particle,
/// against `e^{γM(T−t)}` plus three standard errors; under 30 s.
pub fn check_population_bound(problem: &Problem, paths: usize) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("1", "population bound");
    let law = OffspringLaw::new(1.0, vec![(0, 0.5), (2, 0.5)]).expect("valid law");
    let sim = Simulator::new(problem.model.clone(), law.clone(), 1.0);
    let runs = sim.simulate_many(
        0.0,
        &root_at(problem.x0).with_target_level(0.0),
        &ConstantControl(0.5),
        &SimConfig::new(MC_DT, SEED),
        paths,
    );
    let mut sizes = Vec::with_capacity(paths);
    for r in runs {
        match r {
            Ok(p) => sizes.push(p.max_size),
            Err(e) => return c.error(e, started),
        }
    }
    let rep = population_growth_report(&sizes, 1, &law, 1.0);
    let secs = started.elapsed().as_secs_f64();
    c.metric("mean_sup_size", rep.mean_sup_size)
        .metric("se", rep.se)
        .metric("bound", rep.bound)
        .metric("paths", paths as f64);
    let ok = rep.within_bound && secs < 30.0;
    c.verdict(
        ok,
        format!(
            "E sup|V| = {:.4} ± {:.4} vs bound {:.4} (+3 SE), {paths} paths, {secs:.2} s < 30 s",
            rep.mean_sup_size, rep.se, rep.bound
        ),
        started,
    )
}

/// Common-noise pairs started at `y` and `y + 0.1`: the higher start must
/// stay weakly higher at every recorded time.
pub fn check_pathwise_monotonicity(problem: &Problem, pairs: usize) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("2", "pathwise monotonicity");
    let sim = problem.simulator();
    let mc = McConfig::new(pairs, SEED + 2, MC_DT);
    let mut total = 0usize;
    for a in [0.0, 0.5, 1.0] {
        match monotonicity_violations(&sim, 0.0, &root_at(problem.x0), 0.0, 0.1, &ConstantControl(a), &mc) {
            Ok(v) => total = total.saturating_add(v),
            Err(e) => return c.error(e, started),
        }
    }
    c.metric("violations", total as f64).metric("pairs", pairs as f64);
    c.verdict(total == 0, format!("{total} violations of Y' ≥ Y over {pairs} pairs × 3 controls"), started)
}

/// Two-particle value against the larger single-particle value; gap ≤ 0.15
/// at bisection tolerance 0.05, under 2 min.
pub fn check_branching_property(problem: &Problem, paths: usize) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("3", "branching property");
    let sim = problem.simulator();
    let x = problem.x0;
    let mu = PointMeasure::new(1, [(Label::from([0]), vec![x]), (Label::from([1]), vec![x])]).expect("antichain");
    let mc = McConfig { n_paths: paths, seed: SEED + 3, dt: MC_DT, eta: 0.01, tol: 0.05 };
    let (c0, c1, c2) = (ConstantControl(0.0), ConstantControl(0.5), ConstantControl(1.0));
    let family: [&dyn FeedbackControl; 3] = [&c0, &c1, &c2];
    let bc = match branching_consistency(&sim, &problem.target, 0.0, &mu, &family, problem.search_bracket(), &mc) {
        Ok(b) => b,
        Err(e) => return c.error(e, started),
    };
    let secs = started.elapsed().as_secs_f64();
    c.metric("lhs", bc.lhs.y_hat).metric("rhs", bc.rhs).metric("gap", bc.gap).metric("paths", paths as f64);
    let singles: Vec<String> = bc
        .singletons
        .iter()
        .map(|(l, e)| format!("{l}: {}", e.as_ref().map_or("below bracket".to_string(), |e| format!("{:.4}", e.y_hat))))
        .collect();
    c.verdict(
        bc.gap <= 0.15 && secs < 120.0,
        format!(
            "v̂(µ) = {:.4}, singletons [{}], gap {:.4} ≤ 0.15, {secs:.1} s < 120 s",
            bc.lhs.y_hat,
            singles.join(", "),
            bc.gap
        ),
        started,
    )
}

/// Root value on the default grid (depth 3, nx = 201).
pub fn solve_default(problem: &Problem, x: f64) -> Result<(ValueSurface, GridSpec), crate::hjb::HjbError> {
    let grid = problem.grid_around(x, 201, 3);
    let surface = solve_vi(&*problem.model, &problem.law, &problem.target, &grid)?;
    Ok((surface, grid))
}

/// PDE root value at `(0, x0)` inside the closed-form bracket (±0.01),
/// solved in under 60 s.
pub fn check_value_bracket(problem: &Problem) -> (CheckResult, Option<ValueSurface>) {
    let started = Instant::now();
    let mut c = CheckResult::new("4", "closed-form value bracket");
    let Some((lo, hi)) = problem.value_bounds(0.0) else {
        return (c.skip("no closed-form bracket for tabulated scenarios"), None);
    };
    let (surface, _) = match solve_default(problem, problem.x0) {
        Ok(s) => s,
        Err(e) => return (c.error(e, started), None),
    };
    let secs = started.elapsed().as_secs_f64();
    let v = surface.value(&Label::root(), 0.0, problem.x0).expect("x0 is on the grid");
    c.metric("value", v).metric("lower", lo).metric("upper", hi).metric("solve_seconds", secs);
    let ok = v >= lo - 1e-2 && v <= hi + 1e-2 && secs < 60.0;
    (
        c.verdict(
            ok,
            format!("v̄(0, {}) = {v:.4} in [{lo:.4}, {hi:.4}] ± 0.01, solved in {secs:.2} s < 60 s", problem.x0),
            started,
        ),
        Some(surface),
    )
}

/// Start used by the Monte Carlo/PDE consistency check. The put's value is
/// flat in `x` (it sits on its upper bound), and out of the money the
/// terminal constraint almost never binds, so the check starts in the money
/// at `S₀ = 0.15 K₀`.
pub fn consistency_start(problem: &Problem) -> f64 {
    match &problem.fintech {
        Some(p) if p.strike0 > 0.0 => (0.15 * p.strike0).ln(),
        _ => problem.x0,
    }
}

/// PDE feedback from `v̂ + 0.05` fails at most 5%; from `v̂ − 0.2` at
/// least 50%.
pub fn check_mc_pde_consistency(problem: &Problem, paths: usize) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("5", "MC-PDE consistency");
    let sim = problem.simulator();
    let mc = McConfig::new(paths, SEED + 5, MC_DT);
    let run = |x: f64| -> Result<(f64, f64, f64), String> {
        let (surface, grid) = solve_default(problem, x).map_err(|e| e.to_string())?;
        let v = surface.value(&Label::root(), 0.0, x).expect("start is on the grid");
        let fb = extract_feedback(&surface, &*problem.model, grid.epsilon).map_err(|e| e.to_string())?;
        let above = success_probability(&sim, &problem.target, 0.0, &root_at(x), v + 0.05, &fb, &mc)
            .map_err(|e| e.to_string())?;
        let below = success_probability(&sim, &problem.target, 0.0, &root_at(x), v - 0.2, &fb, &mc)
            .map_err(|e| e.to_string())?;
        Ok((v, 1.0 - above.rate, 1.0 - below.rate))
    };
    let x = consistency_start(problem);
    let (v, f_hi, f_lo) = match run(x) {
        Ok(r) => r,
        Err(e) => return c.error(e, started),
    };
    c.metric("x_start", x).metric("value", v).metric("failure_above", f_hi).metric("failure_below", f_lo);
    let mut detail = format!(
        "x = {x:.4}: v̂ = {v:.4}, failure {:.2}% at v̂+0.05 (≤ 5%), {:.2}% at v̂−0.2 (≥ 50%)",
        100.0 * f_hi,
        100.0 * f_lo
    );
    if x != problem.x0 {
        if let Ok((v0, a0, b0)) = run(problem.x0) {
            c.metric("value_at_x0", v0).metric("failure_above_at_x0", a0).metric("failure_below_at_x0", b0);
            detail.push_str(&format!("; at x0: {:.2}% / {:.2}%", 100.0 * a0, 100.0 * b0));
        }
    }
    c.verdict(f_hi <= 0.05 && f_lo >= 0.5, detail, started)
}

/// Fintech kernel `{p} ∩ [0,1]` and `δ = c·min(p, 1−p)` at 100 random
/// points each, to 1e-12.
pub fn check_kernel_geometry(problem: &Problem) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("6", "kernel geometry");
    let Some(params) = &problem.fintech else {
        return c.skip("analytic kernel known for the fintech model only");
    };
    let model = &*problem.model;
    let grid = model.controls().points().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let (mut kernel_bad, mut band_bad, mut worst_delta) = (0usize, 0usize, 0.0f64);
    for _ in 0..100 {
        let x = rng.random_range(-3.0..3.0);
        // exact kernel: slopes on the control grid or outside [0, 1]
        let p = if rng.random_bool(0.8) {
            grid[rng.random_range(0..grid.len())]
        } else {
            let off = rng.random_range(1e-6..0.5);
            if rng.random_bool(0.5) {
                1.0 + off
            } else {
                -off
            }
        };
        let k = kernel(model, x, p, 0.0);
        let expect: Vec<f64> = if (0.0..=1.0).contains(&p) { vec![p] } else { vec![] };
        kernel_bad += (k != expect) as usize;

        let eps = rng.random_range(0.0..0.05);
        let q = rng.random_range(-0.2..1.2);
        let band = kernel(model, x, q, eps);
        for &a in &grid {
            let m = (params.c * (a - q)).abs();
            if (m - eps).abs() < 1e-9 {
                continue;
            }
            band_bad += ((m <= eps) != band.contains(&a)) as usize;
        }

        let pd = rng.random_range(-0.5..1.5);
        let d = delta_distance(model, x, pd).unwrap_or(f64::NAN);
        let err = (d - params.c * pd.min(1.0 - pd)).abs();
        worst_delta = worst_delta.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    c.metric("kernel_mismatches", kernel_bad as f64)
        .metric("band_mismatches", band_bad as f64)
        .metric("max_delta_error", worst_delta);
    c.verdict(
        kernel_bad == 0 && band_bad == 0 && worst_delta <= 1e-12,
        format!("{kernel_bad} kernel / {band_bad} band mismatches, max |δ − c·min(p,1−p)| = {worst_delta:.1e}"),
        started,
    )
}

fn z(a: (f64, f64), b: (f64, f64)) -> f64 {
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    if se == 0.0 {
        if a.0 == b.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.0 - b.0).abs() / se
    }
}

/// Full runs against runs restarted afresh at `T/2`: `|V_T|`, `Σx` and `Σy`
/// means agree within four standard errors.
pub fn check_flow(problem: &Problem, paths: usize) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("7", "flow / conditioning");
    let sim = problem.simulator();
    let horizon = problem.horizon();
    let theta = 0.5 * horizon;
    let init = root_at(problem.x0).with_target_level(0.0);
    let control = ConstantControl(0.5);
    let summary = |m: &PointMeasure| {
        let n = m.len() as f64;
        let sx: f64 = m.particles().iter().map(|p| p.point[0]).sum();
        let sy: f64 = m.particles().iter().map(|p| p.point[1]).sum();
        [n, sx, sy]
    };
    let full = SimConfig::new(MC_DT, SEED + 7);
    let first = SimConfig::new(MC_DT, SEED + 8).recording();
    let second = SimConfig::new(MC_DT, SEED + 9);
    use rayon::prelude::*;
    type Pair = ([f64; 3], [f64; 3]);
    let rows: Result<Vec<Pair>, crate::simulate::SimError> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let a = sim.simulate(0.0, &init, &control, &full.with_path(i))?;
            let half = sim.simulate(0.0, &init, &control, &first.with_path(i))?;
            let b = sim.restart(&half, theta, &control, &second.with_path(i))?;
            Ok((summary(&a.terminal), summary(&b.terminal)))
        })
        .collect();
    let rows = match rows {
        Ok(r) => r,
        Err(e) => return c.error(e, started),
    };
    let names = ["size", "sum_x", "sum_y"];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let a = mean_and_se(rows.iter().map(|r| r.0[k]));
        let b = mean_and_se(rows.iter().map(|r| r.1[k]));
        let zk = z(a, b);
        worst = worst.max(zk);
        c.metric(&format!("z_{name}"), zk);
        parts.push(format!("{name} {:.4}/{:.4} z={zk:.2}", a.0, b.0));
    }
    c.verdict(worst < 4.0, format!("{} ({paths} paths each)", parts.join(", ")), started)
}

/// Root values along a refinement ladder; returns values and successive
/// difference ratio.
fn refinement(
    problem: &Problem,
    x_lo: f64,
    x_hi: f64,
    nxs: &[usize],
    nts: &[usize],
    depth: usize,
) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (&nx, &nt) in nxs.iter().zip(nts) {
        let grid = GridSpec {
            x_lo,
            x_hi,
            nx,
            nt,
            depth,
            offspring_index_cap: problem.law.stats().k_max.max(1),
            epsilon: GridSpec::grid_scale_epsilon(&*problem.model, x_lo, x_hi),
            t0: 0.0,
        };
        let s = solve_vi(&*problem.model, &problem.law, &problem.target, &grid).map_err(|e| e.to_string())?;
        out.push(s.value(&Label::root(), 0.0, problem.x0).ok_or("x0 off grid")?);
    }
    Ok(out)
}

/// Differences below this are rounding noise; a ladder whose differences
/// all sit below it has converged.
const ROUNDING_FLOOR: f64 = 1e-12;

fn ratio_ok(v: &[f64]) -> (f64, f64, f64, bool) {
    let d1 = (v[1] - v[0]).abs();
    let d2 = (v[2] - v[1]).abs();
    let ratio = if d1 > 0.0 { d2 / d1 } else { f64::NAN };
    let ok = ratio <= 0.6 || (d1 <= ROUNDING_FLOOR && d2 <= ROUNDING_FLOOR);
    (d1, d2, ratio, ok)
}

/// Obstacle and face-lift invariants on the solved surface to 1e-12, and
/// self-convergence under halving `(dx, dt)`: on the scenario itself and on
/// the smooth portfolio payoff with a known value.
pub fn check_vi_structure(problem: &Problem, surface: Option<&ValueSurface>) -> CheckResult {
    let started = Instant::now();
    let mut c = CheckResult::new("8", "VI structure");
    let owned;
    let surface = match surface {
        Some(s) => s,
        None => match solve_default(problem, problem.x0) {
            Ok((s, _)) => {
                owned = s;
                &owned
            }
            Err(e) => return c.error(e, started),
        },
    };
    let obstacle = surface.obstacle_violation().max(0.0);
    let lift = surface.facelift_violation();
    c.metric("obstacle_violation", obstacle).metric("facelift_violation", lift);

    let x0 = problem.x0;
    let own = match refinement(problem, x0 - 8.0, x0 + 4.0, &[101, 201, 401], &[15, 30, 60], 3) {
        Ok(v) => v,
        Err(e) => return c.error(e, started),
    };
    let (sd1, sd2, sratio, sok) = ratio_ok(&own);
    c.metric("scenario_diff_1", sd1).metric("scenario_diff_2", sd2).metric("scenario_ratio", sratio);

    let port = Scenario::portfolio(1001).build().expect("built-in scenario");
    let pv = match refinement(&port, -4.0, 4.0, &[101, 201, 401], &[60, 120, 240], 1) {
        Ok(v) => v,
        Err(e) => return c.error(e, started),
    };
    let (pd1, pd2, pratio, pok) = ratio_ok(&pv);
    let exact = (0.5 + 0.5 * (-0.02f64).exp()).ln();
    c.metric("portfolio_diff_1", pd1)
        .metric("portfolio_diff_2", pd2)
        .metric("portfolio_ratio", pratio)
        .metric("portfolio_error", (pv[2] - exact).abs());

    // truncation sensitivity, reported only
    let deeper = problem.grid_around(x0, 201, 4);
    if let Ok(s4) = solve_vi(&*problem.model, &problem.law, &problem.target, &deeper) {
        let v3 = surface.value(&Label::root(), 0.0, x0).unwrap_or(f64::NAN);
        let v4 = s4.value(&Label::root(), 0.0, x0).unwrap_or(f64::NAN);
        c.metric("depth_3_vs_4", (v4 - v3).abs());
    }

    let ok = obstacle <= 1e-12 && lift <= 1e-12 && sok && pok;
    c.verdict(
        ok,
        format!(
            "obstacle {obstacle:.1e}, face-lift {lift:.1e}; scenario diffs {sd1:.1e}, {sd2:.1e} (ratio {sratio:.3}); \
             portfolio diffs {pd1:.2e}, {pd2:.2e} (ratio {pratio:.3} ≤ 0.6, error vs exact {:.1e})",
            (pv[2] - exact).abs()
        ),
        started,
    )
}

/// In-memory rerun of simulation and solve outputs, byte for byte.
pub fn check_determinism(problem: &Problem) -> CheckResult {
    let started = Instant::now();
    let c = CheckResult::new("9", "determinism");
    let sim = problem.simulator();
    let init = root_at(problem.x0).with_target_level(0.0);
    let render = || -> Result<Vec<u8>, String> {
        let paths: Vec<_> = sim
            .simulate_many(0.0, &init, &ConstantControl(0.5), &SimConfig::new(MC_DT, SEED), 200)
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_population_csv(&mut buf, &paths).map_err(|e| e.to_string())?;
        write_events_csv(&mut buf, &paths).map_err(|e| e.to_string())?;
        let (s, g) = solve_default(problem, problem.x0).map_err(|e| e.to_string())?;
        let fb = extract_feedback(&s, &*problem.model, g.epsilon).map_err(|e| e.to_string())?;
        write_surface_csv(&mut buf, &s, Some(&fb), 1).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    match (render(), render()) {
        (Ok(a), Ok(b)) => c.verdict(a == b, format!("{} bytes, reruns identical: {}", a.len(), a == b), started),
        (Err(e), _) | (_, Err(e)) => c.error(e, started),
    }
}

/// Runs every check on `scenario`.
pub fn run_suite(scenario: &Scenario, level: Level) -> Result<VerifyReport, crate::scenario::ScenarioError> {
    let problem = scenario.build()?;
    let sizes = SuiteSizes::for_level(level);
    let mut checks = vec![check_boundedness(scenario)];
    checks.push(check_population_bound(&problem, sizes.growth_paths));
    checks.push(check_pathwise_monotonicity(&problem, sizes.monotone_pairs));
    checks.push(check_branching_property(&problem, sizes.branching_paths));
    let (bracket, surface) = check_value_bracket(&problem);
    checks.push(bracket);
    checks.push(check_mc_pde_consistency(&problem, sizes.consistency_paths));
    checks.push(check_kernel_geometry(&problem));
    checks.push(check_flow(&problem, sizes.flow_paths));
    checks.push(check_vi_structure(&problem, surface.as_ref()));
    checks.push(check_determinism(&problem));
    Ok(VerifyReport {
        level,
        scenario_digest: scenario.digest(),
        passed: checks.iter().all(CheckResult::passed),
        checks,
    })
}
