//! Monte Carlo side of the target problem: terminal checks, success rates,
//! value estimation by bisection in the initial level `y`, and the branching
//! and dynamic-programming consistency tests.
//!
//! All comparisons across `y` (and across controls) reuse the same seeds, so
//! each path sees the same Brownian and branching noise at every candidate
//! level. Since the controls used here do not read `Y`, success is then
//! monotone in `y` path by path.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::hjb::ValueSurface;
use crate::labels::Label;
use crate::model::TargetSpec;
use crate::population::PointMeasure;
use crate::simulate::{FeedbackControl, PopulationPath, SimConfig, SimError, Simulator};

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("bracket [{lo}, {hi}] does not straddle the threshold (admissible at lo: {lo_ok}, at hi: {hi_ok})")]
    Bracket { lo: f64, hi: f64, lo_ok: bool, hi_ok: bool },
    #[error("{0}")]
    Input(String),
}

/// Terminal verdict of one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetVerdict {
    pub success: bool,
    pub violated_labels: Vec<Label>,
    /// `min_i (Y_T^i − g_i(X_T^i))`; `+∞` for an empty population.
    pub margin: f64,
}

/// Checks `Y_T^i ≥ g_i(X_T^i)` for every alive terminal particle. An empty
/// population always succeeds.
pub fn terminal_success(path: &PopulationPath, target: &TargetSpec) -> TargetVerdict {
    check_state(&path.terminal, target)
}

fn check_state(state: &PointMeasure, target: &TargetSpec) -> TargetVerdict {
    let d = state.dim() - 1;
    let mut margin = f64::INFINITY;
    let mut violated = Vec::new();
    for p in state.particles() {
        let gap = p.point[d] - target.g(&p.label, &p.point[..d]);
        if gap < 0.0 || gap.is_nan() {
            violated.push(p.label.clone());
        }
        margin = margin.min(gap);
    }
    TargetVerdict { success: violated.is_empty(), violated_labels: violated, margin }
}

/// Monte Carlo settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Admissibility threshold on the failure rate.
    pub eta: f64,
    /// Bisection stops once the bracket is this narrow.
    pub tol: f64,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64, dt: f64) -> Self {
        McConfig { n_paths, seed, dt, eta: 0.01, tol: 0.05 }
    }
}

/// Success rate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub rate: f64,
    pub se: f64,
}

fn binomial(successes: usize, n: usize) -> Rate {
    let rate = successes as f64 / n as f64;
    Rate { rate, se: (rate * (1.0 - rate) / n as f64).sqrt() }
}

/// Simulates `n_paths` paths from `µ` lifted to the common level `y`.
fn terminal_verdicts(
    sim: &Simulator,
    target: &TargetSpec,
    t0: f64,
    mu: &PointMeasure,
    y: f64,
    control: &dyn FeedbackControl,
    mc: &McConfig,
) -> Result<Vec<bool>, SimError> {
    let init = mu.with_target_level(y);
    let cfg = SimConfig::new(mc.dt, mc.seed);
    (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| sim.simulate(t0, &init, control, &cfg.with_path(i)).map(|p| terminal_success(&p, target).success))
        .collect()
}

/// Fraction of paths meeting the terminal constraint when every initial
/// particle starts at level `y`.
pub fn success_probability(
    sim: &Simulator,
    target: &TargetSpec,
    t0: f64,
    mu: &PointMeasure,
    y: f64,
    control: &dyn FeedbackControl,
    mc: &McConfig,
) -> Result<Rate, TargetError> {
    if mc.n_paths == 0 {
        return Err(TargetError::Input("need at least one path".into()));
    }
    let ok = terminal_verdicts(sim, target, t0, mu, y, control, mc)?;
    Ok(binomial(ok.iter().filter(|&&s| s).count(), ok.len()))
}

/// One evaluation of the admissibility predicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRecord {
    pub y: f64,
    pub control_id: String,
    /// Success rate.
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub y_hat: f64,
    pub failure_rate_at_y_hat: f64,
    /// 95% half-width of the failure rate at `y_hat`.
    pub ci_halfwidth: f64,
    pub n_paths: usize,
    pub bisection_tol: f64,
    /// Final bracket: inadmissible at `.0`, admissible at `.1`.
    pub bracket: (f64, f64),
    pub best_control: String,
    pub evaluations: Vec<RateRecord>,
}

struct Predicate<'a> {
    sim: &'a Simulator,
    target: &'a TargetSpec,
    t0: f64,
    mu: &'a PointMeasure,
    controls: &'a [&'a dyn FeedbackControl],
    mc: &'a McConfig,
    log: Vec<RateRecord>,
}

impl Predicate<'_> {
    /// `(admissible, best control index, its failure rate and SE)`.
    fn eval(&mut self, y: f64) -> Result<(bool, usize, f64, f64), TargetError> {
        let mut best = (0usize, f64::INFINITY, 0.0);
        for (k, c) in self.controls.iter().enumerate() {
            let r = success_probability(self.sim, self.target, self.t0, self.mu, y, *c, self.mc)?;
            self.log.push(RateRecord { y, control_id: c.name(), rate: r.rate, se: r.se });
            let fail = 1.0 - r.rate;
            if fail < best.1 {
                best = (k, fail, r.se);
            }
        }
        Ok((best.1 <= self.mc.eta, best.0, best.1, best.2))
    }
}

/// Bisection on `y` for the smallest level at which some control in the
/// family fails on at most a fraction `η` of paths.
///
/// The family is a subset of all admissible controls, so up to Monte Carlo
/// error the result bounds the value from above.
pub fn estimate_value(
    sim: &Simulator,
    target: &TargetSpec,
    t0: f64,
    mu: &PointMeasure,
    controls: &[&dyn FeedbackControl],
    bracket: (f64, f64),
    mc: &McConfig,
) -> Result<ValueEstimate, TargetError> {
    if controls.is_empty() {
        return Err(TargetError::Input("empty control family".into()));
    }
    if !(mc.tol > 0.0) {
        return Err(TargetError::Input("bisection tolerance must be positive".into()));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(TargetError::Bracket { lo, hi, lo_ok: false, hi_ok: false });
    }
    let mut pred = Predicate { sim, target, t0, mu, controls, mc, log: Vec::new() };
    let lo_ok = pred.eval(lo)?.0;
    let hi_ok = pred.eval(hi)?.0;
    if lo_ok || !hi_ok {
        return Err(TargetError::Bracket { lo, hi, lo_ok, hi_ok });
    }
    while hi - lo > mc.tol {
        let mid = 0.5 * (lo + hi);
        if pred.eval(mid)?.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let y_hat = 0.5 * (lo + hi);
    let (_, k, fail, se) = pred.eval(y_hat)?;
    Ok(ValueEstimate {
        y_hat,
        failure_rate_at_y_hat: fail,
        ci_halfwidth: 1.96 * se,
        n_paths: mc.n_paths,
        bisection_tol: mc.tol,
        bracket: (lo, hi),
        best_control: controls[k].name(),
        evaluations: pred.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingConsistency {
    pub lhs: ValueEstimate,
    /// `None`: admissible across the whole bracket, i.e. the particle's
    /// constraint never binds within it.
    pub singletons: Vec<(Label, Option<ValueEstimate>)>,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares the estimate for a multi-particle `µ` with the largest of the
/// single-particle estimates, all on the same seeds.
pub fn branching_consistency(
    sim: &Simulator,
    target: &TargetSpec,
    t0: f64,
    mu: &PointMeasure,
    controls: &[&dyn FeedbackControl],
    bracket: (f64, f64),
    mc: &McConfig,
) -> Result<BranchingConsistency, TargetError> {
    if mu.len() < 2 {
        return Err(TargetError::Input("branching consistency needs at least two particles".into()));
    }
    let lhs = estimate_value(sim, target, t0, mu, controls, bracket, mc)?;
    let mut singletons = Vec::new();
    for l in mu.labels() {
        let single = mu.restrict_to(l).expect("label taken from µ");
        let est = match estimate_value(sim, target, t0, &single, controls, bracket, mc) {
            Ok(e) => Some(e),
            Err(TargetError::Bracket { lo_ok: true, .. }) => None,
            Err(e) => return Err(e),
        };
        singletons.push((l.clone(), est));
    }
    let rhs = singletons.iter().filter_map(|s| s.1.as_ref()).map(|e| e.y_hat).fold(f64::NEG_INFINITY, f64::max);
    Ok(BranchingConsistency { gap: (lhs.y_hat - rhs).abs(), lhs, singletons, rhs })
}

/// Intermediate time of the dynamic-programming check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DppTime {
    Fixed(f64),
    /// First branching time, or the horizon when nothing happens.
    FirstBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    pub n_paths: usize,
    pub y0: f64,
    pub violation_rate: f64,
    /// Paths with a particle outside the surface grid at `θ` (and no
    /// in-grid violation); not counted as violations.
    pub out_of_domain_rate: f64,
}

/// Starts every particle at `y0 = max_i v̄_i(t0, x_i) + slack`, follows the
/// given control, and counts paths where some alive particle ends below
/// `v̄_i(θ, X_θ^i) − slack` at the intermediate time `θ`.
#[allow(clippy::too_many_arguments)]
pub fn dpp_residual(
    sim: &Simulator,
    t0: f64,
    mu: &PointMeasure,
    theta: DppTime,
    surface: &ValueSurface,
    control: &dyn FeedbackControl,
    slack: f64,
    mc: &McConfig,
) -> Result<DppReport, TargetError> {
    let d = mu.dim();
    if d != 1 {
        return Err(TargetError::Input("value surfaces are scalar in x".into()));
    }
    if let DppTime::Fixed(th) = theta {
        if !(th >= t0 && th <= sim.horizon) {
            return Err(TargetError::Input(format!("θ = {th} outside [{t0}, {}]", sim.horizon)));
        }
    }
    if t0 < surface.grid.t0 - 1e-12 || (surface.horizon - sim.horizon).abs() > 1e-12 {
        return Err(TargetError::Input("surface does not cover [t0, T]".into()));
    }
    let mut y0 = f64::NEG_INFINITY;
    for p in mu.particles() {
        let v = surface
            .value(&p.label, t0, p.point[0])
            .ok_or_else(|| TargetError::Input(format!("x0 = {} outside the surface grid", p.point[0])))?;
        y0 = y0.max(v);
    }
    y0 += slack;
    let init = mu.with_target_level(y0);
    let cfg = SimConfig::new(mc.dt, mc.seed).recording();
    let outcomes: Vec<Result<(bool, bool), SimError>> = (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sim.simulate(t0, &init, control, &cfg.with_path(i))?;
            let (time, state) = match theta {
                DppTime::Fixed(th) => (th, path.state_at(th).cloned().ok_or(SimError::NotRecorded(th))?),
                DppTime::FirstBranch => match path.events.first() {
                    Some(ev) => (ev.time, path.state_at(ev.time).cloned().ok_or(SimError::NotRecorded(ev.time))?),
                    None => (path.horizon, path.terminal.clone()),
                },
            };
            let mut violated = false;
            let mut outside = false;
            for p in state.particles() {
                match surface.value(&p.label, time, p.point[0]) {
                    Some(v) => violated |= p.point[1] < v - slack,
                    None => outside = true,
                }
            }
            Ok((violated, outside && !violated))
        })
        .collect();
    let mut viol = 0usize;
    let mut out = 0usize;
    for o in outcomes {
        let (v, x) = o?;
        viol += v as usize;
        out += x as usize;
    }
    let n = mc.n_paths.max(1) as f64;
    Ok(DppReport { n_paths: mc.n_paths, y0, violation_rate: viol as f64 / n, out_of_domain_rate: out as f64 / n })
}

/// Runs each path at levels `y` and `y + dy` on common noise and counts
/// recorded `(time, particle)` pairs where the higher start ends up lower.
#[allow(clippy::too_many_arguments)]
pub fn monotonicity_violations(
    sim: &Simulator,
    t0: f64,
    mu: &PointMeasure,
    y: f64,
    dy: f64,
    control: &dyn FeedbackControl,
    mc: &McConfig,
) -> Result<usize, TargetError> {
    let lo = mu.with_target_level(y);
    let hi = mu.with_target_level(y + dy);
    let cfg = SimConfig::new(mc.dt, mc.seed).recording();
    let d = mu.dim();
    let counts: Vec<Result<usize, SimError>> = (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let a = sim.simulate(t0, &lo, control, &cfg.with_path(i))?;
            let b = sim.simulate(t0, &hi, control, &cfg.with_path(i))?;
            let mut bad = 0usize;
            if a.states.len() != b.states.len() {
                return Ok(usize::MAX);
            }
            for ((_, s), (_, s2)) in a.states.iter().zip(&b.states) {
                for (p, q) in s.particles().iter().zip(s2.particles()) {
                    if p.label != q.label || q.point[d] < p.point[d] {
                        bad += 1;
                    }
                }
            }
            Ok(bad)
        })
        .collect();
    let mut total = 0usize;
    for c in counts {
        total = total.saturating_add(c?);
    }
    Ok(total)
}

/// Pathwise success monotonicity: for every path, success at `y` implies
/// success at each larger level in `levels`. Returns the number of paths
/// breaking the implication.
pub fn success_monotonicity_violations(
    sim: &Simulator,
    target: &TargetSpec,
    t0: f64,
    mu: &PointMeasure,
    levels: &[f64],
    control: &dyn FeedbackControl,
    mc: &McConfig,
) -> Result<usize, TargetError> {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let per_level: Vec<Vec<bool>> =
        sorted.iter().map(|&y| terminal_verdicts(sim, target, t0, mu, y, control, mc)).collect::<Result<_, _>>()?;
    let mut bad = 0;
    for i in 0..mc.n_paths {
        let mut seen = false;
        for lvl in &per_level {
            if seen && !lvl[i] {
                bad += 1;
                break;
            }
            seen |= lvl[i];
        }
    }
    Ok(bad)
}
