//! Event-driven Monte Carlo engine for the controlled branching pair `(X, Y)`.
//!
//! Each alive particle owns an exponential branching clock and a Brownian
//! substream. Between branch times every particle is advanced by
//! Euler–Maruyama on a fixed grid that is refined to land exactly on each
//! branch time, so children start from the parent's exact position.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::labels::Label;
use crate::model::{CoefficientModel, OffspringLaw};
use crate::population::{PointMeasure, PopulationError, PopulationEvent};
use crate::rng::{substream, Purpose};

pub const DEFAULT_POPULATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("population reached {size} particles at t = {time} (cap {cap})")]
    Explosion { time: f64, size: usize, cap: usize },
    #[error("invalid initial configuration: {0}")]
    Initial(#[from] PopulationError),
    #[error("initial configuration has dimension {got}, expected d + 1 = {expected}")]
    InitialDimension { got: usize, expected: usize },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("time {0} is not a recorded time of the path")]
    NotRecorded(f64),
}

/// Feedback control `a = α_i(s, X^i_s, Y^i_s)`.
pub trait FeedbackControl: Send + Sync {
    fn control(&self, label: &Label, t: f64, x: &[f64], y: f64) -> f64;

    fn name(&self) -> String {
        "feedback".to_string()
    }
}

/// The same control value for every particle at all times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantControl(pub f64);

impl FeedbackControl for ConstantControl {
    fn control(&self, _: &Label, _: f64, _: &[f64], _: f64) -> f64 {
        self.0
    }

    fn name(&self) -> String {
        if self.0 == 0.0 {
            "riskless".to_string()
        } else {
            format!("constant:{}", self.0)
        }
    }
}

/// Wraps a closure as a named control.
pub struct FnControl<F> {
    name: String,
    f: F,
}

impl<F> FnControl<F>
where
    F: Fn(&Label, f64, &[f64], f64) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnControl { name: name.into(), f }
    }
}

impl<F> FeedbackControl for FnControl<F>
where
    F: Fn(&Label, f64, &[f64], f64) -> f64 + Send + Sync,
{
    fn control(&self, label: &Label, t: f64, x: &[f64], y: f64) -> f64 {
        (self.f)(label, t, x, y)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub seed: u64,
    pub path_index: u64,
    /// Keep the configuration at every grid and event time.
    pub record: bool,
    pub population_cap: usize,
}

impl SimConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        SimConfig { dt, seed, path_index: 0, record: false, population_cap: DEFAULT_POPULATION_CAP }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn with_path(mut self, path_index: u64) -> Self {
        self.path_index = path_index;
        self
    }
}

/// One realisation of `Ẑ` on `[t0, T]`. Recorded states are configurations
/// over `ℝ^{d+1}`: the last coordinate of every point is `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPath {
    pub t0: f64,
    pub horizon: f64,
    pub events: Vec<PopulationEvent>,
    pub states: Vec<(f64, PointMeasure)>,
    pub terminal: PointMeasure,
    pub initial_size: usize,
    /// `sup_s |V_s|`.
    pub max_size: usize,
}

impl PopulationPath {
    pub fn state_at(&self, time: f64) -> Option<&PointMeasure> {
        if time == self.horizon {
            return Some(&self.terminal);
        }
        self.states.iter().rev().find(|(t, _)| (t - time).abs() <= 1e-12 * (1.0 + time.abs())).map(|(_, m)| m)
    }

    pub fn recorded_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.0)
    }
}

struct Live {
    label: Label,
    x: Vec<f64>,
    y: f64,
    death: f64,
    noise: ChaCha8Rng,
    branch: ChaCha8Rng,
}

/// Scratch buffers for one Euler step.
pub struct StepBuffers {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    target_diffusion: Vec<f64>,
}

impl StepBuffers {
    pub fn new(d: usize, m: usize) -> Self {
        StepBuffers { drift: vec![0.0; d], diffusion: vec![0.0; d * m], target_diffusion: vec![0.0; m] }
    }
}

/// One Euler–Maruyama step of `(X, Y)` under control `a`; `dw` holds the
/// `m` Brownian increments over `h`, shared by both components.
pub fn euler_step<M: CoefficientModel + ?Sized>(
    model: &M,
    a: f64,
    x: &mut [f64],
    y: &mut f64,
    h: f64,
    dw: &[f64],
    buf: &mut StepBuffers,
) {
    let m = dw.len();
    model.drift(x, a, &mut buf.drift);
    model.diffusion(x, a, &mut buf.diffusion);
    model.target_diffusion(x, a, &mut buf.target_diffusion);
    let ly = model.target_drift(x, *y, a);
    let mut ny = *y + ly * h;
    for j in 0..m {
        ny += buf.target_diffusion[j] * dw[j];
    }
    for (i, xi) in x.iter_mut().enumerate() {
        let mut v = *xi + buf.drift[i] * h;
        for j in 0..m {
            v += buf.diffusion[i * m + j] * dw[j];
        }
        *xi = v;
    }
    *y = ny;
}

/// Drives one particle through a sequence of `(h, dW)` increments starting
/// at time `t`. Used to couple schemes on a frozen event skeleton.
pub fn integrate_segment<M: CoefficientModel + ?Sized>(
    model: &M,
    control: &dyn FeedbackControl,
    label: &Label,
    mut t: f64,
    x: &mut [f64],
    y: &mut f64,
    increments: &[(f64, Vec<f64>)],
) {
    let mut buf = StepBuffers::new(model.dim_x(), model.dim_noise());
    for (h, dw) in increments {
        let a = control.control(label, t, x, *y);
        euler_step(model, a, x, y, *h, dw, &mut buf);
        t += h;
    }
}

/// Bundles what stays fixed across paths: coefficients, offspring law and
/// horizon.
#[derive(Clone)]
pub struct Simulator {
    pub model: Arc<dyn CoefficientModel>,
    pub law: OffspringLaw,
    pub horizon: f64,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulator")
            .field("model", &self.model)
            .field("law", &self.law)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl Simulator {
    pub fn new(model: Arc<dyn CoefficientModel>, law: OffspringLaw, horizon: f64) -> Self {
        Simulator { model, law, horizon }
    }

    fn clock(&self, from: f64, rng: &mut ChaCha8Rng) -> f64 {
        if self.law.gamma() == 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = rng.sample(Exp1);
        from + e / self.law.gamma()
    }

    fn spawn(&self, label: Label, x: Vec<f64>, y: f64, born: f64, cfg: &SimConfig) -> Live {
        let noise = substream(cfg.seed, cfg.path_index, &label, Purpose::Noise);
        let mut branch = substream(cfg.seed, cfg.path_index, &label, Purpose::Branch);
        let death = self.clock(born, &mut branch);
        Live { label, x, y, death, noise, branch }
    }

    /// Simulates from `(t0, init)` to the horizon. `init` lives on `ℝ^{d+1}`
    /// with `Y` as last coordinate.
    pub fn simulate(
        &self,
        t0: f64,
        init: &PointMeasure,
        control: &dyn FeedbackControl,
        cfg: &SimConfig,
    ) -> Result<PopulationPath, SimError> {
        let d = self.model.dim_x();
        let m = self.model.dim_noise();
        if init.dim() != d + 1 {
            return Err(SimError::InitialDimension { got: init.dim(), expected: d + 1 });
        }
        init.check()?;
        if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
            return Err(SimError::Config(format!("dt must be positive, got {}", cfg.dt)));
        }
        let horizon = self.horizon;
        if !(t0 <= horizon) {
            return Err(SimError::Config(format!("t0 = {t0} beyond horizon {horizon}")));
        }
        if cfg.dt > horizon {
            return Err(SimError::Config(format!("dt = {} exceeds horizon {horizon}", cfg.dt)));
        }

        let mut alive: Vec<Live> = init
            .particles()
            .iter()
            .map(|p| self.spawn(p.label.clone(), p.point[..d].to_vec(), p.point[d], t0, cfg))
            .collect();
        let mut events = Vec::new();
        let mut states = Vec::new();
        let mut max_size = alive.len();
        let initial_size = alive.len();
        if cfg.record {
            states.push((t0, snapshot(&alive, d)));
        }

        let n_steps = (((horizon - t0) / cfg.dt) - 1e-9).ceil().max(0.0) as u64;
        let grid = |k: u64| if k >= n_steps { horizon } else { t0 + k as f64 * cfg.dt };
        let mut buf = StepBuffers::new(d, m);
        let mut dw = vec![0.0; m];
        let mut t = t0;
        let mut k = 0u64;

        while t < horizon {
            let next_grid = grid(k + 1);
            let next_event = alive.iter().map(|p| p.death).fold(f64::INFINITY, f64::min);
            let t_next = if next_event < next_grid { next_event } else { next_grid };
            let h = t_next - t;
            if h > 0.0 {
                let sq = h.sqrt();
                for p in alive.iter_mut() {
                    for w in dw.iter_mut() {
                        let z: f64 = p.noise.sample(StandardNormal);
                        *w = sq * z;
                    }
                    let a = control.control(&p.label, t, &p.x, p.y);
                    euler_step(self.model.as_ref(), a, &mut p.x, &mut p.y, h, &dw, &mut buf);
                }
            }
            t = t_next;
            if t == next_grid {
                k += 1;
            }

            if alive.iter().any(|p| p.death <= t && p.death < horizon) {
                let mut next: Vec<Live> = Vec::with_capacity(alive.len() + 4);
                for mut p in alive.drain(..) {
                    if p.death <= t && p.death < horizon {
                        let u: f64 = p.branch.random();
                        let count = self.law.sample_count(u);
                        events.push(PopulationEvent { time: p.death, parent: p.label.clone(), offspring_count: count });
                        for c in 0..count {
                            next.push(self.spawn(p.label.child(c), p.x.clone(), p.y, t, cfg));
                        }
                    } else {
                        next.push(p);
                    }
                }
                // children of a label sort exactly where their parent was
                alive = next;
                max_size = max_size.max(alive.len());
                if alive.len() > cfg.population_cap {
                    return Err(SimError::Explosion { time: t, size: alive.len(), cap: cfg.population_cap });
                }
            }
            if cfg.record && t < horizon {
                states.push((t, snapshot(&alive, d)));
            }
        }

        let terminal = snapshot(&alive, d);
        if cfg.record {
            states.push((horizon, terminal.clone()));
        }
        Ok(PopulationPath { t0, horizon, events, states, terminal, initial_size, max_size })
    }

    /// Fresh simulation from the recorded state of `path` at `theta`.
    pub fn restart(
        &self,
        path: &PopulationPath,
        theta: f64,
        control: &dyn FeedbackControl,
        cfg: &SimConfig,
    ) -> Result<PopulationPath, SimError> {
        let state = path.state_at(theta).ok_or(SimError::NotRecorded(theta))?;
        if theta >= self.horizon {
            let mut out = path.clone();
            out.t0 = theta;
            out.events.clear();
            out.states = if cfg.record { vec![(theta, state.clone())] } else { Vec::new() };
            out.initial_size = state.len();
            out.max_size = state.len();
            return Ok(out);
        }
        self.simulate(theta, state, control, cfg)
    }

    /// Runs `n` independent paths with `path_index = 0..n` in parallel;
    /// results come back in path-index order.
    pub fn simulate_many(
        &self,
        t0: f64,
        init: &PointMeasure,
        control: &dyn FeedbackControl,
        cfg: &SimConfig,
        n: usize,
    ) -> Vec<Result<PopulationPath, SimError>> {
        (0..n as u64).into_par_iter().map(|i| self.simulate(t0, init, control, &cfg.with_path(i))).collect()
    }
}

fn snapshot(alive: &[Live], d: usize) -> PointMeasure {
    PointMeasure::new_unchecked(
        d + 1,
        alive.iter().map(|p| {
            let mut point = Vec::with_capacity(d + 1);
            point.extend_from_slice(&p.x);
            point.push(p.y);
            (p.label.clone(), point)
        }),
    )
}

/// Empirical `E[sup_s |V_s|]` against `|V| e^{γ M (T − t0)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthReport {
    pub n_paths: usize,
    pub mean_sup_size: f64,
    pub se: f64,
    pub bound: f64,
    pub within_bound: bool,
}

pub fn population_growth_report(
    max_sizes: &[usize],
    initial_size: usize,
    law: &OffspringLaw,
    elapsed: f64,
) -> GrowthReport {
    let n = max_sizes.len();
    let (mean, se) = mean_and_se(max_sizes.iter().map(|&s| s as f64));
    let bound = initial_size as f64 * (law.gamma() * law.stats().mean * elapsed).exp();
    GrowthReport { n_paths: n, mean_sup_size: mean, se, bound, within_bound: mean <= bound + 3.0 * se }
}

/// Sample mean and standard error, accumulated in iteration order.
pub fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientRow, FintechModel, TabulatedModel};

    fn constant_model(
        drift: f64,
        diffusion: f64,
        target_drift: f64,
        target_diffusion: f64,
    ) -> Arc<dyn CoefficientModel> {
        Arc::new(TabulatedModel::constant(CoefficientRow {
            drift,
            diffusion,
            target_drift,
            target_drift_y: 0.0,
            target_diffusion,
        }))
    }

    fn root(x: f64, y: f64) -> PointMeasure {
        PointMeasure::singleton(Label::root(), vec![x, y])
    }

    #[test]
    fn zero_intensity_has_no_events() {
        let sim =
            Simulator::new(constant_model(0.1, 0.3, 0.0, 0.2), OffspringLaw::new(0.0, vec![(2, 1.0)]).unwrap(), 1.0);
        let path =
            sim.simulate(0.0, &root(0.0, 0.0), &ConstantControl(0.0), &SimConfig::new(0.01, 1).recording()).unwrap();
        assert!(path.events.is_empty());
        assert!(path.states.iter().all(|(_, s)| s.labels().eq([Label::root()].iter())));
        assert_eq!(path.max_size, 1);
    }

    #[test]
    fn deterministic_limit_is_exact_line() {
        let sim = Simulator::new(constant_model(0.25, 0.0, -0.5, 0.0), OffspringLaw::frozen(), 2.0);
        let path = sim.simulate(0.5, &root(1.0, 3.0), &ConstantControl(0.0), &SimConfig::new(0.1, 1)).unwrap();
        let p = path.terminal.get(&Label::root()).unwrap();
        assert!((p[0] - (1.0 + 0.25 * 1.5)).abs() < 1e-12);
        assert!((p[1] - (3.0 - 0.5 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_path() {
        let law = OffspringLaw::new(1.5, vec![(0, 0.3), (2, 0.4), (3, 0.3)]).unwrap();
        let sim = Simulator::new(Arc::new(FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()), law, 1.0);
        let cfg = SimConfig::new(0.01, 42).with_path(7).recording();
        let a = sim.simulate(0.0, &root(0.0, 0.1), &ConstantControl(0.3), &cfg).unwrap();
        let b = sim.simulate(0.0, &root(0.0, 0.1), &ConstantControl(0.3), &cfg).unwrap();
        assert_eq!(a, b);
        let c = sim.simulate(0.0, &root(0.0, 0.1), &ConstantControl(0.3), &cfg.with_path(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn children_inherit_exact_parent_state() {
        let law = OffspringLaw::new(3.0, vec![(1, 0.2), (2, 0.5), (3, 0.3)]).unwrap();
        let sim = Simulator::new(Arc::new(FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()), law, 1.0);
        for path_index in 0..20 {
            let cfg = SimConfig::new(0.05, 3).with_path(path_index).recording();
            let path = sim.simulate(0.0, &root(0.0, 0.0), &ConstantControl(0.5), &cfg).unwrap();
            for w in path.events.windows(2) {
                assert!(w[0].time < w[1].time);
            }
            for s in &path.states {
                assert!(s.1.validate());
            }
            for ev in &path.events {
                // the last state recorded strictly before the event
                let before = path.states.iter().rev().find(|(t, _)| *t < ev.time).unwrap();
                let after = path.states.iter().find(|(t, _)| *t == ev.time).unwrap();
                let parent_before = before.1.get(&ev.parent).unwrap();
                for c in 0..ev.offspring_count {
                    let child = after.1.get(&ev.parent.child(c)).unwrap();
                    // same point as the parent advanced to the event time:
                    // all children agree bit for bit, and differ from the
                    // earlier parent state only by one Euler step
                    assert_eq!(child, after.1.get(&ev.parent.child(0)).unwrap());
                    assert!((child[0] - parent_before[0]).abs() < 1.0);
                }
                assert!(after.1.get(&ev.parent).is_none());
            }
        }
    }

    #[test]
    fn branch_times_hit_exactly() {
        // with huge dt the only interior times are branch times
        let law = OffspringLaw::new(2.0, vec![(2, 1.0)]).unwrap();
        let sim = Simulator::new(constant_model(1.0, 0.0, 0.0, 0.0), law, 1.0);
        let path =
            sim.simulate(0.0, &root(0.0, 0.0), &ConstantControl(0.0), &SimConfig::new(1.0, 5).recording()).unwrap();
        for ev in &path.events {
            let after = path.state_at(ev.time).unwrap();
            for c in 0..ev.offspring_count {
                let x = after.get(&ev.parent.child(c)).unwrap()[0];
                assert!((x - ev.time).abs() < 1e-12, "x = {x}, t = {}", ev.time);
            }
        }
        // drift 1 from 0: every terminal particle is at T
        for p in path.terminal.particles() {
            assert!((p.point[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn explosion_cap_aborts() {
        let law = OffspringLaw::new(5.0, vec![(3, 1.0)]).unwrap();
        let sim = Simulator::new(constant_model(0.0, 0.0, 0.0, 0.0), law, 1.0);
        let mut cfg = SimConfig::new(0.1, 1);
        cfg.population_cap = 50;
        let err = sim.simulate(0.0, &root(0.0, 0.0), &ConstantControl(0.0), &cfg).unwrap_err();
        assert!(matches!(err, SimError::Explosion { cap: 50, .. }));
    }

    #[test]
    fn rejects_bad_inputs() {
        let sim = Simulator::new(constant_model(0.0, 0.0, 0.0, 0.0), OffspringLaw::frozen(), 1.0);
        let c = ConstantControl(0.0);
        assert!(matches!(sim.simulate(0.0, &root(0.0, 0.0), &c, &SimConfig::new(0.0, 1)), Err(SimError::Config(_))));
        assert!(matches!(sim.simulate(0.0, &root(0.0, 0.0), &c, &SimConfig::new(2.0, 1)), Err(SimError::Config(_))));
        let flat = PointMeasure::singleton(Label::root(), vec![0.0]);
        assert!(matches!(
            sim.simulate(0.0, &flat, &c, &SimConfig::new(0.1, 1)),
            Err(SimError::InitialDimension { .. })
        ));
        let bad = PointMeasure::new_unchecked(2, [(Label::root(), vec![0.0, 0.0]), (Label::from([1]), vec![0.0, 0.0])]);
        assert!(matches!(sim.simulate(0.0, &bad, &c, &SimConfig::new(0.1, 1)), Err(SimError::Initial(_))));
    }

    #[test]
    fn restart_edge_cases() {
        let law = OffspringLaw::new(1.0, vec![(0, 0.5), (2, 0.5)]).unwrap();
        let sim = Simulator::new(Arc::new(FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()), law, 1.0);
        let c = ConstantControl(0.2);
        let cfg = SimConfig::new(0.1, 11).recording();
        let path = sim.simulate(0.0, &root(0.0, 0.0), &c, &cfg).unwrap();
        let end = sim.restart(&path, 1.0, &c, &SimConfig::new(0.1, 99)).unwrap();
        assert_eq!(end.terminal, path.terminal);
        assert!(matches!(sim.restart(&path, 0.123, &c, &cfg), Err(SimError::NotRecorded(_))));
        let from_start = sim.restart(&path, 0.0, &c, &cfg).unwrap();
        assert_eq!(from_start, path);
    }

    #[test]
    fn growth_report_trivial_cases() {
        let frozen = OffspringLaw::new(0.0, vec![(2, 1.0)]).unwrap();
        let r = population_growth_report(&[3; 100], 3, &frozen, 1.0);
        assert_eq!((r.mean_sup_size, r.bound, r.se), (3.0, 3.0, 0.0));
        assert!(r.within_bound);
        let death = OffspringLaw::new(2.0, vec![(0, 1.0)]).unwrap();
        let sim = Simulator::new(constant_model(0.0, 0.0, 0.0, 0.0), death.clone(), 1.0);
        let init =
            PointMeasure::new(2, [(Label::from([0]), vec![0.0, 0.0]), (Label::from([1]), vec![0.0, 0.0])]).unwrap();
        let sizes: Vec<usize> = sim
            .simulate_many(0.0, &init, &ConstantControl(0.0), &SimConfig::new(0.1, 1), 200)
            .into_iter()
            .map(|p| p.unwrap().max_size)
            .collect();
        let r = population_growth_report(&sizes, 2, &death, 1.0);
        assert_eq!(r.bound, 2.0);
        assert!(r.mean_sup_size <= 2.0);
        let binary = OffspringLaw::new(1.0, vec![(2, 1.0)]).unwrap();
        let r = population_growth_report(&[1; 100], 1, &binary, 1.0);
        assert!((r.bound - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn y_monotone_under_common_noise() {
        let law = OffspringLaw::new(1.0, vec![(0, 0.2), (2, 0.8)]).unwrap();
        let sim = Simulator::new(Arc::new(FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()), law, 1.0);
        let c = ConstantControl(0.7);
        for i in 0..50 {
            let cfg = SimConfig::new(0.02, 8).with_path(i).recording();
            let lo = sim.simulate(0.0, &root(0.0, 0.0), &c, &cfg).unwrap();
            let hi = sim.simulate(0.0, &root(0.0, 0.1), &c, &cfg).unwrap();
            assert_eq!(lo.events, hi.events);
            for ((t1, a), (t2, b)) in lo.states.iter().zip(&hi.states) {
                assert_eq!(t1, t2);
                for (p, q) in a.particles().iter().zip(b.particles()) {
                    assert_eq!(p.label, q.label);
                    assert_eq!(p.point[0], q.point[0]);
                    assert!(q.point[1] >= p.point[1]);
                }
            }
        }
    }

    #[test]
    fn halving_dt_converges_on_shared_increments() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let model = FintechModel::new(0.1, 0.2, 0.02, 101).unwrap();
        let control = FnControl::new("sin", |_: &Label, _: f64, x: &[f64], _: f64| {
            (0.5 + 0.4 * (3.0 * x[0]).sin()).clamp(0.0, 1.0)
        });
        let fine = 1usize << 10;
        let levels = [4u32, 5, 6, 7];
        let mut mse = vec![0.0; levels.len()];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples = 400;
        for _ in 0..samples {
            let h = 1.0 / fine as f64;
            let dw: Vec<f64> = (0..fine)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    h.sqrt() * z
                })
                .collect();
            let run = |n: usize| {
                let per = fine / n;
                let inc: Vec<(f64, Vec<f64>)> =
                    dw.chunks(per).map(|c| (1.0 / n as f64, vec![c.iter().sum::<f64>()])).collect();
                let (mut x, mut y) = (vec![0.0], 0.0);
                integrate_segment(&model, &control, &Label::root(), 0.0, &mut x, &mut y, &inc);
                y
            };
            let reference = run(fine);
            for (k, &l) in levels.iter().enumerate() {
                mse[k] += (run(1 << l) - reference).powi(2) / samples as f64;
            }
        }
        // strong order ½: mean-square error roughly halves with dt
        for w in mse.windows(2) {
            assert!(w[1] < 0.8 * w[0], "{mse:?}");
        }
        assert!(mse[0] < 1e-3, "{mse:?}");
    }

    #[test]
    fn restart_at_start_matches_fresh_runs() {
        let law = OffspringLaw::new(1.0, vec![(0, 0.3), (2, 0.7)]).unwrap();
        let sim = Simulator::new(Arc::new(FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()), law, 1.0);
        let c = ConstantControl(0.5);
        let n = 4000;
        let fresh = sim.simulate_many(0.0, &root(0.0, 0.0), &c, &SimConfig::new(0.02, 1), n);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, p) in fresh.into_iter().enumerate() {
            a.push(p.unwrap().terminal.len() as f64);
            let start = sim
                .simulate(0.0, &root(0.0, 0.0), &c, &SimConfig::new(0.02, 2).with_path(i as u64).recording())
                .unwrap();
            let r = sim.restart(&start, 0.0, &c, &SimConfig::new(0.02, 3).with_path(i as u64)).unwrap();
            b.push(r.terminal.len() as f64);
        }
        let (ma, sa) = mean_and_se(a.into_iter());
        let (mb, sb) = mean_and_se(b.into_iter());
        assert!((ma - mb).abs() / (sa * sa + sb * sb).sqrt() < 4.0);
    }
}
