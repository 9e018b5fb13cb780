//! Coefficient models, offspring laws and terminal targets.
//!
//! Controls are scalar and range over a finite [`ControlGrid`]; every supremum
//! over controls in the crate is an exact maximum over that grid.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::Label;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter { name: &'static str, value: f64, reason: &'static str },
    #[error("offspring probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("offspring count {0} listed twice")]
    DuplicateOffspring(u32),
    #[error("control grid must be non-empty and finite")]
    EmptyControls,
    #[error("coefficient table has {got} rows for {expected} control points")]
    TableShape { got: usize, expected: usize },
    #[error("payoff table needs at least two increasing knots")]
    PayoffKnots,
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::Parameter { name, value, reason: "must be positive and finite" })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::Parameter { name, value, reason: "must be non-negative and finite" })
    }
}

/// Sorted finite set of admissible control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    points: Vec<f64>,
}

impl ControlGrid {
    pub fn new(mut points: Vec<f64>) -> Result<Self, ModelError> {
        if points.is_empty() || points.iter().any(|a| !a.is_finite()) {
            return Err(ModelError::EmptyControls);
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        Ok(ControlGrid { points })
    }

    /// `n` equispaced points on `[lo, hi]`, endpoints included.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Self {
        let points =
            if n <= 1 { vec![lo] } else { (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect() };
        ControlGrid { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Largest gap between consecutive points (0 for a singleton).
    pub fn max_step(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Grid point closest to `a`; ties go to the smaller control.
    pub fn nearest(&self, a: f64) -> f64 {
        let mut best = self.points[0];
        for &p in &self.points[1..] {
            if (p - a).abs() < (best - a).abs() {
                best = p;
            }
        }
        best
    }
}

/// Coefficients of the controlled pair `(X, Y)`:
/// `dX = λ(X,a) ds + σ(X,a) dB`, `dY = λ_Y(X,Y,a) ds + σ_Y(X,a) dB`.
///
/// `diffusion` writes the `d × m` matrix row-major; `target_diffusion` writes
/// the `m`-vector.
pub trait CoefficientModel: Send + Sync + fmt::Debug {
    fn dim_x(&self) -> usize;
    fn dim_noise(&self) -> usize;
    fn controls(&self) -> &ControlGrid;
    fn drift(&self, x: &[f64], a: f64, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], a: f64, out: &mut [f64]);
    fn target_drift(&self, x: &[f64], y: f64, a: f64) -> f64;
    fn target_diffusion(&self, x: &[f64], a: f64, out: &mut [f64]);
    /// Declared Lipschitz constant in `(x, y)`.
    fn lipschitz(&self) -> f64;
    /// Declared Hölder exponent of the control modulus (recorded only).
    fn control_modulus_exponent(&self) -> f64 {
        1.0
    }
}

/// Scalar (`d = m = 1`) evaluation helpers.
pub trait ScalarCoefficients {
    fn drift1(&self, x: f64, a: f64) -> f64;
    fn diffusion1(&self, x: f64, a: f64) -> f64;
    fn target_drift1(&self, x: f64, y: f64, a: f64) -> f64;
    fn target_diffusion1(&self, x: f64, a: f64) -> f64;
    /// `N^a(x, p) = σ_Y(x, a) − σ(x, a) p`.
    fn mismatch(&self, x: f64, a: f64, p: f64) -> f64 {
        self.target_diffusion1(x, a) - self.diffusion1(x, a) * p
    }
}

impl<M: CoefficientModel + ?Sized> ScalarCoefficients for M {
    fn drift1(&self, x: f64, a: f64) -> f64 {
        let mut o = [0.0];
        self.drift(&[x], a, &mut o);
        o[0]
    }
    fn diffusion1(&self, x: f64, a: f64) -> f64 {
        let mut o = [0.0];
        self.diffusion(&[x], a, &mut o);
        o[0]
    }
    fn target_drift1(&self, x: f64, y: f64, a: f64) -> f64 {
        self.target_drift(&[x], y, a)
    }
    fn target_diffusion1(&self, x: f64, a: f64) -> f64 {
        let mut o = [0.0];
        self.target_diffusion(&[x], a, &mut o);
        o[0]
    }
}

/// Log-price / log-wealth dynamics of an asset that may fork:
/// `dX = (b − c²/2) ds + c dB`, `dY = ((b−r)a − c²a²/2 + r) ds + c a dB`.
#[derive(Debug, Clone, PartialEq)]
pub struct FintechModel {
    pub b: f64,
    pub c: f64,
    pub r: f64,
    controls: ControlGrid,
}

impl FintechModel {
    pub fn new(b: f64, c: f64, r: f64, control_points: usize) -> Result<Self, ModelError> {
        if !b.is_finite() {
            return Err(ModelError::Parameter { name: "b", value: b, reason: "must be finite" });
        }
        positive("c", c)?;
        non_negative("r", r)?;
        if control_points == 0 {
            return Err(ModelError::EmptyControls);
        }
        Ok(FintechModel { b, c, r, controls: ControlGrid::uniform(0.0, 1.0, control_points) })
    }

    /// Maximiser of `a ↦ λ_Y(a)` over `[0, 1]`.
    pub fn optimal_growth_fraction(&self) -> f64 {
        ((self.b - self.r) / (self.c * self.c)).clamp(0.0, 1.0)
    }
}

impl CoefficientModel for FintechModel {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn controls(&self) -> &ControlGrid {
        &self.controls
    }
    fn drift(&self, _x: &[f64], _a: f64, out: &mut [f64]) {
        out[0] = self.b - 0.5 * self.c * self.c;
    }
    fn diffusion(&self, _x: &[f64], _a: f64, out: &mut [f64]) {
        out[0] = self.c;
    }
    fn target_drift(&self, _x: &[f64], _y: f64, a: f64) -> f64 {
        (self.b - self.r) * a - 0.5 * self.c * self.c * a * a + self.r
    }
    fn target_diffusion(&self, _x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = self.c * a;
    }
    fn lipschitz(&self) -> f64 {
        // coefficients do not depend on (x, y)
        0.0
    }
}

/// One row of a tabulated model: coefficients at a single control point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub drift: f64,
    pub diffusion: f64,
    pub target_drift: f64,
    /// Linear sensitivity of `λ_Y` to `y`.
    #[serde(default)]
    pub target_drift_y: f64,
    pub target_diffusion: f64,
}

/// Scalar model whose coefficients are tabulated per control point and
/// constant in `x`; `λ_Y` may be affine in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedModel {
    controls: ControlGrid,
    rows: Vec<CoefficientRow>,
}

impl TabulatedModel {
    pub fn new(controls: Vec<f64>, rows: Vec<CoefficientRow>) -> Result<Self, ModelError> {
        if controls.len() != rows.len() {
            return Err(ModelError::TableShape { got: rows.len(), expected: controls.len() });
        }
        if rows.iter().any(|r| {
            ![r.drift, r.diffusion, r.target_drift, r.target_drift_y, r.target_diffusion].iter().all(|v| v.is_finite())
        }) {
            return Err(ModelError::Parameter {
                name: "coefficient table",
                value: f64::NAN,
                reason: "entries must be finite",
            });
        }
        let mut pairs: Vec<(f64, CoefficientRow)> = controls.into_iter().zip(rows).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let grid = ControlGrid::new(pairs.iter().map(|p| p.0).collect())?;
        if grid.len() != pairs.len() {
            return Err(ModelError::Parameter {
                name: "controls",
                value: f64::NAN,
                reason: "control points must be distinct",
            });
        }
        Ok(TabulatedModel { controls: grid, rows: pairs.into_iter().map(|p| p.1).collect() })
    }

    /// Single control, constant coefficients.
    pub fn constant(row: CoefficientRow) -> Self {
        TabulatedModel { controls: ControlGrid::uniform(0.0, 0.0, 1), rows: vec![row] }
    }

    fn row(&self, a: f64) -> &CoefficientRow {
        let pts = self.controls.points();
        let n = match pts.binary_search_by(|p| p.total_cmp(&a)) {
            Ok(n) => n,
            Err(_) => {
                let near = self.controls.nearest(a);
                pts.iter().position(|&p| p == near).unwrap_or(0)
            }
        };
        &self.rows[n]
    }

    pub fn rows(&self) -> &[CoefficientRow] {
        &self.rows
    }
}

impl CoefficientModel for TabulatedModel {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn controls(&self) -> &ControlGrid {
        &self.controls
    }
    fn drift(&self, _x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = self.row(a).drift;
    }
    fn diffusion(&self, _x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = self.row(a).diffusion;
    }
    fn target_drift(&self, _x: &[f64], y: f64, a: f64) -> f64 {
        let r = self.row(a);
        r.target_drift + r.target_drift_y * y
    }
    fn target_diffusion(&self, _x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = self.row(a).target_diffusion;
    }
    fn lipschitz(&self) -> f64 {
        self.rows.iter().map(|r| r.target_drift_y.abs()).fold(0.0, f64::max)
    }
}

/// Result of sampling pairs of states and checking the declared Lipschitz
/// constant of every coefficient at every grid control.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub samples: usize,
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Spot check of `|f(x,y,a) − f(x',y',a)| ≤ L (|x−x'| + |y−y'|)` on random
/// pairs drawn from the box `[-half_width, half_width]^{d+1}`.
pub fn lipschitz_spot_check<M: CoefficientModel + ?Sized>(
    model: &M,
    half_width: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> LipschitzReport {
    let d = model.dim_x();
    let m = model.dim_noise();
    let mut worst: f64 = 0.0;
    let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s1, mut s2) = (vec![0.0; d * m], vec![0.0; d * m]);
    let (mut t1, mut t2) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..half_width)).collect();
        let x2: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..half_width)).collect();
        let y = rng.random_range(-half_width..half_width);
        let y2 = rng.random_range(-half_width..half_width);
        let dist = x.iter().zip(&x2).map(|(a, b)| (a - b).abs()).sum::<f64>() + (y - y2).abs();
        if dist == 0.0 {
            continue;
        }
        for &a in model.controls().points() {
            model.drift(&x, a, &mut b1);
            model.drift(&x2, a, &mut b2);
            model.diffusion(&x, a, &mut s1);
            model.diffusion(&x2, a, &mut s2);
            model.target_diffusion(&x, a, &mut t1);
            model.target_diffusion(&x2, a, &mut t2);
            let gap = [
                sup_diff(&b1, &b2),
                sup_diff(&s1, &s2),
                sup_diff(&t1, &t2),
                (model.target_drift(&x, y, a) - model.target_drift(&x2, y2, a)).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            worst = worst.max(gap / dist);
        }
    }
    LipschitzReport { samples, worst_ratio: worst, holds: worst <= model.lipschitz() + 1e-12 }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// Branching intensity `γ` and offspring distribution `(p_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    gamma: f64,
    probs: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffspringSummary {
    /// `M = Σ k p_k`.
    pub mean: f64,
    /// Largest count with positive probability.
    pub k_max: u32,
    /// `K_max + 1`, the literal bound on child indices in the obstacle term.
    pub k_bar: u32,
}

impl OffspringLaw {
    pub fn new(gamma: f64, probs: Vec<(u32, f64)>) -> Result<Self, ModelError> {
        non_negative("gamma", gamma)?;
        let mut probs: Vec<(u32, f64)> = probs;
        probs.sort_by_key(|p| p.0);
        for w in probs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ModelError::DuplicateOffspring(w[0].0));
            }
        }
        for &(_, p) in &probs {
            non_negative("p_k", p)?;
        }
        let total: f64 = probs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::ProbabilitySum(total));
        }
        probs.retain(|p| p.1 > 0.0);
        Ok(OffspringLaw { gamma, probs })
    }

    /// No branching at all: each particle lives forever.
    pub fn frozen() -> Self {
        OffspringLaw { gamma: 0.0, probs: vec![(1, 1.0)] }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ModelError> {
        OffspringLaw::new(gamma, self.probs.clone())
    }

    pub fn probabilities(&self) -> &[(u32, f64)] {
        &self.probs
    }

    pub fn stats(&self) -> OffspringSummary {
        let mean = self.probs.iter().map(|&(k, p)| k as f64 * p).sum();
        let k_max = self.probs.iter().map(|p| p.0).max().unwrap_or(0);
        OffspringSummary { mean, k_max, k_bar: k_max + 1 }
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn sample_count(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for &(k, p) in &self.probs {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.probs.last().map(|p| p.0).unwrap_or(0)
    }
}

/// Terminal payoff family `g_i(x)`.
pub trait Payoff: Send + Sync {
    fn value(&self, label: &Label, x: &[f64]) -> f64;
}

impl<F> Payoff for F
where
    F: Fn(&Label, &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, label: &Label, x: &[f64]) -> f64 {
        self(label, x)
    }
}

/// Horizon and payoff of the target problem.
#[derive(Clone)]
pub struct TargetSpec {
    pub horizon: f64,
    pub payoff: Arc<dyn Payoff>,
}

impl TargetSpec {
    pub fn new(horizon: f64, payoff: Arc<dyn Payoff>) -> Result<Self, ModelError> {
        positive("T", horizon)?;
        Ok(TargetSpec { horizon, payoff })
    }

    pub fn g(&self, label: &Label, x: &[f64]) -> f64 {
        self.payoff.value(label, x)
    }
}

impl fmt::Debug for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetSpec").field("horizon", &self.horizon).finish_non_exhaustive()
    }
}

/// Fork-dependent put with friction: `g_i(x) = log((K_i − e^x)_+ + κ)`,
/// and `g_i ≡ 0` once a label carries a digit `≥ I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForkPutPayoff {
    pub kappa: f64,
    pub strike0: f64,
    pub strikes: BTreeMap<Label, f64>,
    pub zero_index_bound: Option<u32>,
}

impl ForkPutPayoff {
    /// `K_i`: table entry if present, else `K₀ · 2^{−digit_sum(i)}`.
    pub fn strike(&self, label: &Label) -> f64 {
        self.strikes
            .get(label)
            .copied()
            .unwrap_or_else(|| self.strike0 * 0.5f64.powi(label.digit_sum().min(2000) as i32))
    }

    pub fn is_zeroed(&self, label: &Label) -> bool {
        match (self.zero_index_bound, label.max_digit()) {
            (Some(bound), Some(d)) => d >= bound,
            _ => false,
        }
    }

    /// `sup_i K_i`: the default schedule peaks at the root.
    pub fn strike_sup(&self) -> f64 {
        self.strikes.values().copied().fold(self.strike0, f64::max)
    }

    pub fn put(&self, strike: f64, x: f64) -> f64 {
        ((strike - x.exp()).max(0.0) + self.kappa).ln()
    }
}

impl Payoff for ForkPutPayoff {
    fn value(&self, label: &Label, x: &[f64]) -> f64 {
        if self.is_zeroed(label) {
            0.0
        } else {
            self.put(self.strike(label), x[0])
        }
    }
}

/// Same payoff for every label, linear interpolation between knots and flat
/// extrapolation outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPayoff {
    xs: Vec<f64>,
    gs: Vec<f64>,
}

impl TabulatedPayoff {
    pub fn new(xs: Vec<f64>, gs: Vec<f64>) -> Result<Self, ModelError> {
        if xs.len() < 2 || xs.len() != gs.len() || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::PayoffKnots);
        }
        if xs.iter().chain(&gs).any(|v| !v.is_finite()) {
            return Err(ModelError::PayoffKnots);
        }
        Ok(TabulatedPayoff { xs, gs })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.gs[0];
        }
        if x >= self.xs[n - 1] {
            return self.gs[n - 1];
        }
        let j = self.xs.partition_point(|&k| k <= x) - 1;
        let w = (x - self.xs[j]) / (self.xs[j + 1] - self.xs[j]);
        self.gs[j] * (1.0 - w) + self.gs[j + 1] * w
    }
}

impl Payoff for TabulatedPayoff {
    fn value(&self, _label: &Label, x: &[f64]) -> f64 {
        self.eval(x[0])
    }
}

/// Parameters of the forking-asset super-replication problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FintechParams {
    pub b: f64,
    pub c: f64,
    pub r: f64,
    pub kappa: f64,
    pub strike0: f64,
    pub strikes: BTreeMap<Label, f64>,
    pub zero_index_bound: Option<u32>,
    pub horizon: f64,
    pub control_points: usize,
}

impl FintechParams {
    /// Closed-form bracket on the value at time `t`:
    /// riskless roll-up above, growth-rate bound below.
    pub fn value_bounds(&self, t: f64) -> (f64, f64) {
        let tau = self.horizon - t;
        let sharpe = (self.b - self.r) / self.c;
        let lower = -(sharpe * sharpe + self.r) * tau + self.kappa.ln();
        let upper = -self.r * tau + (self.payoff().strike_sup() + self.kappa).ln();
        (lower, upper)
    }

    pub fn payoff(&self) -> ForkPutPayoff {
        ForkPutPayoff {
            kappa: self.kappa,
            strike0: self.strike0,
            strikes: self.strikes.clone(),
            zero_index_bound: self.zero_index_bound,
        }
    }
}

/// Builds the forking-asset model and its put target.
pub fn fintech_scenario(p: &FintechParams) -> Result<(FintechModel, TargetSpec), ModelError> {
    positive("kappa", p.kappa)?;
    non_negative("strike0", p.strike0)?;
    for &k in p.strikes.values() {
        non_negative("strike", k)?;
    }
    let model = FintechModel::new(p.b, p.c, p.r, p.control_points)?;
    let target = TargetSpec::new(p.horizon, Arc::new(p.payoff()))?;
    Ok((model, target))
}
