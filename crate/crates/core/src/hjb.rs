//! Explicit finite-difference solver for the variational inequality
//!
//! ```text
//! min{ −∂_t v_i + F(x, v_i, ∂_x v_i, ∂_xx v_i) ; v_i − max_k v_ik } = 0,
//! min{ v_i(T) − g_i ; δ(x, ∂_x v_i(T)) ; v_i(T) − max_k v_ik(T) } = 0,
//! ```
//!
//! on a truncated label tree, for scalar state and noise (`d = m = 1`).
//!
//! The operator `F` takes a supremum over the ε-kernel of controls that
//! cancel the diffusive mismatch `N^a(x,p) = σ_Y(x,a) − σ(x,a) p`. The
//! gradient constraint `δ ≥ 0` is enforced by face-lifting every time slice
//! onto the cone of admissible slopes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::labels::{truncated_tree, Label};
use crate::model::{CoefficientModel, OffspringLaw, ScalarCoefficients, TargetSpec};
use crate::simulate::FeedbackControl;

#[derive(Debug, Error, PartialEq)]
pub enum HjbError {
    #[error("time step {dt} exceeds the monotone-scheme bound {max_dt}; use nt >= {min_nt}")]
    Cfl { dt: f64, max_dt: f64, min_nt: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("the solver handles d = m = 1 only (got d = {d}, m = {m})")]
    Dimension { d: usize, m: usize },
    #[error("diffusion changes sign across controls at x = {0}; slope cone is not an interval")]
    MixedSignCone(f64),
}

/// Space-time grid and tree truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    /// Generations kept in the label tree.
    pub depth: usize,
    /// Child indices `0..offspring_index_cap` are kept at every node.
    pub offspring_index_cap: u32,
    /// Kernel slack `ε`.
    pub epsilon: f64,
    /// Start of the time grid.
    pub t0: f64,
}

impl GridSpec {
    /// Smallest ε that keeps the kernel non-empty inside the slope cone:
    /// half a control step times the largest `|σ|`.
    pub fn grid_scale_epsilon<M: CoefficientModel + ?Sized>(model: &M, x_lo: f64, x_hi: f64) -> f64 {
        let controls = model.controls();
        let sigma = [x_lo, 0.5 * (x_lo + x_hi), x_hi]
            .iter()
            .flat_map(|&x| controls.points().iter().map(move |&a| (x, a)))
            .map(|(x, a)| model.diffusion1(x, a).abs())
            .fold(0.0, f64::max);
        0.5 * controls.max_step() * sigma
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        (horizon - self.t0) / self.nt as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx).map(|j| if j + 1 == self.nx { self.x_hi } else { self.x_lo + j as f64 * dx }).collect()
    }

    pub fn validate(&self, horizon: f64) -> Result<(), HjbError> {
        if !(self.x_lo < self.x_hi) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(HjbError::Grid(format!("need x_lo < x_hi, got [{}, {}]", self.x_lo, self.x_hi)));
        }
        if self.nx < 3 {
            return Err(HjbError::Grid(format!("nx must be >= 3, got {}", self.nx)));
        }
        if self.nt < 1 {
            return Err(HjbError::Grid("nt must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(HjbError::Grid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.t0 < horizon) {
            return Err(HjbError::Grid(format!("t0 = {} must precede T = {horizon}", self.t0)));
        }
        Ok(())
    }
}

fn require_scalar<M: CoefficientModel + ?Sized>(model: &M) -> Result<(), HjbError> {
    if model.dim_x() != 1 || model.dim_noise() != 1 {
        return Err(HjbError::Dimension { d: model.dim_x(), m: model.dim_noise() });
    }
    Ok(())
}

/// Grid controls with `|N^a(x,p)| ≤ ε` (possibly none).
pub fn kernel<M: CoefficientModel + ?Sized>(model: &M, x: f64, p: f64, epsilon: f64) -> Vec<f64> {
    model.controls().points().iter().copied().filter(|&a| model.mismatch(x, a, p).abs() <= epsilon).collect()
}

/// The quantity maximised by `F` at control `a`; `p_drift` is the gradient
/// seen by the transport term (upwinded by the solver).
pub fn hamiltonian_integrand<M: CoefficientModel + ?Sized>(
    model: &M,
    x: f64,
    y: f64,
    a: f64,
    p_drift: f64,
    m2: f64,
) -> f64 {
    let s = model.diffusion1(x, a);
    model.target_drift1(x, y, a) - model.drift1(x, a) * p_drift - 0.5 * s * s * m2
}

/// `F_ε(x, y, p, M)`; `−∞` when the kernel is empty.
pub fn operator_f<M: CoefficientModel + ?Sized>(model: &M, x: f64, y: f64, p: f64, m2: f64, epsilon: f64) -> f64 {
    kernel(model, x, p, epsilon)
        .into_iter()
        .map(|a| hamiltonian_integrand(model, x, y, a, p, m2))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Signed distance `dist(0, Nᶜ) − dist(0, N)` with `N` the interval hull of
/// the mismatch image `{N^a(x,p) : a ∈ A}`.
pub fn delta_distance<M: CoefficientModel + ?Sized>(model: &M, x: f64, p: f64) -> Result<f64, HjbError> {
    require_scalar(model)?;
    let (lo, hi) = model
        .controls()
        .points()
        .iter()
        .map(|&a| model.mismatch(x, a, p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    // inside: distance to the nearer endpoint; outside: minus the distance
    // to the nearer endpoint; both cases reduce to this
    Ok((-lo).min(hi))
}

/// Interval of slopes `p` with `δ(x, p) ≥ 0`.
pub fn gradient_cone<M: CoefficientModel + ?Sized>(model: &M, x: f64) -> Result<(f64, f64), HjbError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let (mut pos, mut neg) = (false, false);
    for &a in model.controls().points() {
        let s = model.diffusion1(x, a);
        let sy = model.target_diffusion1(x, a);
        if s == 0.0 {
            if sy == 0.0 {
                // this control matches every slope
                return Ok((f64::NEG_INFINITY, f64::INFINITY));
            }
            continue;
        }
        if s > 0.0 {
            pos = true;
        } else {
            neg = true;
        }
        let q = sy / s;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    if pos && neg {
        return Err(HjbError::MixedSignCone(x));
    }
    if !pos && !neg {
        // no control can cancel a non-zero mismatch: every slope is inadmissible;
        // the smallest dominating function is then unconstrained
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    Ok((lo, hi))
}

/// Smallest function above `slice` whose discrete slopes lie in
/// `[slope_lo, slope_hi]`.
pub fn facelift(slice: &[f64], dx: f64, slope_lo: f64, slope_hi: f64) -> Vec<f64> {
    let cones = vec![(slope_lo, slope_hi); slice.len().saturating_sub(1)];
    facelift_varying(slice, dx, &cones)
}

/// Face-lift with one slope interval per grid cell (`cones.len() == n − 1`).
pub fn facelift_varying(slice: &[f64], dx: f64, cones: &[(f64, f64)]) -> Vec<f64> {
    let mut u = slice.to_vec();
    let n = u.len();
    for j in 1..n {
        let cand = u[j - 1] + cones[j - 1].0 * dx;
        if cand > u[j] {
            u[j] = cand;
        }
    }
    for j in (0..n.saturating_sub(1)).rev() {
        let cand = u[j + 1] - cones[j].1 * dx;
        if cand > u[j] {
            u[j] = cand;
        }
    }
    u
}

/// Largest amount by which face-lifting would raise `slice`.
pub fn facelift_residual(slice: &[f64], dx: f64, cones: &[(f64, f64)]) -> f64 {
    facelift_varying(slice, dx, cones).iter().zip(slice).map(|(a, b)| a - b).fold(0.0, f64::max)
}

/// Outcome of the monotone-scheme time-step bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CflReport {
    pub dt: f64,
    pub max_dt: f64,
    pub ok: bool,
    pub min_nt: usize,
}

/// `dt ≤ dx² / (max σ² + dx max |λ|)` over grid nodes and controls.
pub fn cfl_check<M: CoefficientModel + ?Sized>(model: &M, grid: &GridSpec, horizon: f64) -> CflReport {
    let dx = grid.dx();
    let (mut s2, mut lam) = (0.0f64, 0.0f64);
    for x in grid.xs() {
        for &a in model.controls().points() {
            let s = model.diffusion1(x, a);
            s2 = s2.max(s * s);
            lam = lam.max(model.drift1(x, a).abs());
        }
    }
    let denom = s2 + dx * lam;
    let max_dt = if denom == 0.0 { f64::INFINITY } else { dx * dx / denom };
    let dt = grid.dt(horizon);
    let min_nt = if max_dt.is_finite() { ((horizon - grid.t0) / max_dt).ceil().max(1.0) as usize } else { 1 };
    CflReport { dt, max_dt, ok: dt <= max_dt * (1.0 + 1e-12), min_nt }
}

/// Per-label value arrays on the `(t, x)` grid, `v̄_i(t_n, x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueSurface {
    pub grid: GridSpec,
    pub horizon: f64,
    /// Child index range actually used in the obstacle.
    pub children_per_node: u32,
    /// `K̄ = K_max + 1` as it appears in the equation, for reporting.
    pub literal_k_bar: u32,
    pub labels: Vec<Label>,
    pub cones: Vec<(f64, f64)>,
    values: BTreeMap<Label, Vec<f64>>,
}

impl ValueSurface {
    pub fn nt(&self) -> usize {
        self.grid.nt
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt(self.horizon)
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.grid.nt {
            self.horizon
        } else {
            self.grid.t0 + n as f64 * self.dt()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        self.grid.xs()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.values.contains_key(label)
    }

    /// Longest ancestor-or-self of `label` that the truncated tree keeps.
    pub fn resolve(&self, label: &Label) -> Label {
        label.longest_prefix_where(|l| self.values.contains_key(l)).unwrap_or_else(Label::root)
    }

    pub fn slice(&self, label: &Label, n: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.values[label][n * nx..(n + 1) * nx]
    }

    pub fn children(&self, label: &Label) -> Vec<Label> {
        (0..self.children_per_node).map(|k| label.child(k)).filter(|c| self.values.contains_key(c)).collect()
    }

    /// Nearest time level to `t`.
    pub fn level(&self, t: f64) -> usize {
        let n = ((t - self.grid.t0) / self.dt()).round();
        n.clamp(0.0, self.grid.nt as f64) as usize
    }

    /// `v̄_i(t, x)`: nearest time level, linear in `x`; `None` outside the grid.
    pub fn value(&self, label: &Label, t: f64, x: f64) -> Option<f64> {
        if !(x >= self.grid.x_lo && x <= self.grid.x_hi) {
            return None;
        }
        let label = self.resolve(label);
        let s = self.slice(&label, self.level(t));
        let pos = (x - self.grid.x_lo) / self.grid.dx();
        let j = (pos.floor() as usize).min(self.grid.nx - 2);
        let w = pos - j as f64;
        Some(s[j] * (1.0 - w) + s[j + 1] * w)
    }

    /// Largest `v_ik − v_i` over every node and kept child (≤ 0 when the
    /// obstacle holds).
    pub fn obstacle_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for l in &self.labels {
            for c in self.children(l) {
                for (p, q) in self.values[l].iter().zip(&self.values[&c]) {
                    worst = worst.max(q - p);
                }
            }
        }
        worst
    }

    /// Largest amount face-lifting would raise any slice.
    pub fn facelift_violation(&self) -> f64 {
        let dx = self.grid.dx();
        let mut worst: f64 = 0.0;
        for l in &self.labels {
            for n in 0..=self.grid.nt {
                worst = worst.max(facelift_residual(self.slice(l, n), dx, &self.cones));
            }
        }
        worst
    }
}

/// Terminal slices by bottom-up tree supremum:
/// `v_i(T) = facelift(max(g_i, max_k v_ik(T)))`, leaves `facelift(g_i)`.
pub fn terminal_tree_sup(
    target: &TargetSpec,
    labels: &[Label],
    children_per_node: u32,
    xs: &[f64],
    cones: &[(f64, f64)],
) -> BTreeMap<Label, Vec<f64>> {
    let dx = xs[1] - xs[0];
    let kept: std::collections::BTreeSet<&Label> = labels.iter().collect();
    let mut order: Vec<&Label> = labels.iter().collect();
    order.sort_by(|a, b| b.generation().cmp(&a.generation()).then(a.cmp(b)));
    let mut out: BTreeMap<Label, Vec<f64>> = BTreeMap::new();
    for l in order {
        let mut s: Vec<f64> = xs.iter().map(|&x| target.g(l, &[x])).collect();
        for k in 0..children_per_node {
            let c = l.child(k);
            if kept.contains(&c) {
                for (v, w) in s.iter_mut().zip(&out[&c]) {
                    *v = v.max(*w);
                }
            }
        }
        out.insert(l.clone(), facelift_varying(&s, dx, cones));
    }
    out
}

struct Coefficients {
    /// `[node][control]` tables of λ, σ, σ_Y.
    drift: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    target_sigma: Vec<Vec<f64>>,
}

impl Coefficients {
    fn tabulate<M: CoefficientModel + ?Sized>(model: &M, xs: &[f64]) -> Self {
        let ctrl = model.controls().points();
        let table = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            xs.iter().map(|&x| ctrl.iter().map(|&a| f(x, a)).collect()).collect()
        };
        Coefficients {
            drift: table(&|x, a| model.drift1(x, a)),
            sigma: table(&|x, a| model.diffusion1(x, a)),
            target_sigma: table(&|x, a| model.target_diffusion1(x, a)),
        }
    }
}

/// Finite-difference gradient data at one node.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    p_central: f64,
    p_forward: f64,
    p_backward: f64,
    m2: f64,
}

fn stencil(v: &[f64], j: usize, dx: f64, cone: (f64, f64)) -> Stencil {
    let n = v.len();
    if j == 0 {
        let p = ((v[1] - v[0]) / dx).clamp(cone.0, cone.1);
        Stencil { p_central: p, p_forward: p, p_backward: p, m2: 0.0 }
    } else if j + 1 == n {
        let p = ((v[n - 1] - v[n - 2]) / dx).clamp(cone.0, cone.1);
        Stencil { p_central: p, p_forward: p, p_backward: p, m2: 0.0 }
    } else {
        Stencil {
            p_central: (v[j + 1] - v[j - 1]) / (2.0 * dx),
            p_forward: (v[j + 1] - v[j]) / dx,
            p_backward: (v[j] - v[j - 1]) / dx,
            m2: (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (dx * dx),
        }
    }
}

/// Best kernel control at a node: `(control, F)`; `None` for an empty kernel.
/// Ties go to the smallest control.
fn best_control<M: CoefficientModel + ?Sized>(
    model: &M,
    coef: &Coefficients,
    j: usize,
    x: f64,
    y: f64,
    st: &Stencil,
    epsilon: f64,
) -> Option<(f64, f64)> {
    let ctrl = model.controls().points();
    let mut best: Option<(f64, f64)> = None;
    for (k, &a) in ctrl.iter().enumerate() {
        let s = coef.sigma[j][k];
        if (coef.target_sigma[j][k] - s * st.p_central).abs() > epsilon {
            continue;
        }
        let lam = coef.drift[j][k];
        let p_up = if lam > 0.0 { st.p_forward } else { st.p_backward };
        let val = model.target_drift1(x, y, a) - lam * p_up - 0.5 * s * s * st.m2;
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((a, val));
        }
    }
    best
}

/// Backward explicit scheme on the truncated tree.
///
/// Children are solved before parents; within a generation labels are
/// independent and run in parallel.
pub fn solve_vi<M: CoefficientModel + ?Sized>(
    model: &M,
    law: &OffspringLaw,
    target: &TargetSpec,
    grid: &GridSpec,
) -> Result<ValueSurface, HjbError> {
    require_scalar(model)?;
    let horizon = target.horizon;
    grid.validate(horizon)?;
    let cfl = cfl_check(model, grid, horizon);
    if !cfl.ok {
        return Err(HjbError::Cfl { dt: cfl.dt, max_dt: cfl.max_dt, min_nt: cfl.min_nt });
    }
    let stats = law.stats();
    let arity = grid.offspring_index_cap;
    let labels = truncated_tree(grid.depth, arity);
    let xs = grid.xs();
    let dx = grid.dx();
    let dt = grid.dt(horizon);
    let (nx, nt) = (grid.nx, grid.nt);

    let cones: Vec<(f64, f64)> =
        xs.windows(2).map(|w| gradient_cone(model, 0.5 * (w[0] + w[1]))).collect::<Result<_, _>>()?;
    let node_cones: Vec<(f64, f64)> = xs.iter().map(|&x| gradient_cone(model, x)).collect::<Result<_, _>>()?;
    let coef = Coefficients::tabulate(model, &xs);
    let terminal = terminal_tree_sup(target, &labels, arity, &xs, &cones);

    let mut values: BTreeMap<Label, Vec<f64>> = BTreeMap::new();
    for depth in (0..=grid.depth).rev() {
        let level: Vec<&Label> = labels.iter().filter(|l| l.generation() == depth).collect();
        let solved: Vec<(Label, Vec<f64>)> = level
            .par_iter()
            .map(|&label| {
                let children: Vec<&Vec<f64>> = if depth < grid.depth {
                    (0..arity).filter_map(|k| values.get(&label.child(k))).collect()
                } else {
                    Vec::new()
                };
                let mut surf = vec![0.0; (nt + 1) * nx];
                surf[nt * nx..].copy_from_slice(&terminal[label]);
                let mut next = vec![0.0; nx];
                for n in (0..nt).rev() {
                    let v_next = &surf[(n + 1) * nx..(n + 2) * nx];
                    for j in 0..nx {
                        let st = stencil(v_next, j, dx, node_cones[j]);
                        next[j] = match best_control(model, &coef, j, xs[j], v_next[j], &st, grid.epsilon) {
                            Some((_, f)) => v_next[j] - dt * f,
                            // empty kernel: left to the face-lift
                            None => v_next[j],
                        };
                    }
                    let mut v = facelift_varying(&next, dx, &cones);
                    for c in &children {
                        for (vj, cj) in v.iter_mut().zip(&c[n * nx..(n + 1) * nx]) {
                            if *cj > *vj {
                                *vj = *cj;
                            }
                        }
                    }
                    surf[n * nx..(n + 1) * nx].copy_from_slice(&v);
                }
                (label.clone(), surf)
            })
            .collect();
        values.extend(solved);
    }

    Ok(ValueSurface {
        grid: grid.clone(),
        horizon,
        children_per_node: arity,
        literal_k_bar: stats.k_bar,
        labels,
        cones,
        values,
    })
}

/// Feedback controls read off a value surface.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    grid: GridSpec,
    horizon: f64,
    controls: BTreeMap<Label, Vec<f64>>,
    empty_kernel: BTreeMap<Label, Vec<bool>>,
}

impl FeedbackTable {
    pub fn control_at(&self, label: &Label, n: usize, j: usize) -> f64 {
        self.controls[label][n * self.grid.nx + j]
    }

    pub fn flagged(&self, label: &Label, n: usize, j: usize) -> bool {
        self.empty_kernel[label][n * self.grid.nx + j]
    }

    pub fn flagged_count(&self) -> usize {
        self.empty_kernel.values().flatten().filter(|&&f| f).count()
    }

    fn resolve(&self, label: &Label) -> Label {
        label.longest_prefix_where(|l| self.controls.contains_key(l)).unwrap_or_else(Label::root)
    }
}

impl FeedbackControl for FeedbackTable {
    /// Level `⌊(t − t0)/dt⌋`, nearest space node (clamped to the grid).
    fn control(&self, label: &Label, t: f64, x: &[f64], _y: f64) -> f64 {
        let dt = self.grid.dt(self.horizon);
        let n = (((t - self.grid.t0) / dt).floor().max(0.0) as usize).min(self.grid.nt);
        let pos = ((x[0] - self.grid.x_lo) / self.grid.dx()).round();
        let j = pos.clamp(0.0, (self.grid.nx - 1) as f64) as usize;
        self.control_at(&self.resolve(label), n, j)
    }

    fn name(&self) -> String {
        "pde-feedback".to_string()
    }
}

/// Per `(label, t, x)`: the kernel control maximising the integrand of `F`.
/// Where the kernel is empty the control with the smallest `|N^a|` is used
/// and the node is flagged.
pub fn extract_feedback<M: CoefficientModel + ?Sized>(
    surface: &ValueSurface,
    model: &M,
    epsilon: f64,
) -> Result<FeedbackTable, HjbError> {
    require_scalar(model)?;
    let xs = surface.xs();
    let dx = surface.grid.dx();
    let (nx, nt) = (surface.nx(), surface.nt());
    let coef = Coefficients::tabulate(model, &xs);
    let node_cones: Vec<(f64, f64)> = xs.iter().map(|&x| gradient_cone(model, x)).collect::<Result<_, _>>()?;
    let ctrl = model.controls().points();
    let mut controls = BTreeMap::new();
    let mut empty_kernel = BTreeMap::new();
    for label in &surface.labels {
        let mut a_out = vec![0.0; (nt + 1) * nx];
        let mut f_out = vec![false; (nt + 1) * nx];
        for n in 0..=nt {
            let v = surface.slice(label, n);
            for j in 0..nx {
                let st = stencil(v, j, dx, node_cones[j]);
                let idx = n * nx + j;
                match best_control(model, &coef, j, xs[j], v[j], &st, epsilon) {
                    Some((a, _)) => a_out[idx] = a,
                    None => {
                        let mut best = (ctrl[0], f64::INFINITY);
                        for (k, &a) in ctrl.iter().enumerate() {
                            let gap = (coef.target_sigma[j][k] - coef.sigma[j][k] * st.p_central).abs();
                            if gap < best.1 {
                                best = (a, gap);
                            }
                        }
                        a_out[idx] = best.0;
                        f_out[idx] = true;
                    }
                }
            }
        }
        controls.insert(label.clone(), a_out);
        empty_kernel.insert(label.clone(), f_out);
    }
    Ok(FeedbackTable { grid: surface.grid.clone(), horizon: surface.horizon, controls, empty_kernel })
}

impl ValueSurface {
    /// Builds a surface from explicit per-label arrays (`(nt+1)·nx` each).
    pub fn from_values(
        grid: GridSpec,
        horizon: f64,
        cones: Vec<(f64, f64)>,
        values: BTreeMap<Label, Vec<f64>>,
    ) -> Result<Self, HjbError> {
        grid.validate(horizon)?;
        let len = (grid.nt + 1) * grid.nx;
        if let Some((l, _)) = values.iter().find(|(_, v)| v.len() != len) {
            return Err(HjbError::Grid(format!("surface for {l} has wrong length")));
        }
        if cones.len() + 1 != grid.nx {
            return Err(HjbError::Grid("one cone per cell expected".into()));
        }
        let labels: Vec<Label> = values.keys().cloned().collect();
        Ok(ValueSurface {
            children_per_node: grid.offspring_index_cap,
            literal_k_bar: grid.offspring_index_cap + 1,
            grid,
            horizon,
            labels,
            cones,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fintech_scenario, CoefficientRow, FintechModel, FintechParams, TabulatedModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn desk_params() -> FintechParams {
        FintechParams {
            b: 0.1,
            c: 0.2,
            r: 0.02,
            kappa: 0.1,
            strike0: 1.0,
            strikes: BTreeMap::new(),
            zero_index_bound: Some(2),
            horizon: 1.0,
            control_points: 101,
        }
    }

    fn fintech() -> FintechModel {
        FintechModel::new(0.1, 0.2, 0.02, 101).unwrap()
    }

    fn desk_grid(model: &FintechModel, nx: usize, nt: usize, depth: usize) -> GridSpec {
        GridSpec {
            x_lo: -8.0,
            x_hi: 4.0,
            nx,
            nt,
            depth,
            offspring_index_cap: 2,
            epsilon: GridSpec::grid_scale_epsilon(model, -8.0, 4.0),
            t0: 0.0,
        }
    }

    /// Sup-convolution with the slope cone, O(n²).
    fn brute_facelift(f: &[f64], dx: f64, lo: f64, hi: f64) -> Vec<f64> {
        (0..f.len())
            .map(|j| {
                (0..f.len())
                    .map(|k| {
                        let h = (j as f64 - k as f64) * dx;
                        f[k] + (lo * h).min(hi * h)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    fn zero_row() -> CoefficientRow {
        CoefficientRow { drift: 0.0, diffusion: 0.0, target_drift: 0.0, target_drift_y: 0.0, target_diffusion: 0.0 }
    }

    #[test]
    fn kernel_examples() {
        let m = fintech();
        assert_eq!(kernel(&m, 0.0, 0.5, 0.0), vec![0.5]);
        assert!(kernel(&m, 0.0, 1.2, 0.0).is_empty());
        let k = kernel(&m, 0.0, 1.2, 0.1);
        assert!(k.iter().all(|&a| (0.7 - 1e-9..=1.0).contains(&a)));
        assert!(k.len() == 30 || k.len() == 31);
        assert!(k.contains(&1.0));
    }

    #[test]
    fn operator_f_examples() {
        let m = fintech();
        assert_eq!(operator_f(&m, 0.0, 0.0, 1.2, 0.0, 0.0), f64::NEG_INFINITY);
        assert!((operator_f(&m, 0.0, 0.0, 0.5, 0.0, 0.0) - 0.015).abs() < 1e-15);
        // σ_Y ≡ σ p: kernel is the whole grid, F is a plain scan
        let rows: Vec<CoefficientRow> = (0..11)
            .map(|k| CoefficientRow {
                drift: 0.1 * k as f64,
                diffusion: 0.5,
                target_drift: (k as f64 - 4.0).powi(2) * -0.1,
                target_drift_y: 0.0,
                target_diffusion: 0.25,
            })
            .collect();
        let t = TabulatedModel::new((0..11).map(|k| k as f64 / 10.0).collect(), rows.clone()).unwrap();
        let p = 0.5;
        let m2 = -0.3;
        let scan = rows
            .iter()
            .map(|r| r.target_drift - r.drift * p - 0.5 * r.diffusion * r.diffusion * m2)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(kernel(&t, 0.0, p, 0.0).len(), 11);
        assert!((operator_f(&t, 0.0, 0.0, p, m2, 0.0) - scan).abs() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        let m = fintech();
        assert!((delta_distance(&m, 0.0, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert!((delta_distance(&m, 0.0, 1.5).unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(delta_distance(&m, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(gradient_cone(&m, 0.3).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn delta_positive_iff_interior() {
        let m = fintech();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p: f64 = rng.random_range(-1.0..2.0);
            let d = delta_distance(&m, 0.0, p).unwrap();
            assert_eq!(d > 0.0, p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn facelift_examples() {
        let ok = vec![0.0, 0.1, 0.1, 0.3, 0.35];
        assert_eq!(facelift(&ok, 0.1, 0.0, 2.0), ok);
        let step = vec![0.0, 0.0, 1.0, 1.0, 0.2, 0.5];
        assert_eq!(facelift(&step, 1.0, 0.0, 0.0), vec![1.0; 6]);
        let once = facelift(&step, 0.5, -0.3, 0.4);
        assert_eq!(facelift(&once, 0.5, -0.3, 0.4), once);
    }

    #[test]
    fn facelift_matches_brute_force_on_put() {
        let payoff = desk_params().payoff();
        let dx = 3.0 / 49.0;
        let g: Vec<f64> = (0..50).map(|j| payoff.put(1.0, -2.0 + j as f64 * dx)).collect();
        for (lo, hi) in [(0.0, 1.0), (-0.5, 0.5), (-2.0, 0.0)] {
            let fast = facelift(&g, dx, lo, hi);
            let slow = brute_facelift(&g, dx, lo, hi);
            for j in 0..50 {
                assert!((fast[j] - slow[j]).abs() < 1e-12);
                assert!(fast[j] >= g[j]);
            }
            for w in fast.windows(2) {
                let s = (w[1] - w[0]) / dx;
                assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn facelift_random_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let f: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lo = rng.random_range(-2.0..0.5);
            let hi = lo + rng.random_range(0.0..2.0);
            let fast = facelift(&f, 0.05, lo, hi);
            let slow = brute_facelift(&f, 0.05, lo, hi);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfl_examples() {
        let row = CoefficientRow { drift: -0.5, ..zero_row() };
        let t = TabulatedModel::constant(row);
        let g =
            GridSpec { x_lo: 0.0, x_hi: 1.0, nx: 101, nt: 10, depth: 0, offspring_index_cap: 0, epsilon: 0.0, t0: 0.0 };
        let r = cfl_check(&t, &g, 1.0);
        assert!((r.max_dt - 0.01 / 0.5).abs() < 1e-12);
        assert!(!r.ok);
        assert_eq!(r.min_nt, 50);
        let m = fintech();
        let g = GridSpec {
            x_lo: 0.0,
            x_hi: 1.0,
            nx: 101,
            nt: 500,
            depth: 0,
            offspring_index_cap: 0,
            epsilon: 0.0,
            t0: 0.0,
        };
        let r = cfl_check(&m, &g, 1.0);
        assert!((r.max_dt - 1e-4 / (0.04 + 0.01 * 0.08)).abs() < 1e-12);
        assert!(r.ok);
        let mut tight = g.clone();
        tight.nt = 400;
        assert!(!cfl_check(&m, &tight, 1.0).ok);
    }

    #[test]
    fn zero_problem_stays_zero() {
        let t = TabulatedModel::constant(zero_row());
        let target = TargetSpec::new(1.0, Arc::new(|_: &Label, _: &[f64]| 0.0)).unwrap();
        let g =
            GridSpec { x_lo: -1.0, x_hi: 1.0, nx: 21, nt: 10, depth: 0, offspring_index_cap: 0, epsilon: 0.0, t0: 0.0 };
        let s = solve_vi(&t, &OffspringLaw::frozen(), &target, &g).unwrap();
        for n in 0..=10 {
            assert!(s.slice(&Label::root(), n).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deterministic_transport_is_exact() {
        // v(t, x) = x + (λ − λ_Y)(T − t) for g(x) = x
        let row = CoefficientRow { drift: 0.3, target_drift: 0.1, ..zero_row() };
        let t = TabulatedModel::constant(row);
        let target = TargetSpec::new(2.0, Arc::new(|_: &Label, x: &[f64]| x[0])).unwrap();
        let g =
            GridSpec { x_lo: -1.0, x_hi: 1.0, nx: 41, nt: 20, depth: 0, offspring_index_cap: 0, epsilon: 0.0, t0: 0.0 };
        let s = solve_vi(&t, &OffspringLaw::frozen(), &target, &g).unwrap();
        let xs = s.xs();
        for n in 0..=20 {
            let tau = 2.0 - s.time(n);
            for (j, &x) in xs.iter().enumerate() {
                assert!((s.slice(&Label::root(), n)[j] - (x + 0.2 * tau)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_does_not_enter_the_equation() {
        let (m, target) = fintech_scenario(&desk_params()).unwrap();
        let g = desk_grid(&m, 121, 20, 2);
        let a = solve_vi(&m, &OffspringLaw::new(0.3, vec![(0, 0.5), (2, 0.5)]).unwrap(), &target, &g).unwrap();
        let b = solve_vi(&m, &OffspringLaw::new(7.0, vec![(0, 0.5), (2, 0.5)]).unwrap(), &target, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn desk_value_in_bracket_and_invariants() {
        let params = desk_params();
        let (m, target) = fintech_scenario(&params).unwrap();
        let law = OffspringLaw::new(1.0, vec![(0, 0.1), (2, 0.9)]).unwrap();
        let g = desk_grid(&m, 201, 20, 3);
        let s = solve_vi(&m, &law, &target, &g).unwrap();
        assert_eq!(s.labels.len(), 15);
        assert_eq!(s.literal_k_bar, 3);
        let v0 = s.value(&Label::root(), 0.0, 0.0).unwrap();
        let (lo, hi) = params.value_bounds(0.0);
        assert!(v0 >= lo - 1e-2 && v0 <= hi + 1e-2, "v0 = {v0}");
        assert!(s.obstacle_violation() <= 1e-12);
        assert!(s.facelift_violation() <= 1e-12);
    }

    #[test]
    fn terminal_tree_sup_examples() {
        let xs: Vec<f64> = (0..31).map(|j| -1.5 + 0.1 * j as f64).collect();
        let cones = vec![(0.0, 1.0); 30];
        let labels = truncated_tree(2, 2);
        let same = TargetSpec::new(1.0, Arc::new(|_: &Label, x: &[f64]| (-x[0]).max(0.0))).unwrap();
        let t = terminal_tree_sup(&same, &labels, 2, &xs, &cones);
        let lifted = facelift(&xs.iter().map(|&x| (-x).max(0.0)).collect::<Vec<_>>(), 0.1, 0.0, 1.0);
        for l in &labels {
            for (a, b) in t[l].iter().zip(&lifted) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // a single dominant child passes its slice up
        let labels = truncated_tree(1, 1);
        let dom = TargetSpec::new(1.0, Arc::new(|l: &Label, x: &[f64]| 0.5 * x[0] + l.generation() as f64)).unwrap();
        let t = terminal_tree_sup(&dom, &labels, 1, &xs, &cones);
        assert_eq!(t[&Label::root()], t[&Label::from([0])]);
        // halving strikes: the root dominates its children
        let (m, target) = fintech_scenario(&desk_params()).unwrap();
        let labels = truncated_tree(2, 2);
        let xs: Vec<f64> = (0..61).map(|j| -3.0 + 0.1 * j as f64).collect();
        let cones: Vec<(f64, f64)> = xs.windows(2).map(|_| gradient_cone(&m, 0.0).unwrap()).collect();
        let t = terminal_tree_sup(&target, &labels, 2, &xs, &cones);
        let g_root: Vec<f64> = xs.iter().map(|&x| target.g(&Label::root(), &[x])).collect();
        assert_eq!(t[&Label::root()], facelift_varying(&g_root, 0.1, &cones));
    }

    #[test]
    fn depth_zero_and_one_agree_for_label_free_payoff() {
        let (m, _) = fintech_scenario(&desk_params()).unwrap();
        let target = TargetSpec::new(1.0, Arc::new(|_: &Label, x: &[f64]| (0.8 * x[0]).clamp(0.0, 1.0))).unwrap();
        let law = OffspringLaw::new(1.0, vec![(0, 0.5), (2, 0.5)]).unwrap();
        let s0 = solve_vi(&m, &law, &target, &desk_grid(&m, 121, 40, 0)).unwrap();
        let s1 = solve_vi(&m, &law, &target, &desk_grid(&m, 121, 40, 1)).unwrap();
        for n in 0..=40 {
            for (a, b) in s0.slice(&Label::root(), n).iter().zip(s1.slice(&Label::root(), n)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn comparison_and_constant_shift() {
        let (m, _) = fintech_scenario(&desk_params()).unwrap();
        let law = OffspringLaw::new(1.0, vec![(0, 0.5), (2, 0.5)]).unwrap();
        let lowg = |l: &Label, x: &[f64]| (0.6 * x[0] - 0.1 * l.generation() as f64).clamp(-1.0, 0.5);
        let low = TargetSpec::new(1.0, Arc::new(lowg)).unwrap();
        let high =
            TargetSpec::new(1.0, Arc::new(move |l: &Label, x: &[f64]| lowg(l, x) + 0.05 * (x[0].sin() + 1.0))).unwrap();
        let shifted = TargetSpec::new(1.0, Arc::new(move |l: &Label, x: &[f64]| lowg(l, x) + 0.7)).unwrap();
        let g = desk_grid(&m, 121, 40, 2);
        let a = solve_vi(&m, &law, &low, &g).unwrap();
        let b = solve_vi(&m, &law, &high, &g).unwrap();
        let c = solve_vi(&m, &law, &shifted, &g).unwrap();
        for l in &a.labels {
            for n in 0..=40 {
                for j in 0..121 {
                    assert!(a.slice(l, n)[j] <= b.slice(l, n)[j] + 1e-12);
                    assert!((c.slice(l, n)[j] - a.slice(l, n)[j] - 0.7).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_cfl_violation_and_bad_grids() {
        let (m, target) = fintech_scenario(&desk_params()).unwrap();
        let law = OffspringLaw::frozen();
        let g = desk_grid(&m, 1201, 5, 0);
        assert!(matches!(solve_vi(&m, &law, &target, &g), Err(HjbError::Cfl { .. })));
        let mut g = desk_grid(&m, 2, 5, 0);
        assert!(matches!(solve_vi(&m, &law, &target, &g), Err(HjbError::Grid(_))));
        g.nx = 11;
        g.x_hi = g.x_lo;
        assert!(matches!(solve_vi(&m, &law, &target, &g), Err(HjbError::Grid(_))));
    }

    fn affine_surface(slope: f64) -> ValueSurface {
        let grid =
            GridSpec { x_lo: -1.0, x_hi: 1.0, nx: 21, nt: 2, depth: 0, offspring_index_cap: 0, epsilon: 0.0, t0: 0.0 };
        let xs = grid.xs();
        let vals: Vec<f64> = (0..3).flat_map(|_| xs.iter().map(|&x| slope * x)).collect();
        let mut map = BTreeMap::new();
        map.insert(Label::root(), vals);
        ValueSurface::from_values(grid, 1.0, vec![(0.0, 1.0); 20], map).unwrap()
    }

    #[test]
    fn feedback_examples() {
        let m = fintech();
        let eps = GridSpec::grid_scale_epsilon(&m, -1.0, 1.0);
        let fb = extract_feedback(&affine_surface(0.3), &m, eps).unwrap();
        for j in 0..21 {
            assert!((fb.control_at(&Label::root(), 1, j) - 0.3).abs() <= 0.01 + 1e-12);
            assert!(!fb.flagged(&Label::root(), 1, j));
        }
        let fb = extract_feedback(&affine_surface(-0.2), &m, eps).unwrap();
        assert_eq!(fb.control_at(&Label::root(), 0, 10), 0.0);
        assert!(fb.flagged(&Label::root(), 0, 10));
        let single = TabulatedModel::new(
            vec![0.4],
            vec![CoefficientRow {
                drift: 0.1,
                diffusion: 0.3,
                target_drift: 0.0,
                target_drift_y: 0.0,
                target_diffusion: 0.0,
            }],
        )
        .unwrap();
        let fb = extract_feedback(&affine_surface(0.7), &single, 0.0).unwrap();
        assert_eq!(fb.control(&Label::from([3, 1]), 0.2, &[0.1], 0.0), 0.4);
    }

    #[test]
    fn fintech_feedback_tracks_clipped_slope() {
        let m = fintech();
        let eps = GridSpec::grid_scale_epsilon(&m, -1.0, 1.0);
        for slope in [0.0, 0.05, 0.37, 0.5, 0.99, 1.0] {
            let fb = extract_feedback(&affine_surface(slope), &m, eps).unwrap();
            let a = fb.control(&Label::root(), 0.5, &[0.0], 0.0);
            assert!((a - slope.clamp(0.0, 1.0)).abs() <= 0.01 + 1e-12, "slope {slope} -> {a}");
        }
    }
}
