//! Scenario files: JSON descriptions of a model, an offspring law and a
//! target, tagged by `"kind"`.
//!
//! ```json
//! {"kind": "fintech", "b": 0.1, "c": 0.2, "r": 0.02, "kappa": 0.1,
//!  "strike0": 1.0, "zero_index_bound": 2, "gamma": 1.0,
//!  "offspring": [[0, 0.1], [2, 0.9]], "T": 1.0}
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hjb::{cfl_check, GridSpec};
use crate::labels::Label;
use crate::model::{
    fintech_scenario, CoefficientModel, CoefficientRow, FintechParams, ModelError, OffspringLaw, TabulatedModel,
    TabulatedPayoff, TargetSpec,
};
use crate::simulate::Simulator;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Model(#[from] ModelError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_control_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FintechSpec {
    pub b: f64,
    pub c: f64,
    pub r: f64,
    pub kappa: f64,
    pub strike0: f64,
    #[serde(default)]
    pub zero_index_bound: Option<u32>,
    pub gamma: f64,
    pub offspring: Vec<(u32, f64)>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub x0: f64,
    /// Per-label overrides of the default strike schedule.
    #[serde(default)]
    pub strikes: BTreeMap<Label, f64>,
    /// Declared `sup_i K_i`, checked against the table by `verify`.
    #[serde(default)]
    pub strike_bound: Option<f64>,
    #[serde(default = "default_control_points")]
    pub control_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffKnots {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

/// Coefficients tabulated per control point (constant in `x`) and one
/// tabulated payoff shared by all labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub controls: Vec<f64>,
    pub rows: Vec<CoefficientRow>,
    pub payoff: PayoffKnots,
    pub gamma: f64,
    pub offspring: Vec<(u32, f64)>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Fintech(FintechSpec),
    Custom(CustomSpec),
}

/// Everything the engines need, built from a scenario.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Arc<dyn CoefficientModel>,
    pub law: OffspringLaw,
    pub target: TargetSpec,
    pub x0: f64,
    pub fintech: Option<FintechParams>,
}

impl Problem {
    pub fn horizon(&self) -> f64 {
        self.target.horizon
    }

    pub fn simulator(&self) -> Simulator {
        Simulator::new(self.model.clone(), self.law.clone(), self.target.horizon)
    }

    /// `x ∈ [x0 − 8, x0 + 4]`, children `0..K_max`, grid-scale ε and the
    /// smallest `nt` the time-step bound allows.
    pub fn default_grid(&self, nx: usize, depth: usize) -> GridSpec {
        self.grid_around(self.x0, nx, depth)
    }

    /// As [`Problem::default_grid`], centred on `x` instead of `x0`.
    pub fn grid_around(&self, x: f64, nx: usize, depth: usize) -> GridSpec {
        let (x_lo, x_hi) = (x - 8.0, x + 4.0);
        let mut grid = GridSpec {
            x_lo,
            x_hi,
            nx,
            nt: 1,
            depth,
            offspring_index_cap: self.law.stats().k_max.max(1),
            epsilon: GridSpec::grid_scale_epsilon(&*self.model, x_lo, x_hi),
            t0: 0.0,
        };
        grid.nt = cfl_check(&*self.model, &grid, self.horizon()).min_nt;
        grid
    }

    /// A bisection bracket for Monte Carlo value estimates: the closed-form
    /// bounds widened, or for tabulated scenarios the payoff range around
    /// `x0` padded by the worst riskless drift.
    pub fn search_bracket(&self) -> (f64, f64) {
        if let Some((lo, hi)) = self.value_bounds(0.0) {
            return (lo - 0.5, hi + 0.1);
        }
        let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=200 {
            let x = self.x0 - 10.0 + 0.1 * k as f64;
            let g = self.target.g(&crate::labels::Label::root(), &[x]);
            gmin = gmin.min(g);
            gmax = gmax.max(g);
        }
        let drift = self
            .model
            .controls()
            .points()
            .iter()
            .map(|&a| crate::model::ScalarCoefficients::target_drift1(&*self.model, self.x0, 0.0, a).abs())
            .fold(0.0, f64::max);
        let pad = 1.0 + drift * self.horizon();
        (gmin - pad, gmax + pad)
    }

    /// Closed-form value bracket, fintech scenarios only.
    pub fn value_bounds(&self, t: f64) -> Option<(f64, f64)> {
        self.fintech.as_ref().map(|p| p.value_bounds(t))
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.build()?;
        Ok(s)
    }

    /// SHA-256 of the canonical JSON form: formatting and key order in the
    /// source file do not matter.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn x0(&self) -> f64 {
        match self {
            Scenario::Fintech(f) => f.x0,
            Scenario::Custom(c) => c.x0,
        }
    }

    pub fn build(&self) -> Result<Problem, ScenarioError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ScenarioError::Invalid(format!("{name} must be finite")))
            }
        };
        match self {
            Scenario::Fintech(f) => {
                finite("x0", f.x0)?;
                let params = FintechParams {
                    b: f.b,
                    c: f.c,
                    r: f.r,
                    kappa: f.kappa,
                    strike0: f.strike0,
                    strikes: f.strikes.clone(),
                    zero_index_bound: f.zero_index_bound,
                    horizon: f.horizon,
                    control_points: f.control_points,
                };
                let (model, target) = fintech_scenario(&params)?;
                let law = OffspringLaw::new(f.gamma, f.offspring.clone())?;
                Ok(Problem { model: Arc::new(model), law, target, x0: f.x0, fintech: Some(params) })
            }
            Scenario::Custom(c) => {
                finite("x0", c.x0)?;
                let model = TabulatedModel::new(c.controls.clone(), c.rows.clone())?;
                let payoff = TabulatedPayoff::new(c.payoff.x.clone(), c.payoff.g.clone())?;
                let target = TargetSpec::new(c.horizon, Arc::new(payoff))?;
                let law = OffspringLaw::new(c.gamma, c.offspring.clone())?;
                Ok(Problem { model: Arc::new(model), law, target, x0: c.x0, fintech: None })
            }
        }
    }

    /// The forking-asset desk: `b = 0.1, c = 0.2, r = 0.02, κ = 0.1, K₀ = 1,
    /// T = 1`, forks at rate 1 into two (dies with probability 0.1), fork
    /// indices `≥ 2` pay nothing.
    pub fn desk() -> Self {
        Scenario::Fintech(FintechSpec {
            b: 0.1,
            c: 0.2,
            r: 0.02,
            kappa: 0.1,
            strike0: 1.0,
            zero_index_bound: Some(2),
            gamma: 1.0,
            offspring: vec![(0, 0.1), (2, 0.9)],
            horizon: 1.0,
            x0: 0.0,
            strikes: BTreeMap::new(),
            strike_bound: Some(1.0),
            control_points: 101,
        })
    }

    /// Desk dynamics with the payoff `log(½ e^x + ½)` on every label and a
    /// fine control grid. Its value is `log(½ e^x + ½ e^{−r(T−t)})`, held by
    /// the fraction `a = ∂_x v` in the risky asset.
    pub fn portfolio(control_points: usize) -> Self {
        let (b, c, r) = (0.1, 0.2, 0.02);
        let controls: Vec<f64> = (0..control_points).map(|k| k as f64 / (control_points - 1) as f64).collect();
        let rows = controls
            .iter()
            .map(|&a| CoefficientRow {
                drift: b - 0.5 * c * c,
                diffusion: c,
                target_drift: (b - r) * a - 0.5 * c * c * a * a + r,
                target_drift_y: 0.0,
                target_diffusion: c * a,
            })
            .collect();
        let x: Vec<f64> = (0..=480).map(|k| -12.0 + 0.05 * k as f64).collect();
        let g = x.iter().map(|&x: &f64| (0.5 * x.exp() + 0.5).ln()).collect();
        Scenario::Custom(CustomSpec {
            controls,
            rows,
            payoff: PayoffKnots { x, g },
            gamma: 1.0,
            offspring: vec![(0, 0.1), (2, 0.9)],
            horizon: 1.0,
            x0: 0.0,
        })
    }
}

/// Declared strike bound against the strike table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundedness {
    pub declared: Option<f64>,
    pub sup: f64,
    pub ok: bool,
    pub offenders: Vec<String>,
}

/// Fintech scenarios only: every tabulated strike (and `K₀`) must lie in
/// `[0, strike_bound]`.
pub fn strike_boundedness(spec: &FintechSpec) -> Boundedness {
    let mut offenders = Vec::new();
    let bound = spec.strike_bound.unwrap_or(f64::INFINITY);
    let sup = spec.strikes.values().copied().fold(spec.strike0, f64::max);
    if !(spec.strike0 <= bound) {
        offenders.push(format!("root default {}", spec.strike0));
    }
    for (l, &k) in &spec.strikes {
        if !(k >= 0.0 && k <= bound) {
            offenders.push(format!("{l}: {k}"));
        }
    }
    Boundedness { declared: spec.strike_bound, sup, ok: offenders.is_empty() && sup.is_finite(), offenders }
}
