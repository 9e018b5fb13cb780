//! Controlled branching diffusions with a terminal target.
//!
//! * [`labels`], [`population`]: genealogy and labelled configurations.
//! * [`model`]: coefficients, offspring laws, payoffs, built-in scenarios.
//! * [`simulate`]: Monte Carlo engine for the controlled pair `(X, Y)`.
//! * [`target`]: terminal checks and value estimation by bisection.
//! * [`hjb`]: finite-difference solver for the variational inequality on a
//!   truncated label tree, with feedback extraction.
//! * [`scenario`]: JSON scenario files; [`report`]: CSV output;
//!   [`verify`]: the acceptance checks.

// `!(a < b)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod hjb;
pub mod labels;
pub mod model;
pub mod population;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulate;
pub mod target;
pub mod verify;

pub use hjb::{extract_feedback, solve_vi, FeedbackTable, GridSpec, ValueSurface};
pub use labels::Label;
pub use model::{CoefficientModel, FintechModel, FintechParams, OffspringLaw, TargetSpec};
pub use population::{PointMeasure, PopulationEvent};
pub use scenario::{Problem, Scenario};
pub use simulate::{ConstantControl, FeedbackControl, PopulationPath, SimConfig, Simulator};
pub use target::{estimate_value, success_probability, McConfig, ValueEstimate};
