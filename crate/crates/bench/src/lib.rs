//! Shared fixtures for the benchmarks.

use branching_target::{Problem, Scenario};

pub fn desk() -> Problem {
    Scenario::desk().build().expect("built-in scenario")
}
