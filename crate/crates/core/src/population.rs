//! Finite labelled point configurations and the branching update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::Label;

#[derive(Debug, Error, PartialEq)]
pub enum PopulationError {
    #[error("label {0} is not alive in the configuration (inconsistent event stream)")]
    MissingParent(Label),
    #[error("point for label {label} has dimension {got}, expected {expected}")]
    Dimension { label: Label, got: usize, expected: usize },
    #[error("label {0} appears twice")]
    Duplicate(Label),
    #[error("label {ancestor} is a strict ancestor of {descendant}")]
    NotAntichain { ancestor: Label, descendant: Label },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub label: Label,
    pub point: Vec<f64>,
}

/// A finite sum of Dirac masses `Σ_{i∈V} δ_(i, x_i)` over an antichain `V`.
///
/// Entries are kept sorted by label so iteration order (and therefore every
/// output derived from it) is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMeasure {
    dim: usize,
    entries: Vec<Particle>,
}

impl PointMeasure {
    pub fn empty(dim: usize) -> Self {
        PointMeasure { dim, entries: Vec::new() }
    }

    pub fn singleton(label: Label, point: Vec<f64>) -> Self {
        PointMeasure { dim: point.len(), entries: vec![Particle { label, point }] }
    }

    /// Builds a configuration and checks every invariant.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (Label, Vec<f64>)>) -> Result<Self, PopulationError> {
        let m = Self::new_unchecked(dim, entries);
        m.check()?;
        Ok(m)
    }

    /// Sorts but does not validate; `validate` reports on the result.
    pub fn new_unchecked(dim: usize, entries: impl IntoIterator<Item = (Label, Vec<f64>)>) -> Self {
        let mut entries: Vec<Particle> = entries.into_iter().map(|(label, point)| Particle { label, point }).collect();
        entries.sort_by(|a, b| a.label.cmp(&b.label));
        PointMeasure { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.entries.iter().map(|p| &p.label)
    }

    pub fn get(&self, label: &Label) -> Option<&[f64]> {
        self.entries.binary_search_by(|p| p.label.cmp(label)).ok().map(|n| self.entries[n].point.as_slice())
    }

    pub fn validate(&self) -> bool {
        self.check().is_ok()
    }

    pub fn check(&self) -> Result<(), PopulationError> {
        for p in &self.entries {
            if p.point.len() != self.dim {
                return Err(PopulationError::Dimension {
                    label: p.label.clone(),
                    got: p.point.len(),
                    expected: self.dim,
                });
            }
        }
        // descendants of a label form a contiguous block right after it in
        // lexicographic order, so comparing neighbours suffices
        for (n, p) in self.entries.iter().enumerate() {
            if let Some(q) = self.entries.get(n + 1) {
                if q.label == p.label {
                    return Err(PopulationError::Duplicate(p.label.clone()));
                }
                if p.label.is_ancestor_of(&q.label, true) {
                    return Err(PopulationError::NotAntichain {
                        ancestor: p.label.clone(),
                        descendant: q.label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Replaces `parent` by its children `parent·0 … parent·(k−1)`, each at the
    /// parent's position. `k = 0` removes the particle.
    pub fn branch(&self, parent: &Label, k: u32) -> Result<PointMeasure, PopulationError> {
        let idx = self
            .entries
            .binary_search_by(|p| p.label.cmp(parent))
            .map_err(|_| PopulationError::MissingParent(parent.clone()))?;
        let point = self.entries[idx].point.clone();
        let mut entries = Vec::with_capacity(self.entries.len() + k as usize);
        entries.extend_from_slice(&self.entries[..idx]);
        // children sort right where the parent was
        entries.extend((0..k).map(|c| Particle { label: parent.child(c), point: point.clone() }));
        entries.extend_from_slice(&self.entries[idx + 1..]);
        Ok(PointMeasure { dim: self.dim, entries })
    }

    /// Appends a coordinate to every point, e.g. lifting `µ` on `ℝ^d` to
    /// `µ̂` on `ℝ^{d+1}` with a common target level `y`.
    pub fn with_target_level(&self, y: f64) -> PointMeasure {
        PointMeasure {
            dim: self.dim + 1,
            entries: self
                .entries
                .iter()
                .map(|p| {
                    let mut point = p.point.clone();
                    point.push(y);
                    Particle { label: p.label.clone(), point }
                })
                .collect(),
        }
    }

    /// Keeps the first `dim` coordinates.
    pub fn project(&self, dim: usize) -> PointMeasure {
        PointMeasure {
            dim,
            entries: self
                .entries
                .iter()
                .map(|p| Particle { label: p.label.clone(), point: p.point[..dim].to_vec() })
                .collect(),
        }
    }

    pub fn restrict_to(&self, label: &Label) -> Option<PointMeasure> {
        self.get(label).map(|x| PointMeasure::singleton(label.clone(), x.to_vec()))
    }
}

/// A branching event in a population path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEvent {
    pub time: f64,
    pub parent: Label,
    pub offspring_count: u32,
}
