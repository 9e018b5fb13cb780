//! Genealogical labels.
//!
//! A [`Label`] is a finite word over the natural numbers. The root particle
//! carries the empty word; the `ℓ`-th child of particle `i` carries `iℓ`.
//! Labels are totally ordered lexicographically (used for deterministic
//! iteration) and partially ordered by ancestry (prefix relation).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelParseError {
    #[error("empty label string (use \"root\" for the ancestor)")]
    Empty,
    #[error("invalid label digit {0:?}")]
    BadDigit(String),
}

/// A particle label: the path from the ancestor through the genealogy tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Label(Vec::new())
    }

    pub fn new(digits: Vec<u32>) -> Self {
        Label(digits)
    }

    pub fn digits(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of digits, i.e. the generation of the particle.
    pub fn generation(&self) -> usize {
        self.0.len()
    }

    /// Juxtaposition `self · other`. The root is a two-sided identity.
    pub fn concat(&self, other: &Label) -> Label {
        let mut digits = Vec::with_capacity(self.0.len() + other.0.len());
        digits.extend_from_slice(&self.0);
        digits.extend_from_slice(&other.0);
        Label(digits)
    }

    /// Label of the `k`-th child.
    pub fn child(&self, k: u32) -> Label {
        let mut digits = Vec::with_capacity(self.0.len() + 1);
        digits.extend_from_slice(&self.0);
        digits.push(k);
        Label(digits)
    }

    pub fn parent(&self) -> Option<Label> {
        if self.0.is_empty() {
            None
        } else {
            Some(Label(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// `self ⪯ other` (non-strict) or `self ≺ other` (strict): `other = self·ℓ`
    /// for some word `ℓ`, with `ℓ ≠ ∅` in the strict case.
    pub fn is_ancestor_of(&self, other: &Label, strict: bool) -> bool {
        if strict && self.0.len() == other.0.len() {
            return false;
        }
        other.0.starts_with(&self.0)
    }

    pub fn common_prefix_len(&self, other: &Label) -> usize {
        self.0.iter().zip(other.0.iter()).take_while(|(a, b)| a == b).count()
    }

    /// Genealogical distance: after the longest common prefix, each remaining
    /// digit `d` on either side costs `d + 1`.
    pub fn distance(&self, other: &Label) -> u64 {
        let p = self.common_prefix_len(other);
        tail_weight(&self.0[p..]) + tail_weight(&other.0[p..])
    }

    /// Distance to the root, `Σ (i_ℓ + 1)`.
    pub fn norm(&self) -> u64 {
        tail_weight(&self.0)
    }

    /// Plain digit sum `Σ i_ℓ`; this is the size used by the strike schedule.
    pub fn digit_sum(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).sum()
    }

    pub fn max_digit(&self) -> Option<u32> {
        self.0.iter().copied().max()
    }

    /// Longest prefix of `self` (possibly `self` itself) accepted by `keep`.
    pub fn longest_prefix_where(&self, mut keep: impl FnMut(&Label) -> bool) -> Option<Label> {
        (0..=self.0.len()).rev().map(|n| Label(self.0[..n].to_vec())).find(|l| keep(l))
    }

    /// Stable 64-bit hash of the digit word, used to key random substreams.
    pub fn stable_hash(&self) -> u64 {
        // FNV-1a over the digits, length-prefixed so (1,0) and (1) differ
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.0.len() as u64);
        for &d in &self.0 {
            eat(d as u64);
        }
        h
    }
}

fn tail_weight(digits: &[u32]) -> u64 {
    digits.iter().map(|&d| d as u64 + 1).sum()
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for (n, d) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(".")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for Label {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "root" {
            return Ok(Label::root());
        }
        if s.is_empty() {
            return Err(LabelParseError::Empty);
        }
        s.split('.')
            .map(|d| d.parse::<u32>().map_err(|_| LabelParseError::BadDigit(d.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Label)
    }
}

impl From<&[u32]> for Label {
    fn from(d: &[u32]) -> Self {
        Label(d.to_vec())
    }
}

impl<const N: usize> From<[u32; N]> for Label {
    fn from(d: [u32; N]) -> Self {
        Label(d.to_vec())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All labels of generation `≤ depth` whose digits are all `< arity`, in
/// breadth-first order (parents before children).
pub fn truncated_tree(depth: usize, arity: u32) -> Vec<Label> {
    let mut out = vec![Label::root()];
    let mut frontier = vec![Label::root()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * arity as usize);
        for l in &frontier {
            for k in 0..arity {
                next.push(l.child(k));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l<const N: usize>(d: [u32; N]) -> Label {
        Label::from(d)
    }

    #[test]
    fn concat_examples() {
        assert_eq!(Label::root().concat(&l([2, 0])), l([2, 0]));
        assert_eq!(l([2, 0]).concat(&Label::root()), l([2, 0]));
        assert_eq!(l([1]).concat(&l([0, 3])), l([1, 0, 3]));
    }

    #[test]
    fn ancestry_examples() {
        assert!(l([1]).is_ancestor_of(&l([1, 0]), true));
        assert!(!l([1]).is_ancestor_of(&l([1]), true));
        assert!(l([1]).is_ancestor_of(&l([1]), false));
        assert!(!l([0]).is_ancestor_of(&l([1, 0]), true));
        assert!(!l([0]).is_ancestor_of(&l([1, 0]), false));
        assert!(Label::root().is_ancestor_of(&l([4, 4]), true));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l([3, 1]).distance(&l([3, 1])), 0);
        assert_eq!(l([0]).distance(&Label::root()), 1);
        assert_eq!(l([1, 2]).distance(&l([1, 5])), 9);
        // digits re-coinciding after a mismatch do not extend the prefix
        assert_eq!(l([0, 7]).distance(&l([1, 7])), 1 + 8 + 2 + 8);
    }

    #[test]
    fn size_functionals() {
        assert_eq!(Label::root().norm(), 0);
        assert_eq!(Label::root().digit_sum(), 0);
        assert_eq!(l([1, 0]).norm(), 3);
        assert_eq!(l([1, 0]).digit_sum(), 1);
    }

    #[test]
    fn text_syntax() {
        assert_eq!("1.0.3".parse::<Label>().unwrap(), l([1, 0, 3]));
        assert_eq!("root".parse::<Label>().unwrap(), Label::root());
        assert_eq!(l([1, 0, 3]).to_string(), "1.0.3");
        assert_eq!(Label::root().to_string(), "root");
        assert!("1..2".parse::<Label>().is_err());
        assert!("".parse::<Label>().is_err());
        assert!("-1".parse::<Label>().is_err());
    }

    #[test]
    fn tree_enumeration() {
        let t = truncated_tree(2, 2);
        assert_eq!(t.len(), 7);
        assert_eq!(t[0], Label::root());
        assert_eq!(t[6], l([1, 1]));
        assert_eq!(truncated_tree(3, 0), vec![Label::root()]);
    }

    fn word() -> impl Strategy<Value = Label> {
        prop::collection::vec(0u32..5, 0..6).prop_map(Label::new)
    }

    proptest! {
        #[test]
        fn concat_is_associative(a in word(), b in word(), c in word()) {
            prop_assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
        }

        #[test]
        fn norm_is_additive(a in word(), b in word()) {
            prop_assert_eq!(a.concat(&b).norm(), a.norm() + b.norm());
        }

        #[test]
        fn ancestry_is_transitive(a in word(), b in word(), c in word()) {
            let j = a.clone();
            let i = a.concat(&b);
            let k = i.concat(&c);
            prop_assert!(j.is_ancestor_of(&i, false));
            prop_assert!(i.is_ancestor_of(&k, false));
            prop_assert!(j.is_ancestor_of(&k, false));
        }

        #[test]
        fn distance_is_a_metric(p in word(), a in word(), b in word(), c in word()) {
            let (x, y, z) = (p.concat(&a), p.concat(&b), p.concat(&c));
            prop_assert_eq!(x.distance(&y), y.distance(&x));
            prop_assert_eq!(x.distance(&y) == 0, x == y);
            prop_assert!(x.distance(&z) <= x.distance(&y) + y.distance(&z));
        }

        #[test]
        fn text_round_trip(a in word()) {
            prop_assert_eq!(a.to_string().parse::<Label>().unwrap(), a);
        }
    }
}
