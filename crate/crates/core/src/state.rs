//! Integer state lattice: state vectors, the box-shaped feasible set, the
//! booking horizon, and the one-step successor structure.
//!
//! States live on the nonnegative integer lattice. From any state, a single
//! transition either stays put or increments exactly one coordinate by one,
//! so every state has `n + 1` ordered successors (stay first).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: i64 },
    #[error("state space must have at least one dimension")]
    EmptyDimension,
}

/// A point on the integer lattice: one order count per dimension.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateVec {
    entries: Vec<i64>,
}

impl std::fmt::Debug for StateVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.entries)
    }
}

impl StateVec {
    /// Builds a state from raw entries, rejecting negative counts.
    pub fn new(entries: Vec<i64>) -> Result<Self, StateError> {
        if entries.is_empty() {
            return Err(StateError::EmptyDimension);
        }
        for (index, &value) in entries.iter().enumerate() {
            if value < 0 {
                return Err(StateError::NegativeEntry { index, value });
            }
        }
        Ok(Self { entries })
    }

    /// The origin state (empty booking).
    pub fn zeros(n: usize) -> Self {
        Self {
            entries: vec![0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn entry(&self, dim: usize) -> i64 {
        self.entries[dim]
    }

    /// Total order count `1ᵀx`.
    pub fn total(&self) -> i64 {
        self.entries.iter().sum()
    }

    /// Returns `x + e_dim` (unit bump along one dimension, 0-based).
    pub fn bumped(&self, dim: usize) -> Self {
        let mut entries = self.entries.clone();
        entries[dim] += 1;
        Self { entries }
    }

    /// Elementwise maximum.
    pub fn join(&self, other: &Self) -> Self {
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| a.max(b))
            .collect();
        Self { entries }
    }

    /// Elementwise minimum.
    pub fn meet(&self, other: &Self) -> Self {
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| a.min(b))
            .collect();
        Self { entries }
    }

    /// Elementwise `self <= other`.
    pub fn le(&self, other: &Self) -> bool {
        self.entries
            .iter()
            .zip(&other.entries)
            .all(|(&a, &b)| a <= b)
    }
}

/// The box `X = {x : 0 <= x <= x_bar}` of feasible states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    x_bar: StateVec,
}

impl StateSpace {
    pub fn new(x_bar: StateVec) -> Self {
        Self { x_bar }
    }

    pub fn n(&self) -> usize {
        self.x_bar.dim()
    }

    pub fn x_bar(&self) -> &StateVec {
        &self.x_bar
    }

    /// Membership in the box (feasibility).
    pub fn contains(&self, x: &StateVec) -> bool {
        x.dim() == self.n() && x.le(&self.x_bar)
    }

    /// `|X| = prod_s (x_bar_s + 1)`.
    pub fn cardinality(&self) -> u128 {
        self.x_bar
            .entries()
            .iter()
            .map(|&c| (c as u128) + 1)
            .product()
    }

    /// Lexicographic rank of a feasible state (first dimension most
    /// significant). `None` outside the box.
    pub fn index_of(&self, x: &StateVec) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx: usize = 0;
        for (dim, &v) in x.entries().iter().enumerate() {
            idx = idx * (self.x_bar.entry(dim) as usize + 1) + v as usize;
        }
        Some(idx)
    }

    /// Inverse of [`StateSpace::index_of`].
    pub fn state_at(&self, mut idx: usize) -> StateVec {
        let n = self.n();
        let mut entries = vec![0i64; n];
        for dim in (0..n).rev() {
            let base = self.x_bar.entry(dim) as usize + 1;
            entries[dim] = (idx % base) as i64;
            idx /= base;
        }
        StateVec { entries }
    }

    /// All feasible states in lexicographic order.
    pub fn iter_states(&self) -> impl Iterator<Item = StateVec> + '_ {
        let count = self.cardinality() as usize;
        (0..count).map(move |idx| self.state_at(idx))
    }
}

/// The decision-epoch set `T = {1, ..., t_bar}`; costs settle at `t_bar + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HorizonSpec {
    t_bar: usize,
}

impl HorizonSpec {
    pub fn new(t_bar: usize) -> Option<Self> {
        if t_bar >= 1 {
            Some(Self { t_bar })
        } else {
            None
        }
    }

    pub fn t_bar(&self) -> usize {
        self.t_bar
    }

    /// Index of the settlement epoch, `t_bar + 1`.
    pub fn terminal_index(&self) -> usize {
        self.t_bar + 1
    }
}

/// The `n + 1` one-step successors of `x`, in fixed order: `x` itself (stay)
/// first, then `x + e_1, ..., x + e_n`.
///
/// Successors beyond the box corner are still returned; the problem contract
/// assigns them zero transition probability. The ordering is load-bearing:
/// the categorical sampler and cut interpolation both index into it.
pub fn successors(x: &StateVec, space: &StateSpace) -> Result<Vec<StateVec>, StateError> {
    if x.dim() != space.n() {
        return Err(StateError::DimensionMismatch {
            expected: space.n(),
            got: x.dim(),
        });
    }
    let mut out = Vec::with_capacity(x.dim() + 1);
    out.push(x.clone());
    for dim in 0..x.dim() {
        out.push(x.bumped(dim));
    }
    Ok(out)
}

/// The local pair set `Z(x) = {x + 1_s + 1_s'}` over `(s, s')` in
/// `(S ∪ {0})²`, deduplicated. Contains `x` itself and has exactly
/// `1 + n + n(n+1)/2` members.
pub fn local_check_set(x: &StateVec) -> Vec<StateVec> {
    let n = x.dim();
    let mut out = Vec::with_capacity(1 + n + n * (n + 1) / 2);
    out.push(x.clone());
    for dim in 0..n {
        out.push(x.bumped(dim));
    }
    for a in 0..n {
        for b in a..n {
            out.push(x.bumped(a).bumped(b));
        }
    }
    out
}
