//! The abstract problem contract: transition kernel, stage revenue, terminal
//! cost, decision oracle, and an initial affine upper bound. Any concrete
//! dynamic program (the bundled slot-pricing model included) implements
//! [`ProblemDefinition`]; the solver, engine, and exact oracle only ever see
//! this trait.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::pwa::Hyperplane;
use crate::state::{StateError, StateSpace, StateVec};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("control {index} = {value} lies outside the decision domain")]
    ControlOutOfDomain { index: usize, value: f64 },
    #[error("y is not a one-step successor of x")]
    NotASuccessor,
    #[error("transition probabilities sum to {sum}, expected 1")]
    BadDistribution { sum: f64 },
    #[error("transition probability for branch {branch} is negative ({prob})")]
    NegativeProbability { branch: usize, prob: f64 },
    #[error("no feasible decision at the queried state")]
    NoFeasibleDecision,
    #[error("expected {expected} continuation values, got {got}")]
    ContinuationLength { expected: usize, got: usize },
    #[error("expected {expected} controls in the decision, got {got}")]
    DecisionLength { expected: usize, got: usize },
    #[error("invalid problem parameters: {0}")]
    InvalidParams(String),
}

/// One control coordinate: a finite value (a price, for pricing problems) or
/// the distinguished closed/no-offer control that stands in for an infinite
/// price. The closed flag keeps serialization exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Control {
    Value(f64),
    Closed,
}

impl Control {
    pub fn is_closed(&self) -> bool {
        matches!(self, Control::Closed)
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Control::Value(v) => Some(*v),
            Control::Closed => None,
        }
    }
}

impl Serialize for Control {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Control::Value(v) => serializer.serialize_f64(*v),
            Control::Closed => serializer.serialize_str("closed"),
        }
    }
}

impl<'de> Deserialize<'de> for Control {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = Control;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or the string \"closed\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Control, E> {
                Ok(Control::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Control, E> {
                Ok(Control::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Control, E> {
                Ok(Control::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Control, E> {
                if s == "closed" {
                    Ok(Control::Closed)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(s), &self))
                }
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

/// A decision: one control per dimension for pricing problems,
/// problem-defined in general.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub controls: Vec<Control>,
}

impl Decision {
    pub fn new(controls: Vec<Control>) -> Self {
        Self { controls }
    }

    pub fn all_closed(n: usize) -> Self {
        Self {
            controls: vec![Control::Closed; n],
        }
    }
}

/// Probabilities over the `n + 1` ordered successors of a state; index 0 is
/// the stay branch, index `k` the unit bump along dimension `k - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDistribution {
    probs: Vec<f64>,
}

impl TransitionDistribution {
    /// Validates nonnegativity and normalization to within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self, ProblemError> {
        for (branch, &prob) in probs.iter().enumerate() {
            if prob < 0.0 || !prob.is_finite() {
                return Err(ProblemError::NegativeProbability { branch, prob });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ProblemError::BadDistribution { sum });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, branch: usize) -> f64 {
        self.probs[branch]
    }

    /// Inverse-CDF draw over the fixed successor order from a uniform
    /// `u ∈ [0, 1)`. Zero-probability branches are never selected.
    pub fn sample_branch(&self, u: f64) -> usize {
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (branch, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = branch;
                cum += p;
                if u < cum {
                    return branch;
                }
            }
        }
        // Float slack at the top of the CDF.
        last_positive
    }
}

/// Contract every concrete problem implements.
///
/// Implementations must be immutable after construction: every method is a
/// pure function of its arguments so a problem can be shared across
/// concurrent simulation workers.
///
/// States slightly outside the box (one entry exceeding its cap) can be
/// queried during boundary cut interpolation. Implementations handle them by
/// clamping: saturated dimensions are forced to their absorbing control so
/// their branch probability is exactly zero, and continuation values passed
/// for such branches may be arbitrary finite placeholders that must not
/// enter the objective.
pub trait ProblemDefinition: Send + Sync {
    fn space(&self) -> &StateSpace;

    /// Number of decision epochs.
    fn t_bar(&self) -> usize;

    /// Transition kernel `P_{x,·}(d)` over the ordered successors of `x`.
    /// Supported only on feasible successors when `x` is feasible.
    fn transition(&self, x: &StateVec, d: &Decision)
        -> Result<TransitionDistribution, ProblemError>;

    /// Stage revenue `g(x, y, d)` for a realized transition `x -> y`.
    fn stage_revenue(&self, x: &StateVec, y: &StateVec, d: &Decision) -> Result<f64, ProblemError>;

    /// Terminal cost `C(x)`: finite on the box, may be `+inf` outside it.
    fn terminal_cost(&self, x: &StateVec) -> f64;

    /// The exact terminal continuation `-C(x)`, extended to a finite value
    /// at every lattice point so boundary cuts can interpolate it. The
    /// default negates [`terminal_cost`]; override it whenever `C` is
    /// infinite off the box and boundary states are reachable.
    ///
    /// [`terminal_cost`]: ProblemDefinition::terminal_cost
    fn terminal_value(&self, x: &StateVec) -> f64 {
        -self.terminal_cost(x)
    }

    /// Maximizes the one-step objective
    /// `sum_y P_{x,y}(d) (g(x,y,d) + continuation[y])` over the decision
    /// set, given continuation values ordered like the successors of `x`.
    /// Returns the maximizer and the attained objective, exact up to the
    /// oracle's declared tolerance.
    fn best_decision(
        &self,
        x: &StateVec,
        continuation: &[f64],
    ) -> Result<(Decision, f64), ProblemError>;

    /// A problem-supplied affine function dominating every `V_t` on the
    /// box, used to seed the approximation at every epoch.
    fn initial_upper_bound(&self) -> Hyperplane;

    /// Upper bound on `V_t(x) - V_t(x + e_s)` over all epochs, states and
    /// dimensions: the most one unit of capacity can be worth. Cuts
    /// anchored on the box boundary use it as the slope along saturated
    /// dimensions, which keeps them valid upper bounds on the whole box.
    fn value_drop_bound(&self) -> f64;
}
