//! Exact full-enumeration dynamic programming and the desk-scale
//! verification utilities: upper-bound dominance scans, whole-box
//! submodularity checks, and concave-closure queries.
//!
//! Everything here is deliberately brute force and guarded by explicit
//! budgets; production-scale instances are refused with the evaluation
//! count they would need.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::problem::{ProblemDefinition, ProblemError};
use crate::pwa::{SubmodularityCheck, ValueStack};
use crate::simplex::{self, StandardLp};
use crate::state::{successors, StateError, StateSpace, StateVec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(
        "exact enumeration needs {required:.1e} state-time evaluations, \
         over the cap of {cap:.1e}"
    )]
    CapExceeded { required: f64, cap: f64 },
    #[error("pairwise check over {pairs:.1e} pairs exceeds the 1e8 budget")]
    PairBudget { pairs: f64 },
    #[error("concave-closure queries support n <= 3 and |X| <= 1e4, got n = {n}, |X| = {states}")]
    ClosureScale { n: usize, states: u128 },
    #[error("query point lies outside the state box")]
    OutsideBox,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("value table i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("value table file is malformed: {0}")]
    Malformed(String),
    #[error("closure linear program failed: {0}")]
    Closure(String),
}

/// Dense exact values `V_t(x)` over the box for `t = 1..=t_bar + 1` (the
/// last layer is the terminal `-C`).
#[derive(Debug)]
pub struct ExactValueTable {
    space: StateSpace,
    t_bar: usize,
    values: Vec<f64>,
}

impl ExactValueTable {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn t_bar(&self) -> usize {
        self.t_bar
    }

    fn layer_len(&self) -> usize {
        self.space.cardinality() as usize
    }

    /// `V_t(x)` for `t` in `1..=t_bar + 1` and feasible `x`.
    pub fn value(&self, t: usize, x: &StateVec) -> f64 {
        let idx = self
            .space
            .index_of(x)
            .expect("value queried outside the box");
        self.values[(t - 1) * self.layer_len() + idx]
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        let len = self.layer_len();
        &self.values[(t - 1) * len..t * len]
    }

    /// The headline number `V_1(0)`.
    pub fn value_at_origin(&self) -> f64 {
        self.value(1, &StateVec::zeros(self.space.n()))
    }

    /// Binary layout: `n: u64`, `t_bar: u64`, `x_bar: n x i64`, then
    /// `(t_bar + 1) * |X|` doubles grouped by epoch, states in
    /// lexicographic order. All little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), OracleError> {
        w.write_all(&(self.space.n() as u64).to_le_bytes())?;
        w.write_all(&(self.t_bar as u64).to_le_bytes())?;
        for &c in self.space.x_bar().entries() {
            w.write_all(&c.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, OracleError> {
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u64_buf)?;
        let n = u64::from_le_bytes(u64_buf) as usize;
        r.read_exact(&mut u64_buf)?;
        let t_bar = u64::from_le_bytes(u64_buf) as usize;
        if n == 0 || t_bar == 0 {
            return Err(OracleError::Malformed("empty dimensions".into()));
        }
        let mut x_bar = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u64_buf)?;
            x_bar.push(i64::from_le_bytes(u64_buf));
        }
        let space = StateSpace::new(StateVec::new(x_bar).map_err(ProblemError::from)?);
        let count = space
            .cardinality()
            .checked_mul(t_bar as u128 + 1)
            .filter(|&c| c <= 1e8 as u128)
            .ok_or_else(|| OracleError::Malformed("table too large".into()))?
            as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64_buf)?;
            values.push(f64::from_le_bytes(u64_buf));
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(OracleError::Malformed("trailing bytes".into()));
        }
        Ok(Self {
            space,
            t_bar,
            values,
        })
    }
}

/// Backward recursion over the whole box with the problem's own decision
/// oracle. Refuses instances whose `|X| * t_bar` exceeds `cap`, reporting
/// the evaluation count they would need.
pub fn exact_solve<P: ProblemDefinition>(
    problem: &P,
    cap: u64,
) -> Result<ExactValueTable, OracleError> {
    let space = problem.space().clone();
    let t_bar = problem.t_bar();
    let required = space.cardinality().saturating_mul(t_bar as u128);
    if required > cap as u128 {
        return Err(OracleError::CapExceeded {
            required: required as f64,
            cap: cap as f64,
        });
    }
    let states: Vec<StateVec> = space.iter_states().collect();
    let layer_len = states.len();
    let mut values = vec![0.0f64; (t_bar + 1) * layer_len];

    // Terminal layer.
    for (idx, x) in states.iter().enumerate() {
        values[t_bar * layer_len + idx] = -problem.terminal_cost(x);
    }

    for t in (1..=t_bar).rev() {
        let (head, tail) = values.split_at_mut(t * layer_len);
        let current = &mut head[(t - 1) * layer_len..];
        let next = &tail[..layer_len];
        let results: Result<Vec<f64>, OracleError> = states
            .par_iter()
            .map(|x| {
                let ys = successors(x, &space)?;
                // Infeasible successors get a placeholder; the contract
                // gives them zero probability.
                let cont: Vec<f64> = ys
                    .iter()
                    .map(|y| space.index_of(y).map_or(0.0, |i| next[i]))
                    .collect();
                let (_, value) = problem.best_decision(x, &cont)?;
                Ok(value)
            })
            .collect();
        current[..layer_len].copy_from_slice(&results?);
    }
    Ok(ExactValueTable {
        space,
        t_bar,
        values,
    })
}

/// Worst signed dominance gap of an approximation stack over the exact
/// table, with its witness.
#[derive(Clone, Debug)]
pub struct DominanceReport {
    /// `min_{x,t} (Q_t(x) - V_t(x))`; negative beyond tolerance means the
    /// upper-bound property failed at the witness below.
    pub worst_gap: f64,
    pub at_t: usize,
    pub at_state: StateVec,
    pub q_value: f64,
    pub v_value: f64,
}

/// Exhaustive scan of `Q_t(x) - V_t(x)` over the box and every decision
/// epoch.
pub fn verify_upper_bound(stack: &ValueStack, table: &ExactValueTable) -> DominanceReport {
    let space = table.space();
    let per_t: Vec<DominanceReport> = (1..=table.t_bar().min(stack.t_bar()))
        .into_par_iter()
        .map(|t| {
            let mut worst = DominanceReport {
                worst_gap: f64::INFINITY,
                at_t: t,
                at_state: StateVec::zeros(space.n()),
                q_value: f64::NAN,
                v_value: f64::NAN,
            };
            for x in space.iter_states() {
                let q = stack.value_fn(t).evaluate(&x);
                let v = table.value(t, &x);
                let gap = q - v;
                if gap < worst.worst_gap {
                    worst = DominanceReport {
                        worst_gap: gap,
                        at_t: t,
                        at_state: x,
                        q_value: q,
                        v_value: v,
                    };
                }
            }
            worst
        })
        .collect();
    per_t
        .into_iter()
        .min_by(|a, b| a.worst_gap.total_cmp(&b.worst_gap))
        .expect("at least one epoch")
}

/// Pairwise submodularity of `f` over the whole box (closed under join and
/// meet). Budgeted at 1e8 pairs.
pub fn check_submodular_all<F>(f: F, space: &StateSpace) -> Result<SubmodularityCheck, OracleError>
where
    F: Fn(&StateVec) -> f64,
{
    let count = space.cardinality();
    let pairs = count * count.saturating_sub(1) / 2;
    if count * count > 1e8 as u128 {
        return Err(OracleError::PairBudget {
            pairs: pairs as f64,
        });
    }
    let states: Vec<StateVec> = space.iter_states().collect();
    let values: Vec<f64> = states.iter().map(&f).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-9 * (1.0 + scale);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let (y, z) = (&states[i], &states[j]);
            // Comparable pairs satisfy the inequality with equality.
            if y.le(z) || z.le(y) {
                continue;
            }
            let join = space.index_of(&y.join(z)).expect("box closed under join");
            let meet = space.index_of(&y.meet(z)).expect("box closed under meet");
            let excess = values[join] + values[meet] - values[i] - values[j];
            worst = worst.max(excess);
        }
    }
    Ok(SubmodularityCheck {
        holds: !(worst > tolerance),
        worst_violation: worst.max(0.0),
        tolerance,
    })
}

/// Value of the concave closure of `f` (restricted to the box, minus
/// infinity outside) at a feasible point: the best value of a convex
/// combination of lattice points hitting `x`, solved as a small linear
/// program. Desk scale: `n <= 3`, `|X| <= 1e4`.
pub fn concave_closure_at<F>(f: F, space: &StateSpace, x: &StateVec) -> Result<f64, OracleError>
where
    F: Fn(&StateVec) -> f64,
{
    let n = space.n();
    let states_count = space.cardinality();
    if n > 3 || states_count > 10_000 {
        return Err(OracleError::ClosureScale {
            n,
            states: states_count,
        });
    }
    if !space.contains(x) {
        return Err(OracleError::OutsideBox);
    }
    if n == 1 {
        // One-dimensional upper envelope: best chord over integer support
        // points straddling x.
        let xi = x.entry(0);
        let cap = space.x_bar().entry(0);
        let value = |i: i64| f(&StateVec::new(vec![i]).expect("nonnegative"));
        let mut best = value(xi);
        for i in 0..=xi {
            for j in xi..=cap {
                if i == j {
                    continue;
                }
                let fi = value(i);
                let fj = value(j);
                let chord = fi + (fj - fi) * (xi - i) as f64 / (j - i) as f64;
                best = best.max(chord);
            }
        }
        return Ok(best);
    }

    let states: Vec<StateVec> = space.iter_states().collect();
    let cols: Vec<Vec<f64>> = states
        .iter()
        .map(|y| {
            let mut col: Vec<f64> = y.entries().iter().map(|&v| v as f64).collect();
            col.push(1.0);
            col
        })
        .collect();
    let mut rhs: Vec<f64> = x.entries().iter().map(|&v| v as f64).collect();
    rhs.push(1.0);
    let costs: Vec<f64> = states.iter().map(&f).collect();
    let lp = StandardLp {
        m: n + 1,
        cols,
        rhs,
        costs,
    };
    simplex::maximize(&lp).map_err(|e| OracleError::Closure(e.to_string()))
}

/// Whether `f` coincides with its concave closure everywhere on the box
/// (within 1e-8). The closure never falls below `f` at lattice points, so
/// only the upward deviation is tested.
pub fn check_concave_extensible<F>(f: F, space: &StateSpace) -> Result<bool, OracleError>
where
    F: Fn(&StateVec) -> f64 + Copy,
{
    for x in space.iter_states() {
        let closure = concave_closure_at(f, space, &x)?;
        if closure - f(&x) > 1e-8 {
            return Ok(false);
        }
    }
    Ok(true)
}
