//! Training loop and policy simulation: forward sweeps sample a trajectory
//! under the current approximation and yield a stochastic lower-bound
//! sample; backward sweeps walk the trajectory in reverse adding one cut per
//! epoch, which drives the deterministic upper bound `Q_1(0)` down
//! monotonically. An optional oracle-assisted resampling mode steers the
//! forward sweep toward states whose exact value has not been matched yet.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{backward_cut, Continuation, CutCase, EngineError};
use crate::oracle::ExactValueTable;
use crate::problem::{ProblemDefinition, ProblemError};
use crate::pwa::{TerminalFn, ValueStack};
use crate::state::{successors, StateError, StateVec};

/// Simulation replications draw from streams disjoint from training
/// iterations under the same root seed.
const SIM_STREAM_BASE: u64 = 1 << 32;

/// Tolerance at which an approximate value counts as having reached the
/// exact one during oracle-assisted resampling.
const RESAMPLE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("oracle-assisted resampling needs an exact value table")]
    MissingExactTable,
    #[error("stack horizon {stack} does not match problem horizon {problem}")]
    HorizonMismatch { stack: usize, problem: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    #[default]
    Off,
    OracleAssisted,
}

/// Where the backward sweep anchors each cut: the sampled next state (the
/// literal reading) or the current state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutAnchor {
    #[default]
    Next,
    Current,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub i_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resample_mode: ResampleMode,
    #[serde(default)]
    pub eps_opt: f64,
    #[serde(default)]
    pub cut_anchor: CutAnchor,
    /// When set, cuts at epoch `t` read the neighbor approximation as it
    /// stood before this iteration instead of the just-updated one.
    #[serde(default)]
    pub stale_continuation: bool,
}

impl SolverConfig {
    pub fn new(i_max: usize, seed: u64) -> Self {
        Self {
            i_max,
            seed,
            resample_mode: ResampleMode::Off,
            eps_opt: 0.0,
            cut_anchor: CutAnchor::Next,
            stale_continuation: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.i_max < 1 {
            return Err(SolverError::BadConfig("i_max must be at least 1".into()));
        }
        if !(self.eps_opt >= 0.0) || !self.eps_opt.is_finite() {
            return Err(SolverError::BadConfig(format!(
                "eps_opt must be a nonnegative finite number, got {}",
                self.eps_opt
            )));
        }
        Ok(())
    }
}

/// One sampled trajectory: states for `t = 1..=t_bar + 1`, decisions and
/// sampled branches for `t = 1..=t_bar` (branch 0 is the stay).
#[derive(Clone, Debug)]
pub struct SamplePath {
    pub states: Vec<StateVec>,
    pub decisions: Vec<crate::problem::Decision>,
    pub branches: Vec<usize>,
}

/// Per-iteration bound bookkeeping.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iter: usize,
    pub lower_sample: f64,
    pub upper_bound: f64,
    pub cum_avg_lower: f64,
    pub case1_count: usize,
    pub case2_count: usize,
    pub resample_count: usize,
}

pub type BoundsTrace = Vec<IterationRecord>;

pub struct TrainOutput {
    pub stack: ValueStack,
    pub trace: BoundsTrace,
}

/// Builds the terminal continuation handle for a problem.
pub fn terminal_handle<P>(problem: &P) -> TerminalFn
where
    P: ProblemDefinition + Clone + 'static,
{
    let p = problem.clone();
    std::sync::Arc::new(move |x: &StateVec| p.terminal_value(x))
}

/// A fresh stack seeded with the problem's initial upper bound at every
/// epoch and the exact terminal function.
pub fn initial_stack<P>(problem: &P) -> ValueStack
where
    P: ProblemDefinition + Clone + 'static,
{
    ValueStack::new(
        problem.t_bar(),
        problem.initial_upper_bound(),
        terminal_handle(problem),
    )
}

fn continuation_at<'a>(
    stack: &'a ValueStack,
    t_next: usize,
    stale_before_iter: Option<u32>,
) -> Continuation<'a> {
    if t_next > stack.t_bar() {
        Continuation::Exact(stack.terminal().as_ref())
    } else {
        match stale_before_iter {
            Some(iter) => Continuation::Cuts(stack.view_before_iter(t_next, iter)),
            None => Continuation::Cuts(stack.value_fn(t_next).view()),
        }
    }
}

struct ResampleContext<'a> {
    table: &'a ExactValueTable,
    count: usize,
}

/// Simulates one trajectory under the stack's greedy policy, returning the
/// path and its profit sample `sum_t g(x_t, x_{t+1}, d_t) - C(x_{t_bar+1})`.
pub fn forward_sweep<P, R>(
    problem: &P,
    stack: &ValueStack,
    rng: &mut R,
) -> Result<(SamplePath, f64), SolverError>
where
    P: ProblemDefinition,
    R: rand::Rng,
{
    let (path, lower) = forward_sweep_impl(problem, stack, rng, None, true)?;
    Ok((path.expect("path recording requested"), lower))
}

fn forward_sweep_impl<P, R>(
    problem: &P,
    stack: &ValueStack,
    rng: &mut R,
    mut resample: Option<&mut ResampleContext<'_>>,
    record_path: bool,
) -> Result<(Option<SamplePath>, f64), SolverError>
where
    P: ProblemDefinition,
    R: rand::Rng,
{
    let t_bar = problem.t_bar();
    if stack.t_bar() != t_bar {
        return Err(SolverError::HorizonMismatch {
            stack: stack.t_bar(),
            problem: t_bar,
        });
    }
    let space = problem.space();
    let mut path = record_path.then(|| SamplePath {
        states: Vec::with_capacity(t_bar + 1),
        decisions: Vec::with_capacity(t_bar),
        branches: Vec::with_capacity(t_bar),
    });
    let mut x = StateVec::zeros(space.n());
    if let Some(p) = path.as_mut() {
        p.states.push(x.clone());
    }
    let mut revenue_total = 0.0;
    let mut cont_values: Vec<f64> = Vec::with_capacity(space.n() + 1);

    for t in 1..=t_bar {
        let cont = continuation_at(stack, t + 1, None);
        crate::bellman::continuation_on_successors(&cont, &x, &mut cont_values);
        let (decision, _) = problem.best_decision(&x, &cont_values)?;
        let dist = problem.transition(&x, &decision)?;
        let u: f64 = rng.random();
        let mut branch = dist.sample_branch(u);

        if let Some(ctx) = resample.as_deref_mut() {
            let ys = successors(&x, space)?;
            if let Some(choice) =
                resample_if_converged(stack, ctx.table, t, &x, &ys[branch], &ys, rng)
            {
                branch = choice;
                ctx.count += 1;
            }
        }

        if branch == 0 {
            revenue_total += problem.stage_revenue(&x, &x, &decision)?;
        } else {
            let x_next = x.bumped(branch - 1);
            revenue_total += problem.stage_revenue(&x, &x_next, &decision)?;
            x = x_next;
        }
        if let Some(p) = path.as_mut() {
            p.states.push(x.clone());
            p.decisions.push(decision);
            p.branches.push(branch);
        }
    }
    let lower = revenue_total - problem.terminal_cost(&x);
    Ok((path, lower))
}

/// When the approximation already matches the exact value at the sampled
/// next state, picks a uniformly random feasible successor where it does
/// not (if any), so training keeps making progress toward the exact table.
/// Returns the chosen branch index, or `None` to keep the sampled state.
fn resample_if_converged<R: rand::Rng>(
    stack: &ValueStack,
    table: &ExactValueTable,
    t: usize,
    _x: &StateVec,
    x_next: &StateVec,
    ys: &[StateVec],
    rng: &mut R,
) -> Option<usize> {
    let space = table.space();
    let gap_at = |y: &StateVec| stack.value_fn(t).evaluate(y) - table.value(t, y);
    if gap_at(x_next).abs() > RESAMPLE_TOL {
        return None;
    }
    let candidates: Vec<usize> = ys
        .iter()
        .enumerate()
        .filter(|(_, y)| space.contains(y) && gap_at(y) > RESAMPLE_TOL)
        .map(|(branch, _)| branch)
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Cut-branch telemetry for one backward sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct CutStats {
    pub case1: usize,
    pub case2: usize,
}

/// Walks the sampled trajectory backward, adding one cut per epoch from
/// `t_bar` down to 1. At the last epoch the continuation is the exact
/// terminal function; below it, the neighbor approximation (already
/// carrying this iteration's cut unless `stale_continuation` is set).
pub fn backward_sweep<P: ProblemDefinition>(
    problem: &P,
    stack: &mut ValueStack,
    path: &SamplePath,
    iter: u32,
    config: &SolverConfig,
) -> Result<CutStats, SolverError> {
    let t_bar = problem.t_bar();
    let mut stats = CutStats::default();
    for t in (1..=t_bar).rev() {
        let x_ref = match config.cut_anchor {
            CutAnchor::Next => &path.states[t],
            CutAnchor::Current => &path.states[t - 1],
        };
        let (cut, case) = {
            let stale = config.stale_continuation.then_some(iter);
            let cont = continuation_at(stack, t + 1, stale);
            backward_cut(problem, &cont, x_ref, config.eps_opt)?
        };
        match case {
            CutCase::Submodular => stats.case1 += 1,
            CutCase::Fallback => stats.case2 += 1,
        }
        stack.add_cut(t, iter, cut);
    }
    Ok(stats)
}

/// Runs the full training loop. Equivalent to
/// [`train_with`] with no exact table and an inert observer.
pub fn train<P>(problem: &P, config: &SolverConfig) -> Result<TrainOutput, SolverError>
where
    P: ProblemDefinition + Clone + 'static,
{
    train_with(problem, config, None, |_, _| {})
}

/// Training loop with an optional exact table (required by oracle-assisted
/// resampling) and a per-iteration observer that sees each record and the
/// stack as it stands after that iteration. The observer is the hook for
/// trace writers and mid-run checkpoints.
pub fn train_with<P, F>(
    problem: &P,
    config: &SolverConfig,
    exact: Option<&ExactValueTable>,
    mut on_iteration: F,
) -> Result<TrainOutput, SolverError>
where
    P: ProblemDefinition + Clone + 'static,
    F: FnMut(&IterationRecord, &ValueStack),
{
    config.validate()?;
    if config.resample_mode == ResampleMode::OracleAssisted && exact.is_none() {
        return Err(SolverError::MissingExactTable);
    }
    let mut stack = initial_stack(problem);
    let mut trace = Vec::with_capacity(config.i_max);
    let mut lower_sum = 0.0;

    for iter in 1..=config.i_max {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(iter as u64);

        let mut resample_ctx = exact
            .filter(|_| config.resample_mode == ResampleMode::OracleAssisted)
            .map(|table| ResampleContext { table, count: 0 });
        let (path, lower_sample) =
            forward_sweep_impl(problem, &stack, &mut rng, resample_ctx.as_mut(), true)?;
        let path = path.expect("training records the path");
        let stats = backward_sweep(problem, &mut stack, &path, iter as u32, config)?;

        lower_sum += lower_sample;
        let record = IterationRecord {
            iter,
            lower_sample,
            upper_bound: stack.origin_bound(),
            cum_avg_lower: lower_sum / iter as f64,
            case1_count: stats.case1,
            case2_count: stats.case2,
            resample_count: resample_ctx.map_or(0, |ctx| ctx.count),
        };
        on_iteration(&record, &stack);
        trace.push(record);
    }
    Ok(TrainOutput { stack, trace })
}

/// Replays `n` independent forward sweeps against a frozen stack (no cuts
/// added) and returns the profit samples ordered by replication index.
/// Replications run in parallel; each owns a stream derived from the seed
/// and its index, so thread scheduling cannot change the result.
pub fn simulate<P: ProblemDefinition>(
    problem: &P,
    stack: &ValueStack,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, SolverError> {
    (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(SIM_STREAM_BASE + rep as u64);
            forward_sweep_impl(problem, stack, &mut rng, None, false).map(|(_, lower)| lower)
        })
        .collect()
}
