//! One-step dynamic-programming machinery: applying the stage maximization
//! to a point-evaluable continuation and building the two kinds of
//! backward-sweep cuts (direct interpolation when the continuation is
//! locally submodular, supporting-cut fallback otherwise).

use thiserror::Error;

use crate::problem::{Decision, ProblemDefinition, ProblemError};
use crate::pwa::{
    default_tie_tol, fit_hyperplane, is_submodular_on, pwa_submodular_on_local_set, Hyperplane,
    PwaError, PwaView, SubmodularityCheck,
};
use crate::state::{local_check_set, successors, StateError, StateVec};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Pwa(#[from] PwaError),
    #[error(
        "terminal cost violates the submodularity assumption \
         (worst violation {violation})"
    )]
    TerminalNotSubmodular { violation: f64 },
}

/// A point-evaluable continuation value function.
pub enum Continuation<'a> {
    /// Min-of-cuts approximation (possibly a cut-prefix view).
    Cuts(PwaView<'a>),
    /// A single affine piece.
    Affine(&'a Hyperplane),
    /// The exact terminal function, finite everywhere.
    Exact(&'a (dyn Fn(&StateVec) -> f64 + Send + Sync)),
}

impl Continuation<'_> {
    pub fn eval(&self, x: &StateVec) -> f64 {
        match self {
            Continuation::Cuts(view) => view.evaluate(x),
            Continuation::Affine(h) => h.eval(x),
            Continuation::Exact(f) => f(x),
        }
    }
}

/// Value and maximizer of one stage problem.
#[derive(Clone, Debug)]
pub struct BellmanResult {
    pub value: f64,
    pub decision: Decision,
}

/// Which backward-cut branch fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutCase {
    /// Continuation locally submodular: interpolate the stage values
    /// directly over the successor set.
    Submodular,
    /// Continuation not locally submodular: fall back to its best
    /// supporting affine piece.
    Fallback,
}

/// Evaluates a continuation at `x` and its unit-bump successors, in
/// successor order. Affine forms reuse the base value plus one slope entry.
pub(crate) fn continuation_on_successors(
    f: &Continuation<'_>,
    x: &StateVec,
    out: &mut Vec<f64>,
) {
    match f {
        Continuation::Cuts(view) => view.evaluate_successors_into(x, out),
        Continuation::Affine(h) => {
            let at_x = h.eval(x);
            out.clear();
            out.push(at_x);
            out.extend(h.slope().iter().map(|a| at_x + a));
        }
        Continuation::Exact(g) => {
            out.clear();
            out.push(g(x));
            for dim in 0..x.dim() {
                out.push(g(&x.bumped(dim)));
            }
        }
    }
}

/// Applies the stage maximization to `f` at `x`:
/// `max_d sum_y P_{x,y}(d) (g(x,y,d) + f(y))`, delegating the maximization
/// to the problem's decision oracle. Deterministic for fixed inputs.
pub fn bellman_apply<P: ProblemDefinition + ?Sized>(
    problem: &P,
    f: &Continuation<'_>,
    x: &StateVec,
) -> Result<BellmanResult, EngineError> {
    if x.dim() != problem.space().n() {
        return Err(StateError::DimensionMismatch {
            expected: problem.space().n(),
            got: x.dim(),
        }
        .into());
    }
    let mut values = Vec::with_capacity(x.dim() + 1);
    continuation_on_successors(f, x, &mut values);
    let (decision, value) = problem.best_decision(x, &values)?;
    Ok(BellmanResult { value, decision })
}

fn interpolated_cut<P: ProblemDefinition + ?Sized>(
    problem: &P,
    f: &Continuation<'_>,
    x_ref: &StateVec,
    eps_opt: f64,
) -> Result<Hyperplane, EngineError> {
    let space = problem.space();
    let ys = successors(x_ref, space)?;
    let anchor_value = bellman_apply(problem, f, x_ref)?.value + eps_opt;
    let mut values = Vec::with_capacity(ys.len());
    values.push(anchor_value);
    for y in &ys[1..] {
        if space.contains(y) {
            values.push(bellman_apply(problem, f, y)?.value + eps_opt);
        } else {
            // Saturated dimension: no stage value exists one step out, and
            // extrapolating a shallow extension breaks dominance on the
            // rows below the anchor. Pin the slope to the declared worst
            // per-unit value drop instead; the cut stays exact at the
            // anchor and every feasible successor.
            values.push(anchor_value - problem.value_drop_bound());
        }
    }
    Ok(fit_hyperplane(x_ref, &values)?)
}

/// Direct-interpolation cut: the unique hyperplane through the stage values
/// of `f` over the successor set of `x_ref`, padded by `eps_opt` to absorb
/// decision-oracle slack. Valid as a global upper bound when `f` is
/// submodular and concave extensible and the stage operator preserves both.
pub fn case1_cut<P: ProblemDefinition + ?Sized>(
    problem: &P,
    f: &Continuation<'_>,
    x_ref: &StateVec,
    eps_opt: f64,
) -> Result<Hyperplane, EngineError> {
    interpolated_cut(problem, f, x_ref, eps_opt)
}

/// Fallback cut for a continuation that failed the local submodularity
/// check: among the cuts supporting `q` at `x_ref`, pick the one whose stage
/// value at `x_ref` is smallest (lowest index on ties) and interpolate its
/// stage values instead. Each cut is affine, hence submodular and concave
/// extensible, so the interpolation argument applies to it.
pub fn case2_cut<P: ProblemDefinition + ?Sized>(
    problem: &P,
    q: PwaView<'_>,
    x_ref: &StateVec,
    eps_opt: f64,
) -> Result<Hyperplane, EngineError> {
    let tie_tol = default_tie_tol(q.evaluate(x_ref));
    let supporting = q.supporting_indices(x_ref, tie_tol);
    let mut best_j = supporting[0];
    let mut best_value = f64::INFINITY;
    for &j in &supporting {
        let piece = &q.cuts()[j];
        let value = bellman_apply(problem, &Continuation::Affine(piece), x_ref)?.value;
        if value < best_value {
            best_value = value;
            best_j = j;
        }
    }
    let chosen = &q.cuts()[best_j];
    interpolated_cut(problem, &Continuation::Affine(chosen), x_ref, eps_opt)
}

/// Builds the backward-sweep cut at `x_ref`: checks the continuation's
/// submodularity on the local pair set and dispatches accordingly,
/// reporting which branch fired.
pub fn backward_cut<P: ProblemDefinition + ?Sized>(
    problem: &P,
    f: &Continuation<'_>,
    x_ref: &StateVec,
    eps_opt: f64,
) -> Result<(Hyperplane, CutCase), EngineError> {
    let check: SubmodularityCheck = match f {
        Continuation::Cuts(view) => pwa_submodular_on_local_set(*view, x_ref),
        Continuation::Affine(h) => is_submodular_on(|p| h.eval(p), &local_check_set(x_ref)),
        Continuation::Exact(g) => is_submodular_on(|p| g(p), &local_check_set(x_ref)),
    };
    if check.holds {
        let cut = case1_cut(problem, f, x_ref, eps_opt)?;
        return Ok((cut, CutCase::Submodular));
    }
    match f {
        Continuation::Cuts(view) => {
            let cut = case2_cut(problem, *view, x_ref, eps_opt)?;
            Ok((cut, CutCase::Fallback))
        }
        // A min of affine pieces can fail the check; a single affine piece
        // cannot, and a non-submodular terminal breaks the contract.
        Continuation::Affine(_) => unreachable!("affine continuations are modular"),
        Continuation::Exact(_) => Err(EngineError::TerminalNotSubmodular {
            violation: check.worst_violation,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahd::{AhdProblem, MnlParams};
    use crate::pwa::PwaValue;
    use crate::state::StateSpace;

    fn sv(entries: &[i64]) -> StateVec {
        StateVec::new(entries.to_vec()).unwrap()
    }

    fn hp(slope: &[f64], offset: f64) -> Hyperplane {
        Hyperplane::new(slope.to_vec(), offset).unwrap()
    }

    fn single_slot_params(lambda: f64, beta_d: f64, r: f64, d_lo: f64, d_hi: f64) -> MnlParams {
        MnlParams {
            lambda,
            beta_c: 0.0,
            beta_s: vec![0.0],
            beta_d,
            r,
            d_lo,
            d_hi,
            c_unit: 0.0,
            x_bar: vec![1],
            t_bar: 1,
            beta_source: None,
        }
    }

    #[test]
    fn full_box_is_absorbing() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![2, 2],
            ..single_slot_params(0.3, -0.5, 10.0, 0.0, 10.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let q = PwaValue::new(hp(&[-1.0, -2.0], 42.0));
        let x_bar = sv(&[2, 2]);
        let expected = q.evaluate(&x_bar);
        let result = bellman_apply(&problem, &Continuation::Cuts(q.view()), &x_bar).unwrap();
        assert!((result.value - expected).abs() < 1e-12);
        assert!(result.decision.controls.iter().all(|c| c.is_closed()));
    }

    #[test]
    fn hand_evaluated_single_slot_stage_value() {
        // lambda = 0.5, beta = 0, beta_d = -1, r = 4, price pinned at 0,
        // zero continuation: purchase probability 0.25, value 1.0.
        let problem =
            AhdProblem::new(single_slot_params(0.5, -1.0, 4.0, 0.0, 0.0)).unwrap();
        let zero = hp(&[0.0], 0.0);
        let result =
            bellman_apply(&problem, &Continuation::Affine(&zero), &sv(&[0])).unwrap();
        assert!((result.value - 1.0).abs() < 1e-12);
        assert_eq!(result.decision.controls, vec![crate::problem::Control::Value(0.0)]);
    }

    /// A one-slot problem whose price is restricted to an explicit grid;
    /// exercises the contract with a decision set unlike the pricing box.
    #[derive(Clone)]
    struct GridProblem {
        inner: AhdProblem,
        grid: Vec<f64>,
    }

    impl ProblemDefinition for GridProblem {
        fn space(&self) -> &StateSpace {
            self.inner.space()
        }
        fn t_bar(&self) -> usize {
            self.inner.t_bar()
        }
        fn transition(
            &self,
            x: &StateVec,
            d: &Decision,
        ) -> Result<crate::problem::TransitionDistribution, ProblemError> {
            self.inner.transition(x, d)
        }
        fn stage_revenue(
            &self,
            x: &StateVec,
            y: &StateVec,
            d: &Decision,
        ) -> Result<f64, ProblemError> {
            self.inner.stage_revenue(x, y, d)
        }
        fn terminal_cost(&self, x: &StateVec) -> f64 {
            self.inner.terminal_cost(x)
        }
        fn terminal_value(&self, x: &StateVec) -> f64 {
            self.inner.terminal_value(x)
        }
        fn best_decision(
            &self,
            x: &StateVec,
            continuation: &[f64],
        ) -> Result<(Decision, f64), ProblemError> {
            // Enumerate the grid (plus closed) per slot; n = 1 here.
            let mut best: Option<(Decision, f64)> = None;
            let mut options: Vec<crate::problem::Control> = vec![crate::problem::Control::Closed];
            if self.space().contains(x) && x.entry(0) < self.space().x_bar().entry(0) {
                options.extend(self.grid.iter().map(|&p| crate::problem::Control::Value(p)));
            }
            for control in options {
                let d = Decision::new(vec![control]);
                let dist = self.transition(x, &d)?;
                let mut value = 0.0;
                for (branch, &p) in dist.probs().iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let y = if branch == 0 { x.clone() } else { x.bumped(branch - 1) };
                    value += p * (self.stage_revenue(x, &y, &d)? + continuation[branch]);
                }
                if best.as_ref().map_or(true, |(_, v)| value > *v) {
                    best = Some((d, value));
                }
            }
            best.ok_or(ProblemError::NoFeasibleDecision)
        }
        fn initial_upper_bound(&self) -> Hyperplane {
            self.inner.initial_upper_bound()
        }
        fn value_drop_bound(&self) -> f64 {
            self.inner.value_drop_bound()
        }
    }

    #[test]
    fn two_point_grid_takes_the_better_price() {
        let inner = AhdProblem::new(single_slot_params(0.5, -1.0, 4.0, 0.0, 10.0)).unwrap();
        let problem = GridProblem {
            inner,
            grid: vec![0.0, 10.0],
        };
        // Closed-form objective at price p with zero continuation:
        // 0.5 * e^{-p} / (e^{-p} + 1) * (4 + p).
        let value_at = |p: f64| {
            let w = (-p).exp();
            0.5 * w / (w + 1.0) * (4.0 + p)
        };
        let expected = value_at(0.0).max(value_at(10.0));
        let zero = hp(&[0.0], 0.0);
        let result =
            bellman_apply(&problem, &Continuation::Affine(&zero), &sv(&[0])).unwrap();
        assert!((result.value - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_cut_dominates_stage_values_on_a_box() {
        // Affine terminal cost: the direct-interpolation cut through the
        // stage values must dominate them at every point of a 3x3 box.
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![2, 2],
            c_unit: 0.5,
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params.clone()).unwrap();
        let problem2 = problem.clone();
        let terminal = move |x: &StateVec| problem2.terminal_value(x);
        let cont = Continuation::Exact(&terminal);
        let x_ref = sv(&[1, 1]);
        let cut = case1_cut(&problem, &cont, &x_ref, 0.0).unwrap();
        for x in problem.space().iter_states() {
            let stage = bellman_apply(&problem, &cont, &x).unwrap().value;
            assert!(
                cut.eval(&x) >= stage - 1e-9,
                "cut {} below stage value {} at {:?}",
                cut.eval(&x),
                stage,
                x
            );
        }
    }

    #[test]
    fn stay_only_problem_maps_constant_to_itself() {
        // Deeply negative order revenue makes closing every slot optimal,
        // so the stage operator acts as the identity on constants and an
        // interior-anchored cut reproduces the constant.
        let params = MnlParams {
            x_bar: vec![3, 3],
            beta_s: vec![0.0, 0.0],
            ..single_slot_params(0.3, -0.5, -1000.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let k = hp(&[0.0, 0.0], 17.5);
        let cut = case1_cut(&problem, &Continuation::Affine(&k), &sv(&[1, 1]), 0.0).unwrap();
        assert!(cut.slope().iter().all(|&a| a.abs() < 1e-12));
        assert!((cut.offset() - 17.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_anchor_cut_is_exact_at_the_anchor_with_pinned_slopes() {
        // On a single-point box both bump successors are infeasible; the
        // cut pins the declared worst value drop along each dimension and
        // stays exact at the anchor.
        let params = MnlParams {
            x_bar: vec![0, 0],
            beta_s: vec![0.0, 0.0],
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let k = hp(&[0.0, 0.0], 17.5);
        let cut = case1_cut(&problem, &Continuation::Affine(&k), &sv(&[0, 0]), 0.0).unwrap();
        assert!((cut.eval(&sv(&[0, 0])) - 17.5).abs() < 1e-12);
        let bound = problem.value_drop_bound();
        assert!(cut.slope().iter().all(|&a| (a + bound).abs() < 1e-12));
    }

    #[test]
    fn symmetric_instance_gives_symmetric_cut() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![3, 3],
            ..single_slot_params(0.4, -0.5, 8.0, 0.0, 6.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let symmetric = hp(&[-2.0, -2.0], 30.0);
        let cut =
            case1_cut(&problem, &Continuation::Affine(&symmetric), &sv(&[1, 1]), 0.0).unwrap();
        assert!(
            (cut.slope()[0] - cut.slope()[1]).abs() < 1e-9,
            "slopes {:?} should match by symmetry",
            cut.slope()
        );
    }

    #[test]
    fn single_cut_fallback_coincides_with_direct_interpolation() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![2, 2],
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let only = hp(&[-1.0, -3.0], 12.0);
        let q = PwaValue::new(only.clone());
        let x_ref = sv(&[1, 0]);
        let from_fallback = case2_cut(&problem, q.view(), &x_ref, 0.0).unwrap();
        let from_direct =
            case1_cut(&problem, &Continuation::Affine(&only), &x_ref, 0.0).unwrap();
        assert_eq!(from_fallback, from_direct);
    }

    #[test]
    fn fallback_picks_the_lower_stage_value_cut() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![2, 2],
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        // Both cuts support Q at the origin (equal value there) but lead to
        // different stage values; the flatter one wins the argmin.
        let flat = hp(&[-9.0, -9.0], 10.0);
        let steep = hp(&[-1.0, -1.0], 10.0);
        let q = PwaValue::from_cuts(vec![flat.clone(), steep]).unwrap();
        let x_ref = sv(&[0, 0]);
        let picked = case2_cut(&problem, q.view(), &x_ref, 0.0).unwrap();
        let direct = case1_cut(&problem, &Continuation::Affine(&flat), &x_ref, 0.0).unwrap();
        assert_eq!(picked, direct);
    }

    #[test]
    fn dispatch_follows_the_local_submodularity_check() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![3, 3],
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let x_ref = sv(&[0, 0]);

        // Any single affine continuation: direct interpolation.
        let affine = hp(&[-1.0, -2.0], 9.0);
        let (_, case) =
            backward_cut(&problem, &Continuation::Affine(&affine), &x_ref, 0.0).unwrap();
        assert_eq!(case, CutCase::Submodular);

        // Affine terminal: direct interpolation.
        let p2 = problem.clone();
        let terminal = move |x: &StateVec| p2.terminal_value(x);
        let (_, case) =
            backward_cut(&problem, &Continuation::Exact(&terminal), &x_ref, 0.0).unwrap();
        assert_eq!(case, CutCase::Submodular);

        // Min of two crossing cuts is supermodular around the crossing.
        let q = PwaValue::from_cuts(vec![hp(&[1.0, 0.0], 0.0), hp(&[0.0, 1.0], 0.0)]).unwrap();
        let check = pwa_submodular_on_local_set(q.view(), &x_ref);
        assert!(!check.holds, "crafted counterexample must fail the check");
        let (cut, case) =
            backward_cut(&problem, &Continuation::Cuts(q.view()), &x_ref, 0.0).unwrap();
        assert_eq!(case, CutCase::Fallback);

        // The fallback cut dominates the stage values of the chosen affine
        // piece everywhere on a 4x4 box (here both pieces tie at the
        // anchor; index 0 wins).
        let chosen = &q.cuts()[0];
        for x in problem.space().iter_states() {
            let stage = bellman_apply(&problem, &Continuation::Affine(chosen), &x)
                .unwrap()
                .value;
            assert!(cut.eval(&x) >= stage - 1e-9);
        }
    }

    #[test]
    fn non_submodular_terminal_is_a_contract_violation() {
        let params = MnlParams {
            beta_s: vec![0.0, 0.0],
            x_bar: vec![2, 2],
            ..single_slot_params(0.3, -0.5, 5.0, 0.0, 4.0)
        };
        let problem = AhdProblem::new(params).unwrap();
        let supermodular = move |x: &StateVec| (x.entry(0) * x.entry(1)) as f64;
        let err = backward_cut(
            &problem,
            &Continuation::Exact(&supermodular),
            &sv(&[0, 0]),
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::TerminalNotSubmodular { .. }));
    }
}
