//! Gradient-bounded dynamic programming for finite-horizon dynamic programs
//! on discrete state lattices whose value functions are submodular and
//! concave extensible.
//!
//! The solver alternates forward sweeps (sampling a trajectory under the
//! current min-of-cuts approximation, yielding stochastic lower-bound
//! samples) with backward sweeps (adding one separating affine cut per
//! epoch, yielding a deterministic, monotonically tightening upper bound on
//! the expected profit). A full-enumeration exact oracle and discrete
//! convex-analysis checkers support desk-scale verification, and an
//! attended-home-delivery slot-pricing problem with multinomial-logit
//! customer choice ships as the reference instantiation.

pub mod ahd;
pub mod bellman;
pub mod oracle;
pub mod problem;
pub mod pwa;
mod simplex;
pub mod solver;
pub mod state;

pub use ahd::{AhdProblem, MnlParams};
pub use bellman::{backward_cut, bellman_apply, BellmanResult, Continuation, CutCase, EngineError};
pub use oracle::{
    check_concave_extensible, check_submodular_all, concave_closure_at, exact_solve,
    verify_upper_bound, DominanceReport, ExactValueTable, OracleError,
};
pub use problem::{
    Control, Decision, ProblemDefinition, ProblemError, TransitionDistribution,
};
pub use pwa::{
    default_tie_tol, fit_hyperplane, is_submodular_on, CutRecord, Hyperplane, PwaError, PwaValue,
    PwaView, SubmodularityCheck, TerminalFn, ValueStack,
};
pub use solver::{
    backward_sweep, forward_sweep, initial_stack, simulate, terminal_handle, train, train_with,
    BoundsTrace, CutAnchor, CutStats, IterationRecord, ResampleMode, SamplePath, SolverConfig,
    SolverError, TrainOutput,
};
pub use state::{
    local_check_set, successors, HorizonSpec, StateError, StateSpace, StateVec,
};
