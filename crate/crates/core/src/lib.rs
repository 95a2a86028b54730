//! Solver library for optimal control problems whose controls are either
//! switched off or take values in an interval `[a, b]` with `a > 0`.
//!
//! The objective combines a smooth tracking part driven by an ODE, a convex
//! running cost on the active control, and a total-variation penalty on the
//! on/off indicator that prices every switch. The solver is an outer
//! trust-region iteration whose subproblems couple a proximal gradient step
//! on the active set with an exact dynamic program over sign patterns.
//!
//! Module map:
//! - [`pricing`]: scalar convex cost functions on `{0} ∪ [a, b]` with
//!   closed-form proximal maps and the tangent-through-origin switch value.
//! - [`grid`]: the piecewise-constant control iterate, sign patterns, jump
//!   sets and the masked norms used by the model.
//! - [`dynamics`]: forward Euler state solves, the discrete-adjoint gradient
//!   and the full objective.
//! - [`subproblem`]: the Bellman recursion that minimizes the trust-region
//!   model exactly over sign patterns within a flip budget.
//! - [`criticality`]: the two-part stationarity measure (proximal residual on
//!   the active set, continuation values at the switching points).
//! - [`trust_region`]: the outer accept/reject loop with budget and step-size
//!   updates, iteration records and termination handling.

// Validation uses negated comparisons (`!(x > 0.0)`) so NaN inputs are
// rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criticality;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod mat;
pub mod pricing;
pub mod subproblem;
pub mod testkit;
pub mod trust_region;

pub use criticality::{criticality, CriticalityReport, GradientSampling, JumpScore};
pub use dynamics::{
    decay_target, decay_target_exact, forward_state, full_objective, gradient_adjoint,
    smooth_objective, DecayParams, OdeSystem, ProblemSpec, SirParams, StateTrajectory, SystemKind,
};
pub use error::Error;
pub use grid::{ControlGrid, Jump, JumpDirection, JumpSet, SignPattern, TimeGrid};
pub use mat::Mat;
pub use pricing::{PricingFunction, QuadPiece};
pub use subproblem::{
    brute_force_subproblem, DpSolution, ModelInstance, StageCandidate, ValueTables,
};
pub use trust_region::{
    actual_reduction, predicted_reduction, solve, solve_observed, step, IterationRecord,
    SolveReport, StepOutcome, TerminationReason, TrustRegionConfig,
};

/// Library result alias.
pub type Result<T> = std::result::Result<T, Error>;
