//! Error type shared across the solver library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A pricing function failed validation at construction time.
    #[error("invalid pricing function: {0}")]
    InvalidPricing(String),

    /// A time grid or control grid failed validation.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Matrix shapes do not agree.
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    /// A control value lies outside `{0} ∪ [a, b]` beyond the snap tolerance.
    #[error("inadmissible control value {value} in component {component}, cell {cell}")]
    InadmissibleControl {
        component: usize,
        cell: usize,
        value: f64,
    },

    /// The forward or adjoint solve produced a non-finite value.
    #[error("numerical blowup in {context} at step {step}")]
    NumericalBlowup { context: &'static str, step: usize },

    /// The outer iteration aborted; carries the iterate it was at so
    /// callers can dump it for inspection.
    #[error("solve aborted at iteration {iter}: {source}")]
    SolveAborted {
        iter: usize,
        #[source]
        source: Box<Error>,
        control: Box<crate::grid::ControlGrid>,
    },

    /// A problem specification is inconsistent.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// A budget query exceeded the cap the tables were built with.
    #[error("budget {requested} exceeds table cap {cap}")]
    BudgetExceedsCap { requested: usize, cap: usize },

    /// The exhaustive subproblem oracle was asked for an instance it cannot
    /// enumerate.
    #[error("instance too large for brute force: {cells} cells (max {max})")]
    InstanceTooLarge { cells: usize, max: usize },

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("internal consistency violation: {0}")]
    Internal(String),

    /// A trust-region configuration value is out of range.
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}
