use thiserror::Error;

use crate::grid::Field;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("constraint set is not admissible: {0}")]
    Constraint(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("unknown built-in problem `{0}`")]
    UnknownProblem(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("node {node} lacks the neighbors required by the stencil")]
    BoundaryNode { node: usize },

    #[error("monotone stencil violated for axis pair ({axis_i}, {axis_j}): {detail}")]
    Monotonicity {
        axis_i: usize,
        axis_j: usize,
        detail: String,
    },

    #[error("problem failed validation: {0}")]
    Validation(String),

    #[error("Newton iteration did not converge: {detail} (best residual {residual:e})")]
    NewtonDivergence {
        detail: String,
        residual: f64,
        best: Box<Field>,
    },

    #[error("penalty continuation failed at eps = {eps:e} (last good eps = {last_good:?})")]
    Continuation {
        eps: f64,
        last_good: Option<f64>,
        iterate: Box<Field>,
    },

    #[error("iteration did not settle: {0}")]
    Stalled(String),

    #[error("vanishing-discount iteration not Cauchy within the discount budget ({} discounts)", trace.len())]
    NotCauchy { trace: Vec<(f64, f64)> },

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("admissibility violated at node {node} (H0 = {value:e})")]
    Inadmissible { node: usize, value: f64 },

    #[error("linear solver failure: {0}")]
    Linear(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
