use thiserror::Error;

use crate::sim::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("L + G is singular; the pinned communication graph has no spanning tree")]
    SingularSystem,

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing multiplier {0}")]
    MissingMultiplier(String),

    #[error("multiplier index sets differ: {0}")]
    KeyMismatch(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("rho = {rho} is outside [{lo}, {hi}]")]
    OutOfRange { rho: f64, lo: f64, hi: f64 },

    #[error("coverage sets of design points {0} and {1} do not overlap; refine the grid")]
    NoOverlap(usize, usize),

    #[error("design grid does not cover the parameter interval: {0}")]
    Coverage(String),

    #[error("rate condition violated: q = {0} >= 1")]
    RateViolated(f64),

    #[error("simulation diverged at t = {time}")]
    NonFinite {
        time: f64,
        partial: Box<Trajectory>,
    },

    #[error("symmetric eigensolver did not converge")]
    NonConvergence,

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("design point {rho} is infeasible: {detail}")]
    Infeasible { rho: f64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
