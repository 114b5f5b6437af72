use thiserror::Error;

use crate::geom::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("`{label}` uses min/max/abs but must be twice continuously differentiable")]
    NotSmooth { label: String },

    #[error("evaluation at a non-differentiable point ({x:?})")]
    NonSmoothPoint { x: Point },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "projection onto the zero level set did not converge from {start:?} (|g| = {residual:e})"
    )]
    ProjectionFailed { start: Point, residual: f64 },

    #[error("no return to the initial point detected within an arc budget of {budget}")]
    PeriodNotDetected { budget: f64 },

    #[error("trajectory drifted off the level set: |g| = {drift:e} exceeds {tol:e}")]
    Drift { drift: f64, tol: f64 },

    #[error("more than {max} components in the zero level set")]
    TooManyComponents { max: usize },

    #[error("component {component} has no zero of the direction function (the direction must meet every boundary component)")]
    NoIntersection { component: usize },

    #[error("shape function is not admissible: {0}")]
    NotAdmissible(String),

    #[error("domain is empty on the grid")]
    EmptyDomain,

    #[error("a component of the domain is not resolved by the grid ({nodes} nodes across)")]
    Unresolved { nodes: usize },

    #[error("boundary stencil at {x:?}: {message}")]
    BoundaryStencil { x: Point, message: String },

    #[error("{what} did not converge; residual history {history:?}")]
    NonConvergence { what: String, history: Vec<f64> },

    #[error("observation set is not compactly contained in the domain")]
    ObservationSet,

    #[error("no admissible direction in the family")]
    NoDirections,
}
