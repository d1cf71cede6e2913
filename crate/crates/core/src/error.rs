use core::fmt;

use crate::vec2::Vec2;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter or grid violates its invariants.
    Config(&'static str),
    /// The integrator produced or encountered a non-finite value.
    Integration { position: Vec2, time: f64 },
    /// A rollout produced a non-finite state at the given step.
    Rollout { step: usize },
    /// Two fields that must share a grid do not.
    GridMismatch,
    /// A field has no valid node to work with.
    NoValidNodes,
    /// A policy cannot be time-reversed because it does not span exactly one period.
    PeriodSpan { span: f64, period: f64 },
    /// Array dimensions disagree with the declared shape.
    Shape { expected: usize, found: usize },
    /// A stored control violates the actuation bound.
    BoundViolation { index: usize, value: f64, bound: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Integration { position, time } => write!(
                f,
                "integration failed at ({}, {}), t = {}",
                position.x, position.y, time
            ),
            Error::Rollout { step } => write!(f, "non-finite state in rollout at step {step}"),
            Error::GridMismatch => write!(f, "fields are registered on different grids"),
            Error::NoValidNodes => write!(f, "field has no valid nodes"),
            Error::PeriodSpan { span, period } => write!(
                f,
                "policy spans {span} but must span exactly one period ({period})"
            ),
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected} values, found {found}")
            }
            Error::BoundViolation { index, value, bound } => write!(
                f,
                "control component {value} at index {index} exceeds bound {bound}"
            ),
        }
    }
}
