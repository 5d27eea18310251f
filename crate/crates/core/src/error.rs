use thiserror::Error;

use crate::model::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("density {value} outside [0, 1]")]
    Domain { value: f64 },

    #[error("invalid speed law: {0}")]
    InvalidLaw(String),

    #[error("flux is not unimodal on [0, 1]: {0}")]
    NotUnimodal(String),

    #[error("invalid lane topology: {0}")]
    InvalidTopology(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("CFL violation: lambda * V = {product} exceeds 1/2 (lambda = {lambda}, V = {c1_norm}); the scheme requires lambda * V <= 1/2")]
    Cfl {
        lambda: f64,
        c1_norm: f64,
        product: f64,
    },

    #[error("non-finite density at step {step}, lane {lane}, cell {cell}")]
    NonFinite { step: usize, lane: usize, cell: usize },

    #[error("density {value} out of bounds at step {step}, lane {lane}, cell {cell} ({side:?} side)")]
    BoundViolation {
        step: usize,
        lane: usize,
        cell: usize,
        side: Side,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("diagnostic precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
