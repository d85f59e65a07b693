use thiserror::Error;

use crate::model::Form;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("overflow: {quantity} is not representable at k = {k}")]
    Overflow { quantity: &'static str, k: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("form mismatch: expected {expected:?}, got {got:?}")]
    FormMismatch { expected: Form, got: Form },

    #[error("step size collapsed to {step:e} at t = {t:e}")]
    StepSizeCollapse { t: f64, step: f64 },

    #[error("non-finite state at t = {t:e}")]
    NonFiniteState { t: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t:e}")]
    MaxSteps { t: f64, max_steps: usize },

    #[error(
        "backward amplification budget exceeded at mode {k}: amplification {amplification:e} \
         times rel_tol gives relative error {predicted:e}"
    )]
    AmplificationBudgetExceeded {
        k: usize,
        amplification: f64,
        predicted: f64,
    },

    #[error("time span mismatch: {0}")]
    SpanMismatch(String),

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("empty trajectory")]
    EmptyTrajectory,
}

pub type Result<T> = std::result::Result<T, Error>;
