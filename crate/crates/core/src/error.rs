use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("Bernstein degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("initial support [{low}, {high}] is empty")]
    EmptyInitRange { low: f64, high: f64 },
    #[error("Bernstein argument {value} outside [0, 1]")]
    Domain { value: f64 },
    #[error("{value} lies outside the flow image ({low}, {high})")]
    OutOfImage { value: f64, low: f64, high: f64 },
    #[error("expected {expected} raw parameters, got {actual}")]
    ParamLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("non-finite value produced by `{primitive}`")]
    NonFinite { primitive: &'static str },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("expected {expected} parameters, got {actual}")]
    ParamLength { expected: usize, actual: usize },
    #[error("dataset inputs ({inputs}) and targets ({targets}) differ in length")]
    DatasetShape { inputs: usize, targets: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(
        "non-finite ELBO at step {step}{}: {detail}",
        param_index.map(|i| format!(" (parameter {i})")).unwrap_or_default()
    )]
    NonFinite {
        step: usize,
        param_index: Option<usize>,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("density grids differ ({0})")]
    GridMismatch(String),
    #[error("data entry {0} is not binary")]
    NonBinary(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid sampler settings: {0}")]
    Sampler(String),
}
