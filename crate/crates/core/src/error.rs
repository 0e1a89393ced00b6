use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("grid of {0} nodes is too small (need at least 8)")]
    GridTooSmall(usize),
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("degenerate curve: speed {speed:.3e} at node {node} is below the floor {floor:.3e}")]
    DegenerateCurve { node: usize, speed: f64, floor: f64 },
    #[error("cumulative arclength profile is not strictly increasing at node {0}")]
    NonMonotoneProfile(usize),
    #[error("grid mismatch: {0} vs {1} nodes")]
    GridMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("curve is not constant-speed: deviation {deviation:.3e} exceeds {tol:.3e}")]
    NotConstantSpeed { deviation: f64, tol: f64 },
    #[error("reparametrization stalled at deviation {deviation:.3e} (target {tol:.3e})")]
    ReparamNotConverged { deviation: f64, tol: f64 },
    #[error("step index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("trajectory needs at least {need} steps, has {have}")]
    TooFewSteps { need: usize, have: usize },
}

pub type Result<T> = std::result::Result<T, FlowError>;
