use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite evaluation of `{label}` at {point:?}")]
    NonFiniteEvaluation { label: String, point: Vec<f64> },

    #[error("adapted frame numerically singular (cond = {cond:.3e})")]
    FrameSingular { cond: f64 },

    #[error("kinetic metric degenerate on the S-distribution at {point:?}")]
    MetricDegenerateOnS { point: Vec<f64> },

    #[error("shape coordinate degenerate: |d shape(X0)| = {value:.3e} at s = {s}")]
    ShapeDegenerate { s: f64, value: f64 },

    #[error("ODE step failure: local error target {target:.3e} unreachable at s = {s}")]
    StepFailure { s: f64, target: f64 },

    #[error("saddle system singular at {point:?}")]
    SaddleSingular { point: Vec<f64> },

    #[error("trajectory left the declared domain at t = {t}")]
    DomainExit { t: f64 },

    #[error("gauged 2-form degenerate on the constraint frame at {point:?}")]
    DegenerateTwoForm { point: Vec<f64> },

    #[error("bad parameter: {0}")]
    BadParameter(String),
}
