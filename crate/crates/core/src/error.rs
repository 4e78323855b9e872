use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported domain: {0}")]
    Domain(String),

    #[error("time {t} outside the configured horizon [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    /// Boris/RK4 stability guardrail, `dt * |B|_inf < 1`.
    #[error("step guardrail violated: dt * |B|_inf = {product} (dt = {dt}, |B|_inf = {b_inf}) must be < 1")]
    Guardrail { dt: f64, b_inf: f64, product: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("time {0} was not recorded")]
    NotRecorded(f64),

    #[error("step budget exceeded: {steps} steps requested, budget is {budget}")]
    StepBudget { steps: usize, budget: usize },

    #[error("incomplete window: {0}")]
    Window(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
