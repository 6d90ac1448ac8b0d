use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step budget exceeded: {required} steps needed, limit is {max_steps}")]
    StepBudget { required: u64, max_steps: u64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("template error: no value for placeholder `{placeholder}`")]
    Template { placeholder: String },

    #[error("plan parse error: {0}")]
    PlanParse(String),

    #[error("unknown move `{0}`")]
    Vocabulary(String),

    #[error("no action available to choose from")]
    NoAction,

    #[error("backend configuration error: {0}")]
    BackendConfig(String),

    #[error("backend error: {0}")]
    Backend(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
