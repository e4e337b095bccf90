use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),

    #[error("numeric fault at step {step}: {detail}")]
    NumericFault { step: usize, detail: String },

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error(transparent)]
    Core(#[from] aot_core::Error),

    #[error(transparent)]
    Nn(#[from] aot_nn::NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TrainError::Config(msg.into()))
}
