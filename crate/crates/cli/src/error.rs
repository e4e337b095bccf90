use std::io::ErrorKind;
use std::path::PathBuf;

use aot_nn::NnError;
use aot_train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("input missing: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Core(#[from] aot_core::Error),

    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CONSISTENCY: i32 = 5;

fn core_code(e: &aot_core::Error) -> i32 {
    use aot_core::Error as E;
    match e {
        E::InvalidDimension(_)
        | E::InvalidArgument(_)
        | E::ResourceLimit(_)
        | E::UnknownSymbol(_)
        | E::Format(_)
        | E::NotInSupport => EXIT_CONFIG,
        E::InfiniteLoss { .. } => EXIT_NUMERIC,
        E::Singular { .. } | E::GenerationFailure { .. } => EXIT_CONSISTENCY,
        E::Io(io) => io_code(io),
    }
}

fn nn_code(e: &NnError) -> i32 {
    match e {
        NnError::InvalidArgument(_) | NnError::Format(_) | NnError::Json(_) => EXIT_CONFIG,
        NnError::NumericFault { .. } => EXIT_NUMERIC,
        NnError::Shape(_) => EXIT_CONSISTENCY,
        NnError::Io(io) => io_code(io),
    }
}

fn io_code(e: &std::io::Error) -> i32 {
    if e.kind() == ErrorKind::NotFound {
        EXIT_MISSING_INPUT
    } else {
        EXIT_OTHER
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Consistency(_) => EXIT_CONSISTENCY,
            CliError::Output { .. } => EXIT_OTHER,
            CliError::Train(e) => match e {
                TrainError::Config(_) | TrainError::Json(_) => EXIT_CONFIG,
                TrainError::NumericFault { .. } => EXIT_NUMERIC,
                TrainError::Consistency(_) => EXIT_CONSISTENCY,
                TrainError::Core(c) => core_code(c),
                TrainError::Nn(n) => nn_code(n),
                TrainError::Io(io) => io_code(io),
            },
            CliError::Core(e) => core_code(e),
            CliError::Nn(e) => nn_code(e),
        }
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}
