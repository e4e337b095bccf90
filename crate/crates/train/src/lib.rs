//! Paired forward/backward training and the synthetic arrow-of-time
//! experiments.

pub mod error;
pub mod experiments;
pub mod optim;
pub mod parallel;
pub mod runlog;
pub mod schedule;
pub mod spec;
pub mod stats;
pub mod trainer;

pub use error::{Result, TrainError};
pub use optim::{AdamW, AdamWConfig};
pub use runlog::{Record, RunLog, Split};
pub use schedule::LrSchedule;
pub use spec::{Dataset, ExperimentSpec, LanguageConfig, ModelConfig, TrainConfig};
pub use trainer::{evaluate, train_pair, train_run, Evaluation, PairOutput, RunOutput, RunSettings};
