//! Small tensor library with reverse-mode differentiation and a decoder-only
//! transformer.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Graph, Var};
pub use model::{loss_and_per_token, Forward, Model, Param, TokenLosses, TransformerConfig};
pub use tensor::{Float, Tensor};
