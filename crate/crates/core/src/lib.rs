//! Exact tooling for arrow-of-time experiments on synthetic languages:
//! GF(2) matrices, language generators, enumeration oracles and the data
//! pipeline shared by forward and backward training runs.

pub mod bpe;
pub mod datapipe;
pub mod error;
pub mod f2linalg;
pub mod langgen;
pub mod oracle;
pub mod shard;

pub use datapipe::Direction;
pub use error::{Error, Result};
pub use f2linalg::{F2Matrix, F2Vector, SparsityStats};
pub use langgen::{FiniteLanguage, Language, LinearLangSpec, PrimeLangSpec, Sentence, TokenId, Vocab};
