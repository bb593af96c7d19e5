//! Evidence re-ranking, hard-negative mining, modality fusion and a
//! relevance-aware transformer for multimodal fact-checking over precomputed
//! embeddings.

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod model;
pub mod protocol;
pub mod retrieval;
pub mod store;

pub use error::{Error, Result};
pub use exec::Parallelism;
