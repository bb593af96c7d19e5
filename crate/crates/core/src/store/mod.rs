//! Precomputed embedding matrices, dataset manifests and their validation.

mod dataset;
mod manifest;
mod matrix;
mod synth;
mod validate;

pub use dataset::{Dataset, DatasetMeta};
pub use manifest::{
    read_manifest, write_manifest, DatasetManifest, PairCategory, Split, Verdict, VerificationPair,
};
pub use matrix::{load_embeddings, save_embeddings, EmbeddingMatrix, EmbeddingSet, Role, HEADER_LEN};
pub use synth::{generate_splits, generate_synthetic, SynthConfig};
pub use validate::{check_split_disjointness, validate_dataset, Finding, ValidationReport};
