//! Evidence re-ranking, hard-negative mining and bundle assembly.

mod bundle;
mod bundle_io;
mod index;
mod negatives;
mod rank;
mod similarity;

pub use bundle::{assemble_bundle, assemble_retrieved_only, assemble_unshuffled, EvidenceBundle, Modality};
pub use bundle_io::{read_bundles, write_bundles, BundleFile, BundleMeta};
pub use index::{build_index, Neighbor, NeighborIndex};
pub use negatives::{mine_all, mine_hard_negatives, ClaimIndices, NegativeAssignment};
pub use rank::{rank_all, rank_relevant, RankedEvidence};
pub use similarity::cosine_similarity;
