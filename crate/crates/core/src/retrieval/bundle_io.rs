use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bundle::{EvidenceBundle, Modality};
use crate::error::{bail, Result};
use crate::store::{EmbeddingMatrix, Role};

/// Per-bundle metadata kept in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub pair_id: String,
    pub slots: usize,
    pub relevance_labels: Vec<u8>,
    pub permutation: Vec<usize>,
    pub modality_tags: Vec<Modality>,
    pub padded_flags: Vec<bool>,
    pub source_ids: Vec<String>,
}

/// Sidecar document for a bundle container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub m: usize,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub bundles: Vec<BundleMeta>,
}

fn slot_id(pair_id: &str, slot: usize) -> String {
    format!("{pair_id}/{slot}")
}

/// Writes `<stem>.rede` (slot features, one row per slot) and `<stem>.json`.
pub fn write_bundles(bundles: &[EvidenceBundle], m: usize, k: usize, seed: u64, dim: usize, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut metas = Vec::with_capacity(bundles.len());
    for b in bundles {
        if b.dim != dim {
            bail!(Shape, "bundle '{}' has dim {}, expected {}", b.pair_id, b.dim, dim);
        }
        ids.extend((0..b.len()).map(|s| slot_id(&b.pair_id, s)));
        data.extend_from_slice(&b.features);
        metas.push(BundleMeta {
            pair_id: b.pair_id.clone(),
            slots: b.len(),
            relevance_labels: b.relevance_labels.clone(),
            permutation: b.permutation.clone(),
            modality_tags: b.modality_tags.clone(),
            padded_flags: b.padded_flags.clone(),
            source_ids: b.source_ids.clone(),
        });
    }
    let matrix = EmbeddingMatrix::new(Role::EvidenceBundle, dim, ids, data)?;
    fs::write(stem.with_extension("rede"), matrix.to_bytes())?;
    let sidecar = BundleFile { m, k, dim, seed, bundles: metas };
    fs::write(stem.with_extension("json"), serde_json::to_string(&sidecar)? + "\n")?;
    Ok(())
}

/// Reads a container and sidecar pair back into bundles.
pub fn read_bundles(stem: impl AsRef<Path>) -> Result<(BundleFile, Vec<EvidenceBundle>)> {
    let stem = stem.as_ref();
    let sidecar: BundleFile = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let matrix = EmbeddingMatrix::from_bytes(&fs::read(stem.with_extension("rede"))?, Some(Role::EvidenceBundle))?;
    if matrix.dim() != sidecar.dim {
        bail!(Format, "bundle container dim {} disagrees with sidecar dim {}", matrix.dim(), sidecar.dim);
    }
    let mut bundles = Vec::with_capacity(sidecar.bundles.len());
    let mut row = 0;
    for meta in &sidecar.bundles {
        let n = meta.slots;
        let consistent = meta.relevance_labels.len() == n
            && meta.permutation.len() == n
            && meta.modality_tags.len() == n
            && meta.padded_flags.len() == n
            && meta.source_ids.len() == n;
        if !consistent || row + n > matrix.len() {
            bail!(Format, "sidecar entry for '{}' does not match the container", meta.pair_id);
        }
        for s in 0..n {
            if matrix.ids()[row + s] != slot_id(&meta.pair_id, s) {
                bail!(Format, "container row {} is '{}', expected slot {} of '{}'", row + s, matrix.ids()[row + s], s, meta.pair_id);
            }
        }
        bundles.push(EvidenceBundle {
            pair_id: meta.pair_id.clone(),
            dim: matrix.dim(),
            features: matrix.data()[row * matrix.dim()..(row + n) * matrix.dim()].to_vec(),
            relevance_labels: meta.relevance_labels.clone(),
            permutation: meta.permutation.clone(),
            modality_tags: meta.modality_tags.clone(),
            padded_flags: meta.padded_flags.clone(),
            source_ids: meta.source_ids.clone(),
        });
        row += n;
    }
    if row != matrix.len() {
        bail!(Format, "container has {} rows, sidecar accounts for {}", matrix.len(), row);
    }
    Ok((sidecar, bundles))
}
