use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{read_manifest, write_manifest, DatasetManifest, PairCategory, Split};
use super::matrix::EmbeddingSet;
use super::validate::{check_split_disjointness, validate_dataset, ValidationReport};
use crate::error::{bail, Result};

const META_FILE: &str = "dataset.json";

/// Dataset-wide metadata stored next to the manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub dim: usize,
    #[serde(default)]
    pub provenance: String,
    /// Optional per-pair category, keyed by pair_id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<String, PairCategory>,
}

/// Manifests for every split plus the shared embedding matrices.
///
/// On disk: `dataset.json`, one `<split>.jsonl` per split, and the four
/// `.rede` matrix files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub manifests: BTreeMap<Split, DatasetManifest>,
    pub matrices: EmbeddingSet,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Option<&DatasetManifest> {
        self.manifests.get(&split)
    }

    pub fn require_split(&self, split: Split) -> Result<&DatasetManifest> {
        match self.manifests.get(&split) {
            Some(m) => Ok(m),
            None => bail!(Data, "dataset has no '{}' split", split),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for manifest in self.manifests.values() {
            report.merge(validate_dataset(manifest, &self.matrices));
        }
        report.findings.extend(check_split_disjointness(self.manifests.values()));
        report
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        for (split, manifest) in &self.manifests {
            write_manifest(&manifest.pairs, dir.join(format!("{}.jsonl", split)))?;
        }
        self.matrices.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let matrices = EmbeddingSet::load(dir)?;
        let mut manifests = BTreeMap::new();
        for split in Split::ALL {
            let path = dir.join(format!("{}.jsonl", split));
            if path.exists() {
                manifests.insert(
                    split,
                    DatasetManifest {
                        split,
                        pairs: read_manifest(&path)?,
                        dim: meta.dim,
                        provenance: meta.provenance.clone(),
                    },
                );
            }
        }
        Ok(Dataset { meta, manifests, matrices })
    }
}
