use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::manifest::{DatasetManifest, Split};
use super::matrix::{EmbeddingSet, Role};

/// A single problem that makes a dataset unusable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DanglingId { pair_id: String, role: Role, id: String },
    DimensionMismatch { role: Role, expected: usize, found: usize },
    DuplicatePairId { pair_id: String },
    SplitOverlap { pair_id: String, splits: Vec<Split> },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DanglingId { pair_id, role, id } => {
                write!(f, "pair '{}' references missing {:?} id '{}'", pair_id, role, id)
            }
            Finding::DimensionMismatch { role, expected, found } => {
                write!(f, "{:?} matrix has dim {}, dataset dim is {}", role, found, expected)
            }
            Finding::DuplicatePairId { pair_id } => write!(f, "pair_id '{}' occurs more than once", pair_id),
            Finding::SplitOverlap { pair_id, splits } => {
                write!(f, "pair_id '{}' appears in splits {:?}", pair_id, splits)
            }
        }
    }
}

/// Everything wrong with a dataset. Repeated ids inside one evidence pool
/// are recorded as warnings only: they are suspicious but do not stop the
/// pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub duplicate_pool_entries: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
        self.duplicate_pool_entries.extend(other.duplicate_pool_entries);
    }
}

/// Checks every id reference, dimension and pair_id in one manifest.
pub fn validate_dataset(manifest: &DatasetManifest, matrices: &EmbeddingSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    for m in matrices.iter() {
        if m.dim() != manifest.dim {
            report.findings.push(Finding::DimensionMismatch {
                role: m.role(),
                expected: manifest.dim,
                found: m.dim(),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for pair in &manifest.pairs {
        if !seen.insert(pair.pair_id.as_str()) && reported.insert(pair.pair_id.as_str()) {
            report.findings.push(Finding::DuplicatePairId { pair_id: pair.pair_id.clone() });
        }
        let mut check = |role: Role, id: &str| {
            if !matrices.get(role).is_some_and(|m| m.contains(id)) {
                report.findings.push(Finding::DanglingId {
                    pair_id: pair.pair_id.clone(),
                    role,
                    id: id.to_owned(),
                });
            }
        };
        check(Role::TextClaim, &pair.text_id);
        check(Role::ImageClaim, &pair.image_id);
        for id in &pair.candidate_text_evidence {
            check(Role::TextEvidence, id);
        }
        for id in &pair.candidate_image_evidence {
            check(Role::ImageEvidence, id);
        }
        for pool in [&pair.candidate_text_evidence, &pair.candidate_image_evidence] {
            let mut ids = HashSet::new();
            for id in pool {
                if !ids.insert(id) {
                    report.duplicate_pool_entries.push((pair.pair_id.clone(), id.clone()));
                }
            }
        }
    }
    report
}

/// Reports every pair_id that occurs in more than one split.
pub fn check_split_disjointness<'a>(manifests: impl IntoIterator<Item = &'a DatasetManifest>) -> Vec<Finding> {
    let mut owners: HashMap<&str, Vec<Split>> = HashMap::new();
    let mut order = Vec::new();
    for manifest in manifests {
        for pair in &manifest.pairs {
            let entry = owners.entry(pair.pair_id.as_str()).or_insert_with(|| {
                order.push(pair.pair_id.as_str());
                Vec::new()
            });
            if !entry.contains(&manifest.split) {
                entry.push(manifest.split);
            }
        }
    }
    order
        .into_iter()
        .filter_map(|id| {
            let splits = &owners[id];
            (splits.len() > 1).then(|| Finding::SplitOverlap { pair_id: id.to_owned(), splits: splits.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{generate_synthetic, SynthConfig};

    fn dataset() -> (DatasetManifest, EmbeddingSet) {
        let cfg = SynthConfig { pairs: 6, dim: 8, ..SynthConfig::default() };
        generate_synthetic(&cfg, 3).unwrap()
    }

    #[test]
    fn consistent_dataset_is_clean() {
        let (manifest, set) = dataset();
        let report = validate_dataset(&manifest, &set);
        assert!(report.is_usable(), "{:?}", report);
        assert!(report.duplicate_pool_entries.is_empty());
    }

    #[test]
    fn dangling_image_id_is_named() {
        let (mut manifest, set) = dataset();
        manifest.pairs[2].image_id = "x9".into();
        let report = validate_dataset(&manifest, &set);
        assert_eq!(report.findings.len(), 1);
        assert!(matches!(&report.findings[0], Finding::DanglingId { id, role: Role::ImageClaim, .. } if id == "x9"));
    }

    #[test]
    fn duplicate_pair_ids_and_dims() {
        let (mut manifest, set) = dataset();
        manifest.pairs[1].pair_id = manifest.pairs[0].pair_id.clone();
        manifest.dim = 9;
        let report = validate_dataset(&manifest, &set);
        assert!(report.findings.contains(&Finding::DuplicatePairId { pair_id: manifest.pairs[0].pair_id.clone() }));
        assert_eq!(
            report.findings.iter().filter(|f| matches!(f, Finding::DimensionMismatch { .. })).count(),
            4
        );
    }

    #[test]
    fn pool_duplicates_warn_without_blocking() {
        let (mut manifest, set) = dataset();
        let first = manifest.pairs[0].candidate_text_evidence[0].clone();
        manifest.pairs[0].candidate_text_evidence.push(first);
        let report = validate_dataset(&manifest, &set);
        assert!(report.is_usable());
        assert_eq!(report.duplicate_pool_entries.len(), 1);
    }

    #[test]
    fn split_overlap_detected() {
        let (a, _) = dataset();
        let mut b = a.clone();
        b.split = Split::Test;
        b.pairs.truncate(2);
        let findings = check_split_disjointness([&a, &b]);
        assert_eq!(findings.len(), 2);
        assert!(check_split_disjointness([&a]).is_empty());
    }
}
