use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::negatives::NegativeAssignment;
use super::rank::RankedEvidence;
use crate::error::{bail, Result};
use crate::store::{EmbeddingMatrix, EmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

/// The evidence token sequence fed to the model for one claim.
///
/// Slot `s` holds `E'[permutation[s]]`, where `E'` is the unshuffled layout
/// `[T+ (m), I+ (k), T- (m), I- (k)]`. All per-slot arrays are permuted
/// together.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBundle {
    pub pair_id: String,
    pub dim: usize,
    pub features: Vec<f32>,
    pub relevance_labels: Vec<u8>,
    pub permutation: Vec<usize>,
    pub modality_tags: Vec<Modality>,
    pub padded_flags: Vec<bool>,
    /// Evidence id behind each slot.
    pub source_ids: Vec<String>,
}

impl EvidenceBundle {
    pub fn len(&self) -> usize {
        self.relevance_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance_labels.is_empty()
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positives(&self) -> usize {
        self.relevance_labels.iter().filter(|&&l| l == 1).count()
    }

    /// Keeps the slots with `keep[s] == true`, preserving slot order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> EvidenceBundle {
        let slots: Vec<usize> = (0..self.len()).filter(|&s| keep(s)).collect();
        let mut features = Vec::with_capacity(slots.len() * self.dim);
        for &s in &slots {
            features.extend_from_slice(self.slot(s));
        }
        EvidenceBundle {
            pair_id: self.pair_id.clone(),
            dim: self.dim,
            features,
            relevance_labels: slots.iter().map(|&s| self.relevance_labels[s]).collect(),
            permutation: slots.iter().map(|&s| self.permutation[s]).collect(),
            modality_tags: slots.iter().map(|&s| self.modality_tags[s]).collect(),
            padded_flags: slots.iter().map(|&s| self.padded_flags[s]).collect(),
            source_ids: slots.iter().map(|&s| self.source_ids[s].clone()).collect(),
        }
    }

    /// The relevant slots only, in slot order.
    pub fn relevant_only(&self) -> EvidenceBundle {
        self.select(|s| self.relevance_labels[s] == 1)
    }

    /// Undoes the shuffle: slots sorted by their original position.
    pub fn unshuffled(&self) -> EvidenceBundle {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&s| self.permutation[s]);
        self.reorder(&order)
    }

    fn reorder(&self, order: &[usize]) -> EvidenceBundle {
        let mut features = Vec::with_capacity(self.features.len());
        for &s in order {
            features.extend_from_slice(self.slot(s));
        }
        EvidenceBundle {
            pair_id: self.pair_id.clone(),
            dim: self.dim,
            features,
            relevance_labels: order.iter().map(|&s| self.relevance_labels[s]).collect(),
            permutation: order.iter().map(|&s| self.permutation[s]).collect(),
            modality_tags: order.iter().map(|&s| self.modality_tags[s]).collect(),
            padded_flags: order.iter().map(|&s| self.padded_flags[s]).collect(),
            source_ids: order.iter().map(|&s| self.source_ids[s].clone()).collect(),
        }
    }

    /// Applies `perm` so that slot `s` of the result is slot `perm[s]` of self.
    pub fn permuted(&self, perm: &[usize]) -> Result<EvidenceBundle> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || !perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true)) {
            bail!(Shape, "not a permutation of {} slots", self.len());
        }
        Ok(self.reorder(perm))
    }
}

struct Filler<'a> {
    features: Vec<f32>,
    labels: Vec<u8>,
    tags: Vec<Modality>,
    padded: Vec<bool>,
    ids: Vec<String>,
    pools: &'a EmbeddingSet,
}

impl Filler<'_> {
    fn fill(&mut self, rng: &mut ChaCha8Rng, chosen: &[String], want: usize, modality: Modality, label: u8) -> Result<()> {
        let matrix: &EmbeddingMatrix = match modality {
            Modality::Text => &self.pools.text_evidence,
            Modality::Image => &self.pools.image_evidence,
        };
        for slot in 0..want {
            let (id, padded) = match chosen.get(slot) {
                Some(id) => (id.clone(), false),
                None => {
                    if matrix.is_empty() {
                        bail!(Data, "need to pad {:?} evidence but the dataset-wide pool is empty", modality);
                    }
                    (matrix.ids()[rng.random_range(0..matrix.len())].clone(), true)
                }
            };
            self.features.extend_from_slice(matrix.require(&id)?);
            self.labels.push(label);
            self.tags.push(modality);
            self.padded.push(padded);
            self.ids.push(id);
        }
        Ok(())
    }
}

fn build(
    pair_id: &str,
    groups: &[(&[String], usize, Modality, u8)],
    pools: &EmbeddingSet,
    rng: &mut ChaCha8Rng,
) -> Result<EvidenceBundle> {
    let mut f = Filler { features: Vec::new(), labels: Vec::new(), tags: Vec::new(), padded: Vec::new(), ids: Vec::new(), pools };
    for &(chosen, want, modality, label) in groups {
        f.fill(rng, &chosen[..chosen.len().min(want)], want, modality, label)?;
    }
    let n = f.labels.len();
    Ok(EvidenceBundle {
        pair_id: pair_id.to_owned(),
        dim: pools.dim(),
        features: f.features,
        relevance_labels: f.labels,
        permutation: (0..n).collect(),
        modality_tags: f.tags,
        padded_flags: f.padded,
        source_ids: f.ids,
    })
}

fn check_depth(ranked: &RankedEvidence, negatives: &NegativeAssignment, m: usize, k: usize) -> Result<()> {
    if m + k == 0 {
        bail!(Config, "bundle needs M + K >= 1");
    }
    if ranked.pair_id != negatives.pair_id {
        bail!(Data, "ranked evidence for '{}' paired with negatives for '{}'", ranked.pair_id, negatives.pair_id);
    }
    Ok(())
}

/// Builds `[T+, I+, T-, I-]` without shuffling (identity permutation).
/// Shortfalls are padded from the dataset-wide pools using `rng`.
pub fn assemble_unshuffled(
    ranked: &RankedEvidence,
    negatives: &NegativeAssignment,
    m: usize,
    k: usize,
    pools: &EmbeddingSet,
    rng: &mut ChaCha8Rng,
) -> Result<EvidenceBundle> {
    check_depth(ranked, negatives, m, k)?;
    build(
        &ranked.pair_id,
        &[
            (&ranked.ranked_text_ids, m, Modality::Text, 1),
            (&ranked.ranked_image_ids, k, Modality::Image, 1),
            (&negatives.negative_text_ids, m, Modality::Text, 0),
            (&negatives.negative_image_ids, k, Modality::Image, 0),
        ],
        pools,
        rng,
    )
}

/// Assembles the `2(M+K)`-slot bundle and shuffles it with a uniform
/// permutation drawn from `seed`.
pub fn assemble_bundle(
    ranked: &RankedEvidence,
    negatives: &NegativeAssignment,
    m: usize,
    k: usize,
    seed: u64,
    pools: &EmbeddingSet,
) -> Result<EvidenceBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bundle = assemble_unshuffled(ranked, negatives, m, k, pools, &mut rng)?;
    let mut perm: Vec<usize> = (0..bundle.len()).collect();
    perm.shuffle(&mut rng);
    bundle.permuted(&perm)
}

/// Inference-time bundle with the top `m` texts and `k` images only and no
/// injected negatives. All slots are labelled relevant.
pub fn assemble_retrieved_only(
    ranked: &RankedEvidence,
    m: usize,
    k: usize,
    seed: u64,
    pools: &EmbeddingSet,
) -> Result<EvidenceBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bundle = build(
        &ranked.pair_id,
        &[(&ranked.ranked_text_ids, m, Modality::Text, 1), (&ranked.ranked_image_ids, k, Modality::Image, 1)],
        pools,
        &mut rng,
    )?;
    let mut perm: Vec<usize> = (0..bundle.len()).collect();
    perm.shuffle(&mut rng);
    bundle.permuted(&perm)
}
