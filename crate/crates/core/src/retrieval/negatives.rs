use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::index::NeighborIndex;
use super::rank::RankedEvidence;
use crate::error::{bail, Error, Result};
use crate::exec::{map_range, Parallelism};
use crate::store::{EmbeddingSet, VerificationPair};

/// Hard-negative evidence borrowed from the most similar other claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativeAssignment {
    pub pair_id: String,
    /// Pair whose claim text is closest; its ranked images become negatives.
    pub donor_pair_id_for_images: String,
    /// Pair whose claim image is closest; its ranked texts become negatives.
    pub donor_pair_id_for_texts: String,
    pub negative_text_ids: Vec<String>,
    pub negative_image_ids: Vec<String>,
}

/// Claim-text and claim-image indices over a pair collection. Row `i` of
/// each index is pair `i`.
#[derive(Debug, Clone)]
pub struct ClaimIndices {
    pub text: NeighborIndex,
    pub image: NeighborIndex,
}

impl ClaimIndices {
    pub fn build(pairs: &[VerificationPair], matrices: &EmbeddingSet) -> Result<Self> {
        let dim = matrices.dim();
        let ids: Vec<String> = pairs.iter().map(|p| p.pair_id.clone()).collect();
        let mut text = Vec::with_capacity(pairs.len() * dim);
        let mut image = Vec::with_capacity(pairs.len() * dim);
        for p in pairs {
            text.extend_from_slice(matrices.text_claim.require(&p.text_id)?);
            image.extend_from_slice(matrices.image_claim.require(&p.image_id)?);
        }
        Ok(ClaimIndices {
            text: NeighborIndex::from_rows(dim, ids.clone(), text)?,
            image: NeighborIndex::from_rows(dim, ids, image)?,
        })
    }
}

fn donor(index: &NeighborIndex, i: usize) -> Result<usize> {
    index
        .query_excluding(index.row(i), 1, i)?
        .first()
        .map(|n| n.row)
        .ok_or_else(|| Error::Config("hard-negative mining needs at least two pairs".into()))
}

/// Mines negatives for the pair at position `i` of `pairs`.
///
/// Text-text similarity picks the donor of image negatives and image-image
/// similarity the donor of text negatives, always excluding the pair itself.
/// The donor's ranked evidence is taken in rank order, up to `k` images and
/// `m` texts.
pub fn mine_hard_negatives(
    i: usize,
    pairs: &[VerificationPair],
    indices: &ClaimIndices,
    ranked: &HashMap<String, RankedEvidence>,
    m: usize,
    k: usize,
) -> Result<NegativeAssignment> {
    if pairs.len() < 2 {
        bail!(Config, "hard-negative mining needs at least two pairs, got {}", pairs.len());
    }
    if indices.text.len() != pairs.len() || indices.image.len() != pairs.len() {
        bail!(Shape, "claim indices cover {} pairs, collection has {}", indices.text.len(), pairs.len());
    }
    let lookup = |j: usize| {
        ranked
            .get(&pairs[j].pair_id)
            .ok_or_else(|| Error::Data(format!("no ranked evidence for pair '{}'", pairs[j].pair_id)))
    };
    let image_donor = donor(&indices.text, i)?;
    let text_donor = donor(&indices.image, i)?;
    let negative_image_ids = lookup(image_donor)?.ranked_image_ids.iter().take(k).cloned().collect();
    let negative_text_ids = lookup(text_donor)?.ranked_text_ids.iter().take(m).cloned().collect();
    Ok(NegativeAssignment {
        pair_id: pairs[i].pair_id.clone(),
        donor_pair_id_for_images: pairs[image_donor].pair_id.clone(),
        donor_pair_id_for_texts: pairs[text_donor].pair_id.clone(),
        negative_text_ids,
        negative_image_ids,
    })
}

/// Mines negatives for every pair of a collection, in order.
pub fn mine_all(
    pairs: &[VerificationPair],
    matrices: &EmbeddingSet,
    ranked: &HashMap<String, RankedEvidence>,
    m: usize,
    k: usize,
    mode: Parallelism,
) -> Result<Vec<NegativeAssignment>> {
    if pairs.len() < 2 {
        bail!(Config, "hard-negative mining needs at least two pairs, got {}", pairs.len());
    }
    let indices = ClaimIndices::build(pairs, matrices)?;
    map_range(mode, pairs.len(), |i| mine_hard_negatives(i, pairs, &indices, ranked, m, k)).into_iter().collect()
}
