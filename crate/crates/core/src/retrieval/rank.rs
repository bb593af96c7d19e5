use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::similarity::{cosine_from_parts, dot, norm};
use crate::error::{bail, Result};
use crate::exec::{try_map_slice, Parallelism};
use crate::store::{EmbeddingMatrix, EmbeddingSet, VerificationPair};

/// A pair's candidate evidence sorted by intra-modal similarity to the claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedEvidence {
    pub pair_id: String,
    pub ranked_text_ids: Vec<String>,
    pub ranked_image_ids: Vec<String>,
    pub text_scores: Vec<f64>,
    pub image_scores: Vec<f64>,
}

/// Descending by score, then ascending by original position.
pub(crate) fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn rank_pool(claim: &[f32], pool: &[String], matrix: &EmbeddingMatrix) -> Result<(Vec<String>, Vec<f64>)> {
    let claim_norm = norm(claim);
    let mut scored = Vec::with_capacity(pool.len());
    for (i, id) in pool.iter().enumerate() {
        let row = matrix.require(id)?;
        scored.push((cosine_from_parts(dot(claim, row), claim_norm, norm(row)), i));
    }
    scored.sort_by(|a, b| rank_order(*a, *b));
    Ok(scored.into_iter().map(|(s, i)| (pool[i].clone(), s)).unzip())
}

/// Ranks a pair's text pool against its claim text and its image pool
/// against its claim image. Nothing is dropped; ties keep pool order.
pub fn rank_relevant(pair: &VerificationPair, matrices: &EmbeddingSet) -> Result<RankedEvidence> {
    let text = matrices.text_claim.require(&pair.text_id)?;
    let image = matrices.image_claim.require(&pair.image_id)?;
    if text.iter().chain(image).any(|v| !v.is_finite()) {
        bail!(Data, "non-finite claim embedding for pair '{}'", pair.pair_id);
    }
    let (ranked_text_ids, text_scores) = rank_pool(text, &pair.candidate_text_evidence, &matrices.text_evidence)?;
    let (ranked_image_ids, image_scores) = rank_pool(image, &pair.candidate_image_evidence, &matrices.image_evidence)?;
    Ok(RankedEvidence { pair_id: pair.pair_id.clone(), ranked_text_ids, ranked_image_ids, text_scores, image_scores })
}

/// Ranks every pair, keyed by pair_id.
pub fn rank_all(
    pairs: &[VerificationPair],
    matrices: &EmbeddingSet,
    mode: Parallelism,
) -> Result<HashMap<String, RankedEvidence>> {
    let ranked = try_map_slice(mode, pairs, |p| rank_relevant(p, matrices))?;
    Ok(ranked.into_iter().map(|r| (r.pair_id.clone(), r)).collect())
}
