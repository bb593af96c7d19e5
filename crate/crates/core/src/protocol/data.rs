use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exec::{derive_seed, try_map_slice, Parallelism};
use crate::retrieval::{assemble_bundle, assemble_retrieved_only, mine_all, rank_all, EvidenceBundle};
use crate::store::{Dataset, PairCategory, Split};

/// One claim with its evidence bundle and labels, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub pair_id: String,
    pub image: Vec<f32>,
    pub text: Vec<f32>,
    pub bundle: EvidenceBundle,
    pub verdict: u8,
    pub category: Option<PairCategory>,
}

/// How bundles are assembled for a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    /// Top-ranked evidence only, without mined negatives.
    #[serde(default)]
    pub retrieved_only: bool,
}

fn empty_bundle(pair_id: &str, dim: usize) -> EvidenceBundle {
    EvidenceBundle {
        pair_id: pair_id.to_owned(),
        dim,
        features: Vec::new(),
        relevance_labels: Vec::new(),
        permutation: Vec::new(),
        modality_tags: Vec::new(),
        padded_flags: Vec::new(),
        source_ids: Vec::new(),
    }
}

/// Ranks, mines and bundles every pair of `split`, in manifest order.
/// With `m = k = 0` every bundle is empty (claim-only models).
pub fn build_bundles(dataset: &Dataset, split: Split, spec: &BundleSpec, mode: Parallelism) -> Result<Vec<EvidenceBundle>> {
    let manifest = dataset.require_split(split)?;
    let report = dataset.validate();
    if let Some(f) = report.findings.first() {
        bail!(Data, "dataset is not usable: {} ({} findings)", f, report.findings.len());
    }
    let pairs = &manifest.pairs;
    let sets = &dataset.matrices;
    if spec.m + spec.k == 0 {
        return Ok(pairs.iter().map(|p| empty_bundle(&p.pair_id, dataset.meta.dim)).collect());
    }
    let ranked = rank_all(pairs, sets, mode)?;
    if spec.retrieved_only {
        try_map_slice(mode, pairs, |p| {
            assemble_retrieved_only(&ranked[&p.pair_id], spec.m, spec.k, derive_seed(spec.seed, &p.pair_id), sets)
        })
    } else {
        let negatives = mine_all(pairs, sets, &ranked, spec.m, spec.k, mode)?;
        try_map_slice(mode, &negatives, |n| {
            assemble_bundle(&ranked[&n.pair_id], n, spec.m, spec.k, derive_seed(spec.seed, &n.pair_id), sets)
        })
    }
}

/// Pairs each bundle with its claim vectors and labels.
pub fn attach_claims(dataset: &Dataset, split: Split, bundles: Vec<EvidenceBundle>) -> Result<Vec<Example>> {
    let manifest = dataset.require_split(split)?;
    if bundles.len() != manifest.pairs.len() {
        bail!(Data, "{} bundles for {} pairs in the {} split", bundles.len(), manifest.pairs.len(), split);
    }
    let sets = &dataset.matrices;
    manifest
        .pairs
        .iter()
        .zip(bundles)
        .map(|(p, bundle)| {
            if bundle.pair_id != p.pair_id {
                bail!(Data, "bundle for '{}' found where '{}' was expected", bundle.pair_id, p.pair_id);
            }
            Ok(Example {
                pair_id: p.pair_id.clone(),
                image: sets.image_claim.require(&p.image_id)?.to_vec(),
                text: sets.text_claim.require(&p.text_id)?.to_vec(),
                bundle,
                verdict: p.verdict.as_label(),
                category: dataset.meta.categories.get(&p.pair_id).copied(),
            })
        })
        .collect()
}

/// [`build_bundles`] followed by [`attach_claims`].
pub fn build_examples(dataset: &Dataset, split: Split, spec: &BundleSpec, mode: Parallelism) -> Result<Vec<Example>> {
    let bundles = build_bundles(dataset, split, spec, mode)?;
    attach_claims(dataset, split, bundles)
}
