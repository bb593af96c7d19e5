//! Ranking, mining and bundling with resumable on-disk artifacts.
//!
//! Each stage writes `<stage>_<split>` into the run directory. A later
//! invocation reuses an artifact when it parses, covers the split's pairs
//! in manifest order and was built with the same parameters; `--force`
//! recomputes every stage along the way.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use reddot_core::exec::{derive_seed, try_map_slice};
use reddot_core::protocol::{build_bundles, BundleSpec};
use reddot_core::retrieval::{
    assemble_bundle, assemble_retrieved_only, mine_all, rank_all, read_bundles, write_bundles, EvidenceBundle,
    NegativeAssignment, RankedEvidence,
};
use reddot_core::store::{Dataset, Split};
use reddot_core::Result;
use serde::{Deserialize, Serialize};

use super::{load_usable, PAR};
use crate::args::{BundleArgs, MineArgs, RankArgs};
use crate::lock::RunLock;
use crate::output::{print_json, write_json};

/// Where a stage's result came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Computed,
    Reused,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NegativesFile {
    m: usize,
    k: usize,
    assignments: Vec<NegativeAssignment>,
}

fn same_pairs<'a>(dataset: &Dataset, split: Split, ids: impl ExactSizeIterator<Item = &'a str>) -> bool {
    let Some(manifest) = dataset.split(split) else { return false };
    ids.len() == manifest.len() && ids.zip(&manifest.pairs).all(|(a, p)| a == p.pair_id)
}

fn ranked_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("ranked_{}.json", split))
}

fn negatives_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("negatives_{}.json", split))
}

pub fn bundle_stem(dir: &Path, split: Split, retrieved_only: bool) -> PathBuf {
    let kind = if retrieved_only { "retrieved" } else { "bundles" };
    dir.join(format!("{}_{}", kind, split))
}

pub fn ensure_ranked(dataset: &Dataset, split: Split, dir: &Path, force: bool) -> Result<(Vec<RankedEvidence>, Origin)> {
    let path = ranked_path(dir, split);
    if !force {
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(ranked) = serde_json::from_str::<Vec<RankedEvidence>>(&text) {
                if same_pairs(dataset, split, ranked.iter().map(|r| r.pair_id.as_str())) {
                    return Ok((ranked, Origin::Reused));
                }
            }
        }
    }
    let pairs = &dataset.require_split(split)?.pairs;
    let mut by_id = rank_all(pairs, &dataset.matrices, PAR)?;
    let ranked: Vec<RankedEvidence> = pairs.iter().map(|p| by_id.remove(&p.pair_id).expect("ranked every pair")).collect();
    write_json(&path, &ranked)?;
    Ok((ranked, Origin::Computed))
}

fn by_id(ranked: &[RankedEvidence]) -> HashMap<String, RankedEvidence> {
    ranked.iter().map(|r| (r.pair_id.clone(), r.clone())).collect()
}

pub fn ensure_negatives(
    dataset: &Dataset,
    split: Split,
    dir: &Path,
    m: usize,
    k: usize,
    force: bool,
) -> Result<(Vec<RankedEvidence>, Vec<NegativeAssignment>, Origin)> {
    let (ranked, ranked_origin) = ensure_ranked(dataset, split, dir, force)?;
    let path = negatives_path(dir, split);
    if !force && ranked_origin == Origin::Reused {
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(file) = serde_json::from_str::<NegativesFile>(&text) {
                if file.m == m && file.k == k && same_pairs(dataset, split, file.assignments.iter().map(|a| a.pair_id.as_str())) {
                    return Ok((ranked, file.assignments, Origin::Reused));
                }
            }
        }
    }
    let pairs = &dataset.require_split(split)?.pairs;
    let assignments = mine_all(pairs, &dataset.matrices, &by_id(&ranked), m, k, PAR)?;
    let file = NegativesFile { m, k, assignments };
    write_json(&path, &file)?;
    Ok((ranked, file.assignments, Origin::Computed))
}

/// Bundles for `split`, identical to [`build_bundles`] with the same spec.
pub fn ensure_bundles(
    dataset: &Dataset,
    split: Split,
    dir: &Path,
    spec: &BundleSpec,
    force: bool,
) -> Result<(Vec<EvidenceBundle>, Origin)> {
    let stem = bundle_stem(dir, split, spec.retrieved_only);
    if !force {
        if let Ok((file, bundles)) = read_bundles(&stem) {
            if file.m == spec.m
                && file.k == spec.k
                && file.seed == spec.seed
                && file.dim == dataset.meta.dim
                && same_pairs(dataset, split, bundles.iter().map(|b| b.pair_id.as_str()))
            {
                return Ok((bundles, Origin::Reused));
            }
        }
    }
    let sets = &dataset.matrices;
    let bundles = if spec.m + spec.k == 0 {
        build_bundles(dataset, split, spec, PAR)?
    } else if spec.retrieved_only {
        let (ranked, _) = ensure_ranked(dataset, split, dir, force)?;
        try_map_slice(PAR, &ranked, |r| {
            assemble_retrieved_only(r, spec.m, spec.k, derive_seed(spec.seed, &r.pair_id), sets)
        })?
    } else {
        let (ranked, negatives, _) = ensure_negatives(dataset, split, dir, spec.m, spec.k, force)?;
        let ranked = by_id(&ranked);
        try_map_slice(PAR, &negatives, |n| {
            assemble_bundle(&ranked[&n.pair_id], n, spec.m, spec.k, derive_seed(spec.seed, &n.pair_id), sets)
        })?
    };
    write_bundles(&bundles, spec.m, spec.k, spec.seed, dataset.meta.dim, &stem)?;
    Ok((bundles, Origin::Computed))
}

#[derive(Serialize)]
struct StageOutput {
    stage: &'static str,
    split: Split,
    pairs: usize,
    artifact: String,
    origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slots_per_pair: Option<usize>,
}

pub fn rank(args: RankArgs) -> Result<()> {
    let a = args.stage;
    let _lock = RunLock::acquire(&a.out)?;
    let dataset = load_usable(&a.data)?;
    let split = a.split.into();
    let (ranked, origin) = ensure_ranked(&dataset, split, &a.out, a.force)?;
    print_json(&StageOutput {
        stage: "rank",
        split,
        pairs: ranked.len(),
        artifact: ranked_path(&a.out, split).display().to_string(),
        origin,
        m: None,
        k: None,
        slots_per_pair: None,
    })
}

pub fn mine(args: MineArgs) -> Result<()> {
    let a = args.stage;
    let _lock = RunLock::acquire(&a.out)?;
    let dataset = load_usable(&a.data)?;
    let split = a.split.into();
    let (_, negatives, origin) = ensure_negatives(&dataset, split, &a.out, args.m, args.k, a.force)?;
    print_json(&StageOutput {
        stage: "mine",
        split,
        pairs: negatives.len(),
        artifact: negatives_path(&a.out, split).display().to_string(),
        origin,
        m: Some(args.m),
        k: Some(args.k),
        slots_per_pair: None,
    })
}

pub fn bundle(args: BundleArgs) -> Result<()> {
    let a = args.stage;
    let _lock = RunLock::acquire(&a.out)?;
    let dataset = load_usable(&a.data)?;
    let split = a.split.into();
    let spec = BundleSpec { m: args.m, k: args.k, seed: args.seed, retrieved_only: args.retrieved_only };
    let (bundles, origin) = ensure_bundles(&dataset, split, &a.out, &spec, a.force)?;
    let slots = bundles.first().map(|b| b.len()).filter(|&n| bundles.iter().all(|b| b.len() == n));
    print_json(&StageOutput {
        stage: "bundle",
        split,
        pairs: bundles.len(),
        artifact: bundle_stem(&a.out, split, spec.retrieved_only).with_extension("json").display().to_string(),
        origin,
        m: Some(args.m),
        k: Some(args.k),
        slots_per_pair: slots,
    })
}
