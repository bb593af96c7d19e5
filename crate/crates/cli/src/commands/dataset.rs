use std::collections::BTreeMap;
use std::fs;

use reddot_core::store::{
    generate_splits, read_manifest, Dataset, DatasetManifest, DatasetMeta, EmbeddingSet, PairCategory, Split, SynthConfig,
};
use reddot_core::{Error, Result};
use serde::Serialize;

use crate::args::{IngestArgs, SynthArgs, ValidateArgs};
use crate::output::print_json;

#[derive(Serialize)]
struct DatasetSummary<'a> {
    out: String,
    dim: usize,
    provenance: &'a str,
    splits: BTreeMap<Split, usize>,
}

fn summary(dataset: &Dataset, out: &std::path::Path) -> Result<()> {
    print_json(&DatasetSummary {
        out: out.display().to_string(),
        dim: dataset.meta.dim,
        provenance: &dataset.meta.provenance,
        splits: dataset.manifests.iter().map(|(s, m)| (*s, m.len())).collect(),
    })
}

/// Writes `dataset`, dropping manifests of splits it does not contain.
fn save(dataset: &Dataset, out: &std::path::Path) -> Result<()> {
    for split in Split::ALL {
        let path = out.join(format!("{}.jsonl", split));
        if !dataset.manifests.contains_key(&split) && path.exists() {
            fs::remove_file(path)?;
        }
    }
    dataset.save(out)
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let matrices = EmbeddingSet::load(&args.source)?;
    let dim = matrices.dim();
    let mut manifests = BTreeMap::new();
    for split in Split::ALL {
        let path = args.source.join(format!("{}.jsonl", split));
        if path.exists() {
            let pairs = read_manifest(&path)?;
            manifests.insert(split, DatasetManifest { split, pairs, dim, provenance: args.provenance.clone() });
        }
    }
    if manifests.is_empty() {
        return Err(Error::Data(format!("no <split>.jsonl manifests in {}", args.source.display())));
    }
    let categories_path = args.source.join("categories.json");
    let categories: BTreeMap<String, PairCategory> = if categories_path.exists() {
        serde_json::from_str(&fs::read_to_string(&categories_path)?)
            .map_err(|e| Error::Format(format!("{}: {}", categories_path.display(), e)))?
    } else {
        BTreeMap::new()
    };
    let dataset = Dataset { meta: DatasetMeta { dim, provenance: args.provenance, categories }, manifests, matrices };
    let report = dataset.validate();
    if !report.is_usable() {
        for f in &report.findings {
            eprintln!("  {}", f);
        }
        return Err(Error::Data(format!("refusing to ingest: {} findings", report.findings.len())));
    }
    for (pair, id) in &report.duplicate_pool_entries {
        eprintln!("warning: pair '{}' lists evidence '{}' more than once", pair, id);
    }
    save(&dataset, &args.out)?;
    summary(&dataset, &args.out)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    usable: bool,
    dim: usize,
    splits: BTreeMap<Split, usize>,
    findings: &'a [reddot_core::store::Finding],
    duplicate_pool_entries: &'a [(String, String)],
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data)?;
    let report = dataset.validate();
    print_json(&ValidateOutput {
        usable: report.is_usable(),
        dim: dataset.meta.dim,
        splits: dataset.manifests.iter().map(|(s, m)| (*s, m.len())).collect(),
        findings: &report.findings,
        duplicate_pool_entries: &report.duplicate_pool_entries,
    })?;
    if report.is_usable() {
        Ok(())
    } else {
        for f in &report.findings {
            eprintln!("  {}", f);
        }
        Err(Error::Data(format!("{} findings", report.findings.len())))
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let base = SynthConfig {
        split: Split::Train,
        pairs: args.pairs,
        dim: args.dim,
        m: args.m,
        k: args.k,
        distractors: args.distractors,
        sigma: args.sigma,
        truthful_fraction: args.truthful_fraction,
    };
    let quarter = (args.pairs / 4).max(1);
    let mut configs = vec![
        base.clone(),
        SynthConfig { split: Split::Val, pairs: args.val_pairs.unwrap_or(quarter), ..base.clone() },
        SynthConfig { split: Split::Test, pairs: args.test_pairs.unwrap_or(quarter), ..base.clone() },
    ];
    if args.external_pairs > 0 {
        configs.push(SynthConfig { split: Split::External, pairs: args.external_pairs, ..base });
    }
    let dataset = generate_splits(&configs, args.seed)?;
    save(&dataset, &args.out)?;
    summary(&dataset, &args.out)
}
