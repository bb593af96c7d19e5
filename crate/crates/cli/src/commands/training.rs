use std::fs;
use std::path::Path;

use reddot_core::autodiff::{load_checkpoint, save_checkpoint};
use reddot_core::model::{ModelConfig, RedDotModel, Variant};
use reddot_core::protocol::{
    attach_claims, build_examples, predict, relevance_accuracy, run_id_v, run_ood_cv, BundleSpec, EvalMode, Example,
    Prediction, ProtocolKind, ProtocolMetrics, ProtocolRun,
};
use reddot_core::store::{Dataset, Split};
use reddot_core::{Error, Result};
use serde::Serialize;

use super::stages::ensure_bundles;
use super::{load_usable, PAR};
use crate::args::{EvalArgs, EvalModeArg, ProtocolArg, TrainArgs};
use crate::config::{resolve, RunConfig};
use crate::lock::RunLock;
use crate::output::{percent, print_json, table, write_json};

impl From<EvalModeArg> for EvalMode {
    fn from(m: EvalModeArg) -> EvalMode {
        match m {
            EvalModeArg::All => EvalMode::All,
            EvalModeArg::TrueVsOoc => EvalMode::TrueVsOoc,
        }
    }
}

fn examples(dataset: &Dataset, split: Split, dir: &Path, spec: &BundleSpec, force: bool) -> Result<Vec<Example>> {
    let (bundles, _) = ensure_bundles(dataset, split, dir, spec, force)?;
    attach_claims(dataset, split, bundles)
}

fn checkpoint_name(fold: usize) -> String {
    format!("checkpoints/fold{}.ckpt", fold)
}

/// A finished run in `dir` that was produced by exactly `config`.
fn finished_run(dir: &Path, config: &RunConfig) -> Option<ProtocolRun> {
    let previous: RunConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).ok()?).ok()?;
    if &previous != config {
        return None;
    }
    let run: ProtocolRun = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).ok()?).ok()?;
    let complete = run.folds.iter().all(|f| f.checkpoint.as_ref().is_some_and(|c| dir.join(c).is_file()));
    complete.then_some(run)
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    best_epoch: usize,
    best_val_accuracy: f64,
    test_accuracy: f64,
    checkpoint: Option<&'a str>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    run_dir: String,
    protocol: ProtocolKind,
    variant: Variant,
    m: usize,
    k: usize,
    config_hash: &'a str,
    resumed: bool,
    metrics: &'a ProtocolMetrics,
    folds: Vec<FoldSummary<'a>>,
}

fn print_train(dir: &Path, run: &ProtocolRun, resumed: bool, as_table: bool) -> Result<()> {
    if as_table {
        let accuracy = match run.kind {
            ProtocolKind::IdV => {
                let mut s = run.metrics.test_accuracy.map(percent).unwrap_or_default();
                if let Some(e) = run.metrics.external_accuracy {
                    s.push_str(&format!(" / external {}", percent(e)));
                }
                s
            }
            ProtocolKind::OodCv => format!(
                "{} ({})",
                percent(run.metrics.fold_mean.unwrap_or(f64::NAN)),
                percent(run.metrics.fold_std.unwrap_or(f64::NAN))
            ),
        };
        let protocol = match run.kind {
            ProtocolKind::IdV => "idv",
            ProtocolKind::OodCv => "oodcv",
        };
        let row = vec![
            run.model.variant.to_string(),
            run.model.fusion.to_string(),
            run.model.m.to_string(),
            run.model.k.to_string(),
            protocol.to_owned(),
            accuracy,
        ];
        println!("{}", table(&["variant", "fusion", "M", "K", "protocol", "accuracy"], &[row]));
        return Ok(());
    }
    print_json(&TrainSummary {
        run_dir: dir.display().to_string(),
        protocol: run.kind,
        variant: run.model.variant,
        m: run.model.m,
        k: run.model.k,
        config_hash: &run.config_hash,
        resumed,
        metrics: &run.metrics,
        folds: run
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                best_epoch: f.best_epoch,
                best_val_accuracy: f.best_val_accuracy,
                test_accuracy: f.test_accuracy,
                checkpoint: f.checkpoint.as_deref(),
            })
            .collect(),
    })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = resolve(&args)?;
    let dir = args.out.as_path();
    let _lock = RunLock::acquire(dir)?;
    let dataset = load_usable(&args.data)?;
    let model_config = config.model_config(dataset.meta.dim)?;
    let train_config = config.train_config()?;

    if !args.force {
        if let Some(run) = finished_run(dir, &config) {
            eprintln!("run in {} is complete for this configuration; use --force to retrain", dir.display());
            return print_train(dir, &run, true, args.table);
        }
    }
    write_json(&dir.join("config.json"), &config)?;
    let _ = fs::remove_file(dir.join("run.json"));

    let spec = BundleSpec { m: config.m, k: config.k, seed: config.seed, retrieved_only: false };
    let external_spec = BundleSpec { retrieved_only: config.protocol.external_retrieved_only, ..spec };
    let train_set = examples(&dataset, Split::Train, dir, &spec, args.force)?;
    let external_mode = config.protocol.external_mode;
    let mut outcome = match config.protocol.kind {
        ProtocolArg::Idv => {
            let val = examples(&dataset, Split::Val, dir, &spec, args.force)?;
            let test = examples(&dataset, Split::Test, dir, &spec, args.force)?;
            let external = if dataset.split(Split::External).is_some() {
                examples(&dataset, Split::External, dir, &external_spec, args.force)?
            } else {
                Vec::new()
            };
            run_id_v(&model_config, &train_config, &train_set, &val, &test, &external, external_mode, PAR)?
        }
        ProtocolArg::Oodcv => {
            let external = examples(&dataset, Split::External, dir, &external_spec, args.force)?;
            run_ood_cv(&model_config, &train_config, &train_set, &external, config.protocol.folds, external_mode, PAR)?
        }
    };
    for (record, model) in outcome.run.folds.iter_mut().zip(&outcome.models) {
        let name = checkpoint_name(record.fold);
        let path = dir.join(&name);
        fs::create_dir_all(path.parent().expect("checkpoint path has a parent"))?;
        save_checkpoint(&model.to_checkpoint()?, &path)?;
        record.checkpoint = Some(name);
    }
    write_json(&dir.join("run.json"), &outcome.run)?;
    print_train(dir, &outcome.run, false, args.table)
}

#[derive(Serialize)]
struct EvalMetrics {
    checkpoint: String,
    variant: Variant,
    split: Split,
    mode: EvalMode,
    retrieved_only: bool,
    pairs: usize,
    accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    relevance_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    #[serde(flatten)]
    metrics: &'a EvalMetrics,
    predictions: &'a [Prediction],
}

pub fn load_model(path: &Path) -> Result<RedDotModel> {
    RedDotModel::from_checkpoint(load_checkpoint(path)?)
}

pub fn bundle_spec(config: &ModelConfig, seed: u64, retrieved_only: bool) -> BundleSpec {
    BundleSpec { m: config.m, k: config.k, seed, retrieved_only }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let dataset = load_usable(&args.data)?;
    if dataset.meta.dim != model.config.dim {
        return Err(Error::Data(format!("dataset dim {} differs from model dim {}", dataset.meta.dim, model.config.dim)));
    }
    let split: Split = args.split.into();
    let spec = bundle_spec(&model.config, args.seed, args.retrieved_only);
    let examples = build_examples(&dataset, split, &spec, PAR)?;
    let mode: EvalMode = args.mode.into();
    let predictions = predict(&model, &examples, mode, PAR)?;
    let correct = predictions.iter().filter(|p| p.predicted == p.label).count();
    let relevance = if model.config.variant.uses_red() && !args.retrieved_only && spec.m + spec.k > 0 {
        Some(relevance_accuracy(&model, &examples, PAR)?)
    } else {
        None
    };
    let metrics = EvalMetrics {
        checkpoint: args.checkpoint.display().to_string(),
        variant: model.config.variant,
        split,
        mode,
        retrieved_only: args.retrieved_only,
        pairs: predictions.len(),
        accuracy: correct as f64 / predictions.len() as f64,
        relevance_accuracy: relevance,
    };
    if let Some(out) = &args.out {
        write_json(out, &EvalFile { metrics: &metrics, predictions: &predictions })?;
    }
    if args.table {
        let mode = match mode {
            EvalMode::All => "all",
            EvalMode::TrueVsOoc => "true_vs_ooc",
        };
        let row = vec![
            metrics.variant.to_string(),
            split.to_string(),
            mode.to_owned(),
            metrics.pairs.to_string(),
            percent(metrics.accuracy),
            metrics.relevance_accuracy.map(percent).unwrap_or_else(|| "-".into()),
        ];
        println!("{}", table(&["variant", "split", "mode", "pairs", "accuracy", "relevance"], &[row]));
        Ok(())
    } else {
        print_json(&metrics)
    }
}
