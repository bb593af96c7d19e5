use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::eval::{evaluate_accuracy, EvalMode};
use super::stats::mean_std;
use super::train::{train, EpochRecord, TrainConfig};
use crate::error::{bail, Result};
use crate::exec::{derive_seed, derive_seed_indexed, Parallelism};
use crate::model::{ModelConfig, RedDotModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    IdV,
    OodCv,
}

/// One training run: its best checkpoint and per-epoch history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    /// Indices into the external set used for checkpoint selection.
    pub validation_items: Vec<usize>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochRecord>,
    /// Set by the caller once the checkpoint has been written.
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMetrics {
    /// ID-V: in-distribution test accuracy.
    pub test_accuracy: Option<f64>,
    /// ID-V: accuracy on the external set, if one was given.
    pub external_accuracy: Option<f64>,
    /// OOD-CV: mean and population std of per-fold test accuracies.
    pub fold_mean: Option<f64>,
    pub fold_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub kind: ProtocolKind,
    pub config_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub external_mode: EvalMode,
    pub folds: Vec<FoldRecord>,
    pub metrics: ProtocolMetrics,
}

/// A run record plus the best model of each fold, in fold order.
pub struct ProtocolOutcome {
    pub run: ProtocolRun,
    pub models: Vec<RedDotModel>,
}

/// Stable short hash of the model and training configuration.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(&(model, train))?;
    Ok(format!("{:016x}", derive_seed(0, &json)))
}

fn check_disjoint(sets: &[(&str, &[Example])]) -> Result<()> {
    let mut seen: HashSet<&str> = HashSet::new();
    for (name, set) in sets {
        let mut local = HashSet::new();
        for e in set.iter() {
            if !local.insert(e.pair_id.as_str()) {
                continue;
            }
            if !seen.insert(e.pair_id.as_str()) {
                bail!(Data, "pair '{}' of the {} split also appears in another split", e.pair_id, name);
            }
        }
    }
    Ok(())
}

/// Train once, checkpoint on in-distribution validation accuracy, then test
/// in-distribution and optionally on an external set.
pub fn run_id_v(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    test_set: &[Example],
    external: &[Example],
    external_mode: EvalMode,
    par: Parallelism,
) -> Result<ProtocolOutcome> {
    check_disjoint(&[("train", train_set), ("val", val_set), ("test", test_set)])?;
    let model = RedDotModel::new(model_config.clone(), train_config.seed)?;
    let outcome = train(model, train_set, val_set, train_config, EvalMode::All, par)?;
    let test_accuracy = evaluate_accuracy(&outcome.best, test_set, EvalMode::All, par)?;
    let external_accuracy =
        if external.is_empty() { None } else { Some(evaluate_accuracy(&outcome.best, external, external_mode, par)?) };
    let run = ProtocolRun {
        kind: ProtocolKind::IdV,
        config_hash: config_hash(model_config, train_config)?,
        model: model_config.clone(),
        train: train_config.clone(),
        external_mode,
        folds: vec![FoldRecord {
            fold: 0,
            validation_items: Vec::new(),
            best_epoch: outcome.best_epoch,
            best_val_accuracy: outcome.best_val_accuracy,
            test_accuracy,
            history: outcome.history,
            checkpoint: None,
        }],
        metrics: ProtocolMetrics { test_accuracy: Some(test_accuracy), external_accuracy, fold_mean: None, fold_std: None },
    };
    Ok(ProtocolOutcome { run, models: vec![outcome.best] })
}

/// Label-stratified assignment of `labels.len()` items to `k` folds.
///
/// Items of each class are shuffled and dealt round-robin; the dealing
/// position carries over between classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        bail!(Config, "cross-validation needs at least 2 folds, got {}", k);
    }
    if labels.len() < k {
        bail!(Config, "{} items cannot fill {} folds", labels.len(), k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Out-of-distribution cross-validation: for each fold of the external set,
/// train on the full training set, checkpoint on that fold and test on the
/// remaining folds.
pub fn run_ood_cv(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[Example],
    external: &[Example],
    k: usize,
    external_mode: EvalMode,
    par: Parallelism,
) -> Result<ProtocolOutcome> {
    check_disjoint(&[("train", train_set), ("external", external)])?;
    let labels: Vec<u8> = external.iter().map(|e| e.verdict).collect();
    let folds = stratified_folds(&labels, k, train_config.seed)?;
    let mut records = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for (f, val_idx) in folds.iter().enumerate() {
        let val: Vec<Example> = val_idx.iter().map(|&i| external[i].clone()).collect();
        let test: Vec<Example> =
            folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, idx)| idx.iter().map(|&i| external[i].clone())).collect();
        let fold_train = TrainConfig { seed: derive_seed_indexed(train_config.seed, f as u64), ..train_config.clone() };
        let model = RedDotModel::new(model_config.clone(), train_config.seed)?;
        let outcome = train(model, train_set, &val, &fold_train, external_mode, par)?;
        let test_accuracy = evaluate_accuracy(&outcome.best, &test, external_mode, par)?;
        records.push(FoldRecord {
            fold: f,
            validation_items: val_idx.clone(),
            best_epoch: outcome.best_epoch,
            best_val_accuracy: outcome.best_val_accuracy,
            test_accuracy,
            history: outcome.history,
            checkpoint: None,
        });
        models.push(outcome.best);
    }
    let accs: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let run = ProtocolRun {
        kind: ProtocolKind::OodCv,
        config_hash: config_hash(model_config, train_config)?,
        model: model_config.clone(),
        train: train_config.clone(),
        external_mode,
        folds: records,
        metrics: ProtocolMetrics { test_accuracy: None, external_accuracy: None, fold_mean: Some(mean), fold_std: Some(std) },
    };
    Ok(ProtocolOutcome { run, models })
}
