use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::eval::{evaluate_accuracy, EvalMode};
use crate::autodiff::{Adam, Gradients};
use crate::error::{bail, Error, Result};
use crate::exec::{derive_seed_indexed, map_slice, Parallelism};
use crate::model::RedDotModel;

/// Examples per gradient-accumulation chunk. Chunks are the unit of
/// parallel work and are always summed in order, so results do not depend on
/// the thread count.
const CHUNK: usize = 8;

fn default_lr() -> f64 {
    1e-4
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_batch() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: default_lr(), max_epochs: default_max_epochs(), patience: default_patience(), batch_size: default_batch(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            bail!(Config, "max_epochs, patience and batch_size must be positive");
        }
        if self.patience > self.max_epochs {
            bail!(Config, "patience {} exceeds max_epochs {}", self.patience, self.max_epochs);
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Checkpoint-on-strict-improvement bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    /// Records an epoch's validation accuracy. Returns whether it is a new
    /// best (strict improvement).
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        match self.best {
            Some((_, b)) if accuracy <= b => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, accuracy));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch, never simply the last.
    pub best: RedDotModel,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradients(model: &RedDotModel, batch: &[&Example], seeds: &[u64], mode: Parallelism) -> Result<(f64, Gradients<f32>)> {
    let chunks: Vec<(&[&Example], &[u64])> = batch.chunks(CHUNK).zip(seeds.chunks(CHUNK)).collect();
    let partial = map_slice(mode, &chunks, |(examples, seeds)| -> Result<(f64, Gradients<f32>)> {
        let mut total = model.params.zero_gradients();
        let mut loss = 0.0;
        for (ex, &seed) in examples.iter().zip(seeds.iter()) {
            let claim = model.claim_tokens(&ex.image, &ex.text)?;
            let (l, g) = model.example_gradients(&claim, &ex.bundle, ex.verdict, Some(seed))?;
            loss += l;
            total.add_assign(&g);
        }
        Ok((loss, total))
    });
    let mut grads = model.params.zero_gradients();
    let mut loss = 0.0;
    for p in partial {
        let (l, g) = p?;
        loss += l;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n as f32);
    if !loss.is_finite() || grads.0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loss or gradient".into()));
    }
    Ok((loss / n, grads))
}

/// Adam training with per-epoch validation and early stopping.
pub fn train(
    model: RedDotModel,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    val_mode: EvalMode,
    mode: Parallelism,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        bail!(Config, "training set is empty");
    }
    if val_set.is_empty() {
        bail!(Config, "validation set is empty");
    }
    let adam = Adam::new(config.lr);
    let mut model = model;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        let epoch_seed = derive_seed_indexed(config.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch_seed = derive_seed_indexed(epoch_seed, b as u64);
            let seeds: Vec<u64> = (0..batch.len()).map(|i| derive_seed_indexed(batch_seed, i as u64)).collect();
            let (loss, grads) = batch_gradients(&model, &batch, &seeds, mode)?;
            loss_sum += loss * batch.len() as f64;
            model.params.set_gradients(grads)?;
            adam.step(&mut model.params)?;
        }
        let val_accuracy = evaluate_accuracy(&model, val_set, val_mode, mode)?;
        history.push(EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_accuracy });
        if stopper.observe(epoch, val_accuracy) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    let (best_epoch, best_val_accuracy) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, best_val_accuracy, history })
}
