use serde::{Deserialize, Serialize};

use super::data::Example;
use crate::error::{bail, Result};
use crate::exec::{try_map_slice, Parallelism};
use crate::model::{Mode, RedDotModel};
use crate::store::PairCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    All,
    /// Truthful and out-of-context items only.
    TrueVsOoc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub pair_id: String,
    pub verdict_logit: f64,
    pub predicted: u8,
    pub label: u8,
    pub relevance_scores: Vec<f64>,
}

fn select(examples: &[Example], mode: EvalMode) -> Result<Vec<&Example>> {
    let kept: Vec<&Example> = match mode {
        EvalMode::All => examples.iter().collect(),
        EvalMode::TrueVsOoc => {
            if let Some(e) = examples.iter().find(|e| e.category.is_none()) {
                bail!(Data, "pair '{}' has no category for the true-vs-out-of-context metric", e.pair_id);
            }
            examples
                .iter()
                .filter(|e| matches!(e.category, Some(PairCategory::Truthful | PairCategory::OutOfContext)))
                .collect()
        }
    };
    if kept.is_empty() {
        bail!(Config, "no examples to evaluate");
    }
    Ok(kept)
}

/// Inference-mode predictions, thresholding the verdict probability at 0.5.
pub fn predict(model: &RedDotModel, examples: &[Example], mode: EvalMode, par: Parallelism) -> Result<Vec<Prediction>> {
    let kept = select(examples, mode)?;
    try_map_slice(par, &kept, |e| {
        let claim = model.claim_tokens(&e.image, &e.text)?;
        let out = model.forward(&claim, &e.bundle, Mode::Infer, None)?;
        if !out.verdict_logit.is_finite() {
            return Err(crate::Error::Numerical(format!("non-finite verdict for '{}'", e.pair_id)));
        }
        Ok(Prediction {
            pair_id: e.pair_id.clone(),
            verdict_logit: out.verdict_logit,
            predicted: u8::from(1.0 / (1.0 + (-out.verdict_logit).exp()) > 0.5),
            label: e.verdict,
            relevance_scores: out.relevance_logits,
        })
    })
}

/// Fraction of correctly classified pairs.
pub fn evaluate_accuracy(model: &RedDotModel, examples: &[Example], mode: EvalMode, par: Parallelism) -> Result<f64> {
    let preds = predict(model, examples, mode, par)?;
    Ok(preds.iter().filter(|p| p.predicted == p.label).count() as f64 / preds.len() as f64)
}

/// Fraction of evidence slots whose predicted relevance matches the label.
pub fn relevance_accuracy(model: &RedDotModel, examples: &[Example], par: Parallelism) -> Result<f64> {
    if !model.config.variant.uses_red() {
        bail!(State, "variant {} does not predict relevance", model.config.variant);
    }
    let preds = predict(model, examples, EvalMode::All, par)?;
    let thr = model.config.inference_mask_threshold;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, e) in preds.iter().zip(examples) {
        for (&s, &y) in p.relevance_scores.iter().zip(&e.bundle.relevance_labels) {
            hit += usize::from(u8::from(1.0 / (1.0 + (-s).exp()) > thr) == y);
            total += 1;
        }
    }
    if total == 0 {
        bail!(Config, "no evidence slots to evaluate");
    }
    Ok(hit as f64 / total as f64)
}
