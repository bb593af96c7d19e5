use serde::Serialize;

use super::data::Example;
use crate::error::{bail, Result};
use crate::model::{Mode, RedDotModel};
use crate::retrieval::Modality;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotReport {
    pub slot: usize,
    /// `T^e+`, `I^e-` and so on, from the bundle metadata.
    pub tag: String,
    pub source_id: String,
    /// Raw relevance score (head logit or CLS attention score).
    pub score: f64,
    pub probability: f64,
    pub predicted_relevant: u8,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionReport {
    pub pair_id: String,
    pub variant: String,
    pub verdict_probability: f64,
    pub slots: Vec<SlotReport>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-slot relevance scores of an inference pass.
pub fn attention_report(model: &RedDotModel, example: &Example) -> Result<AttentionReport> {
    if !model.config.variant.uses_red() {
        bail!(State, "variant {} produces no relevance scores", model.config.variant);
    }
    let claim = model.claim_tokens(&example.image, &example.text)?;
    let out = model.forward(&claim, &example.bundle, Mode::Infer, None)?;
    let b = &example.bundle;
    let thr = model.config.inference_mask_threshold;
    let slots = out
        .relevance_logits
        .iter()
        .enumerate()
        .map(|(s, &score)| {
            let m = match b.modality_tags[s] {
                Modality::Text => 'T',
                Modality::Image => 'I',
            };
            let sign = if b.relevance_labels[s] == 1 { '+' } else { '-' };
            let probability = sigmoid(score);
            SlotReport {
                slot: s,
                tag: format!("{m}^e{sign}"),
                source_id: b.source_ids[s].clone(),
                score,
                probability,
                predicted_relevant: u8::from(probability > thr),
                label: Some(b.relevance_labels[s]),
            }
        })
        .collect();
    Ok(AttentionReport {
        pair_id: example.pair_id.clone(),
        variant: model.config.variant.to_string(),
        verdict_probability: sigmoid(out.verdict_logit),
        slots,
    })
}
