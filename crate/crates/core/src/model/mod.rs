//! The relevance-aware transformer: a learned CLS token, fused claim tokens
//! and evidence tokens encoded by a post-norm transformer, a verdict head and
//! one of two relevance scorers (a shared MLP head or guided attention).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_params, GradCheckReport};
use crate::exec::derive_seed;
use crate::retrieval::{EvidenceBundle, Modality};

mod config;
mod network;

pub use config::{ModelConfig, Variant, RELEVANCE_HIDDEN};
pub use network::{
    apply_evidence_mask, guided_attention_matrix, guided_attention_scores, ForwardOutput, GraphOutput, Mode, RedDotModel,
};

/// Stable binary cross-entropy of one logit.
fn bce(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

fn mean_bce(logits: &[f64], targets: &[u8]) -> f64 {
    logits.iter().zip(targets).map(|(&z, &t)| bce(z, t as f64)).sum::<f64>() / logits.len() as f64
}

/// `(L, L_v, L_e)` for a forward output; `L_e` is 0 when there are no
/// relevance scores (baseline).
pub fn multitask_loss(output: &ForwardOutput, y_v: u8, y_e: &[u8]) -> crate::Result<(f64, f64, f64)> {
    if y_v > 1 || y_e.iter().any(|&y| y > 1) {
        return Err(crate::Error::Data("labels must be 0 or 1".into()));
    }
    if y_e.len() != output.relevance_logits.len() {
        return Err(crate::Error::Shape(format!(
            "{} relevance labels for {} relevance scores",
            y_e.len(),
            output.relevance_logits.len()
        )));
    }
    let lv = bce(output.verdict_logit, y_v as f64);
    let le = if y_e.is_empty() { 0.0 } else { mean_bce(&output.relevance_logits, y_e) };
    Ok((lv + le, lv, le))
}

/// Finite-difference check of the full forward pass and multitask loss in
/// 64-bit, on a random claim and a bundle of `2(m+k)` alternating
/// relevant/irrelevant slots.
pub fn model_grad_check(config: &ModelConfig, seed: u64, tolerance: f64) -> crate::Result<GradCheckReport> {
    let model = RedDotModel::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck"));
    let dim = config.dim;
    let mut random = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let n = config.evidence_slots();
    let bundle = EvidenceBundle {
        pair_id: "gradcheck".into(),
        dim,
        features: random(n * dim),
        relevance_labels: (0..n).map(|i| u8::from(i % 2 == 0)).collect(),
        permutation: (0..n).collect(),
        modality_tags: (0..n).map(|i| if i % 2 == 0 { Modality::Text } else { Modality::Image }).collect(),
        padded_flags: vec![false; n],
        source_ids: (0..n).map(|i| format!("e{i}")).collect(),
    };
    let claim = model.claim_tokens(&random(dim), &random(dim))?;
    let labels: &[u8] = if config.variant.uses_red() { &bundle.relevance_labels } else { &[] };
    grad_check_params(&model.params, tolerance, |g| {
        let out = model.forward_graph(g, &claim, &bundle, Mode::Train, Some(&bundle.relevance_labels))?;
        Ok(model.loss_graph(g, &out, 1, labels)?.0)
    })
}
