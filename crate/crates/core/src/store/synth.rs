use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta};
use super::manifest::{DatasetManifest, PairCategory, Split, Verdict, VerificationPair};
use super::matrix::{EmbeddingMatrix, EmbeddingSet, Role};
use crate::error::{bail, Result};
use crate::exec::derive_seed;

/// Parameters of the synthetic claim/evidence generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub split: Split,
    pub pairs: usize,
    pub dim: usize,
    /// Relevant text evidence per pair.
    pub m: usize,
    /// Relevant image evidence per pair.
    pub k: usize,
    /// Random distractors added to each pool.
    pub distractors: usize,
    /// Per-coordinate standard deviation of the perturbation noise.
    pub sigma: f64,
    pub truthful_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            split: Split::Train,
            pairs: 100,
            dim: 64,
            m: 1,
            k: 1,
            distractors: 2,
            sigma: 0.1,
            truthful_fraction: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            bail!(Config, "synthetic dataset needs at least one pair");
        }
        if self.dim == 0 {
            bail!(Config, "synthetic dim must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bail!(Config, "sigma must be a finite non-negative number, got {}", self.sigma);
        }
        if !(0.0..=1.0).contains(&self.truthful_fraction) {
            bail!(Config, "truthful_fraction must lie in [0, 1], got {}", self.truthful_fraction);
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `normalize(base + sigma * g)`; returns `base` unchanged when sigma is 0.
fn perturb(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let v: Vec<f64> = base.iter().map(|b| b + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Generates one split of claim pairs with known relevant evidence.
///
/// Truthful pairs get a text embedding that is a noisy copy of the image
/// embedding; misinformation pairs get two independent directions. Each pool
/// holds noisy copies of the same-modality claim vector plus random
/// distractors, shuffled. Ids are prefixed with the split name so several
/// splits can share one set of matrices.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<(DatasetManifest, EmbeddingSet)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.dim;
    let prefix = config.split.as_str();

    let truthful = ((config.pairs as f64) * config.truthful_fraction).round() as usize;
    let mut verdicts: Vec<Verdict> = (0..config.pairs)
        .map(|i| if i < truthful { Verdict::Truthful } else { Verdict::Misinformation })
        .collect();
    verdicts.shuffle(&mut rng);

    let mut text_claim = Vec::with_capacity(config.pairs);
    let mut image_claim = Vec::with_capacity(config.pairs);
    let mut text_ev = Vec::new();
    let mut image_ev = Vec::new();
    let mut pairs = Vec::with_capacity(config.pairs);

    for (i, verdict) in verdicts.into_iter().enumerate() {
        let image = unit_vector(&mut rng, dim);
        let text = match verdict {
            Verdict::Truthful => perturb(&mut rng, &image, config.sigma),
            Verdict::Misinformation => unit_vector(&mut rng, dim),
        };

        let mut text_pool = Vec::new();
        for j in 0..config.m {
            text_pool.push((format!("{prefix}-te{i}-r{j}"), perturb(&mut rng, &text, config.sigma)));
        }
        for j in 0..config.distractors {
            text_pool.push((format!("{prefix}-te{i}-d{j}"), unit_vector(&mut rng, dim)));
        }
        text_pool.shuffle(&mut rng);

        let mut image_pool = Vec::new();
        for j in 0..config.k {
            image_pool.push((format!("{prefix}-ie{i}-r{j}"), perturb(&mut rng, &image, config.sigma)));
        }
        for j in 0..config.distractors {
            image_pool.push((format!("{prefix}-ie{i}-d{j}"), unit_vector(&mut rng, dim)));
        }
        image_pool.shuffle(&mut rng);

        let pair = VerificationPair {
            pair_id: format!("{prefix}-p{i}"),
            text_id: format!("{prefix}-t{i}"),
            image_id: format!("{prefix}-i{i}"),
            verdict,
            candidate_text_evidence: text_pool.iter().map(|(id, _)| id.clone()).collect(),
            candidate_image_evidence: image_pool.iter().map(|(id, _)| id.clone()).collect(),
        };
        text_claim.push((pair.text_id.clone(), to_f32(text)));
        image_claim.push((pair.image_id.clone(), to_f32(image)));
        text_ev.extend(text_pool.into_iter().map(|(id, v)| (id, to_f32(v))));
        image_ev.extend(image_pool.into_iter().map(|(id, v)| (id, to_f32(v))));
        pairs.push(pair);
    }

    let set = EmbeddingSet {
        text_claim: EmbeddingMatrix::from_rows(Role::TextClaim, dim, text_claim)?,
        image_claim: EmbeddingMatrix::from_rows(Role::ImageClaim, dim, image_claim)?,
        text_evidence: EmbeddingMatrix::from_rows(Role::TextEvidence, dim, text_ev)?,
        image_evidence: EmbeddingMatrix::from_rows(Role::ImageEvidence, dim, image_ev)?,
    };
    let manifest = DatasetManifest {
        split: config.split,
        pairs,
        dim,
        provenance: format!(
            "synthetic seed={} sigma={} m={} k={} distractors={} truthful_fraction={}",
            seed, config.sigma, config.m, config.k, config.distractors, config.truthful_fraction
        ),
    };
    Ok((manifest, set))
}

fn concat(role: Role, dim: usize, parts: &[&EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for p in parts {
        ids.extend_from_slice(p.ids());
        data.extend_from_slice(p.data());
    }
    EmbeddingMatrix::new(role, dim, ids, data)
}

/// Generates several splits into one dataset. Each split draws from its own
/// stream derived from `seed` and the split name.
pub fn generate_splits(configs: &[SynthConfig], seed: u64) -> Result<Dataset> {
    let Some(first) = configs.first() else {
        bail!(Config, "no splits requested");
    };
    let dim = first.dim;
    if configs.iter().any(|c| c.dim != dim) {
        bail!(Config, "all synthetic splits must share one dim");
    }
    let provenance = format!(
        "synthetic seed={} sigma={} m={} k={} distractors={}",
        seed, first.sigma, first.m, first.k, first.distractors
    );
    let mut manifests = BTreeMap::new();
    let mut sets = Vec::new();
    let mut categories = BTreeMap::new();
    for cfg in configs {
        if manifests.contains_key(&cfg.split) {
            bail!(Config, "split '{}' requested twice", cfg.split);
        }
        let (mut manifest, set) = generate_synthetic(cfg, derive_seed(seed, cfg.split.as_str()))?;
        manifest.provenance = provenance.clone();
        for pair in &manifest.pairs {
            let cat = match pair.verdict {
                Verdict::Truthful => PairCategory::Truthful,
                Verdict::Misinformation => PairCategory::OutOfContext,
            };
            categories.insert(pair.pair_id.clone(), cat);
        }
        manifests.insert(cfg.split, manifest);
        sets.push(set);
    }
    let pick = |f: fn(&EmbeddingSet) -> &EmbeddingMatrix| sets.iter().map(f).collect::<Vec<_>>();
    let matrices = EmbeddingSet {
        text_claim: concat(Role::TextClaim, dim, &pick(|s| &s.text_claim))?,
        image_claim: concat(Role::ImageClaim, dim, &pick(|s| &s.image_claim))?,
        text_evidence: concat(Role::TextEvidence, dim, &pick(|s| &s.text_evidence))?,
        image_evidence: concat(Role::ImageEvidence, dim, &pick(|s| &s.image_evidence))?,
    };
    Ok(Dataset {
        meta: DatasetMeta { dim, provenance, categories },
        manifests,
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::retrieval::cosine_similarity;

    #[test]
    fn zero_noise_truthful_text_equals_image() {
        let cfg = SynthConfig { pairs: 20, dim: 16, sigma: 0.0, ..SynthConfig::default() };
        let (manifest, set) = generate_synthetic(&cfg, 1).unwrap();
        let mut checked = 0;
        for pair in manifest.pairs.iter().filter(|p| p.verdict == Verdict::Truthful) {
            assert_eq!(set.text_claim.get(&pair.text_id), set.image_claim.get(&pair.image_id));
            checked += 1;
        }
        assert_eq!(checked, 10);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig { pairs: 30, dim: 8, ..SynthConfig::default() };
        let a = generate_synthetic(&cfg, 42).unwrap();
        let b = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, 43).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn rejects_invalid_config() {
        let neg = SynthConfig { sigma: -0.1, ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&neg, 0), Err(Error::Config(_))));
        let empty = SynthConfig { pairs: 0, ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&empty, 0), Err(Error::Config(_))));
    }

    #[test]
    fn truthful_pairs_are_more_aligned() {
        let cfg = SynthConfig { pairs: 2000, dim: 64, sigma: 0.1, ..SynthConfig::default() };
        let (manifest, set) = generate_synthetic(&cfg, 0).unwrap();
        let mut truthful = Vec::new();
        let mut misinfo = Vec::new();
        for pair in &manifest.pairs {
            let s = cosine_similarity(set.text_claim.get(&pair.text_id).unwrap(), set.image_claim.get(&pair.image_id).unwrap())
                .unwrap();
            match pair.verdict {
                Verdict::Truthful => truthful.push(s),
                Verdict::Misinformation => misinfo.push(s),
            }
        }
        misinfo.sort_by(|a, b| a.total_cmp(b));
        // Fraction of (truthful, misinformation) combinations ordered correctly.
        let mut wins = 0usize;
        for t in &truthful {
            wins += misinfo.partition_point(|m| m < t);
        }
        let frac = wins as f64 / (truthful.len() * misinfo.len()) as f64;
        assert!(frac > 0.99, "fraction {}", frac);
    }

    #[test]
    fn splits_share_disjoint_ids() {
        let configs = [
            SynthConfig { split: Split::Train, pairs: 5, dim: 4, ..SynthConfig::default() },
            SynthConfig { split: Split::Test, pairs: 3, dim: 4, ..SynthConfig::default() },
        ];
        let ds = generate_splits(&configs, 0).unwrap();
        assert_eq!(ds.matrices.text_claim.len(), 8);
        assert!(ds.validate().is_usable());
    }
}
