use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ModelConfig, RELEVANCE_HIDDEN};
use crate::autodiff::{
    multi_head_self_attention, AttentionParams, Checkpoint, Gradients, Graph, LinearParams, NodeId, NormParams, ParamId,
    ParameterSet, Real,
};
use crate::error::{bail, Error, Result};
use crate::fusion::fuse;
use crate::retrieval::EvidenceBundle;

/// Train mode applies teacher forcing in dual-stage variants; infer mode
/// masks by predicted relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier(usize, usize),
    Zeros,
    Ones,
    Normal,
}

type Entry = (String, [usize; 2], Init);

fn linear_entries(out: &mut Vec<Entry>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{prefix}.weight"), [fan_in, fan_out], Init::Xavier(fan_in, fan_out)));
    out.push((format!("{prefix}.bias"), [1, fan_out], Init::Zeros));
}

fn norm_entries(out: &mut Vec<Entry>, prefix: &str, dim: usize) {
    out.push((format!("{prefix}.gain"), [1, dim], Init::Ones));
    out.push((format!("{prefix}.shift"), [1, dim], Init::Zeros));
}

fn encoder_entries(out: &mut Vec<Entry>, prefix: &str, c: &ModelConfig) {
    for l in 0..c.layers {
        for name in ["query", "key", "value", "output"] {
            linear_entries(out, &format!("{prefix}.{l}.attn.{name}"), c.dim, c.dim);
        }
        norm_entries(out, &format!("{prefix}.{l}.ln1"), c.dim);
        linear_entries(out, &format!("{prefix}.{l}.ff1"), c.dim, c.ff_width);
        linear_entries(out, &format!("{prefix}.{l}.ff2"), c.ff_width, c.dim);
        norm_entries(out, &format!("{prefix}.{l}.ln2"), c.dim);
    }
}

fn head_entries(out: &mut Vec<Entry>, prefix: &str, dim: usize, hidden: usize) {
    norm_entries(out, &format!("{prefix}.ln"), dim);
    linear_entries(out, &format!("{prefix}.fc0"), dim, hidden);
    linear_entries(out, &format!("{prefix}.fc1"), hidden, 1);
}

/// Every parameter of a config, in construction (and RNG) order.
fn layout(c: &ModelConfig) -> Vec<Entry> {
    let mut out = vec![("cls".to_string(), [1, c.dim], Init::Normal), ("pos".to_string(), [c.max_len(), c.dim], Init::Normal)];
    encoder_entries(&mut out, "encoder", c);
    if c.variant.has_second_encoder() {
        encoder_entries(&mut out, "encoder2", c);
    }
    head_entries(&mut out, "verdict", c.dim, c.dim / 2);
    if c.variant.has_relevance_head() {
        head_entries(&mut out, "relevance", c.dim, RELEVANCE_HIDDEN);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    attn: AttentionParams,
    ln1: NormParams,
    ff1: LinearParams,
    ff2: LinearParams,
    ln2: NormParams,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    ln: NormParams,
    fc0: LinearParams,
    fc1: LinearParams,
}

#[derive(Debug, Clone)]
struct ModelIds {
    cls: ParamId,
    pos: ParamId,
    encoder: Vec<LayerIds>,
    encoder2: Option<Vec<LayerIds>>,
    verdict: HeadIds,
    relevance: Option<HeadIds>,
}

impl ModelIds {
    fn resolve<T: Real>(p: &ParameterSet<T>, c: &ModelConfig) -> Result<Self> {
        let encoder = |prefix: &str| -> Result<Vec<LayerIds>> {
            (0..c.layers)
                .map(|l| {
                    Ok(LayerIds {
                        attn: AttentionParams::lookup(p, &format!("{prefix}.{l}.attn"))?,
                        ln1: NormParams::lookup(p, &format!("{prefix}.{l}.ln1"))?,
                        ff1: LinearParams::lookup(p, &format!("{prefix}.{l}.ff1"))?,
                        ff2: LinearParams::lookup(p, &format!("{prefix}.{l}.ff2"))?,
                        ln2: NormParams::lookup(p, &format!("{prefix}.{l}.ln2"))?,
                    })
                })
                .collect()
        };
        let head = |prefix: &str| -> Result<HeadIds> {
            Ok(HeadIds {
                ln: NormParams::lookup(p, &format!("{prefix}.ln"))?,
                fc0: LinearParams::lookup(p, &format!("{prefix}.fc0"))?,
                fc1: LinearParams::lookup(p, &format!("{prefix}.fc1"))?,
            })
        };
        Ok(ModelIds {
            cls: p.id("cls")?,
            pos: p.id("pos")?,
            encoder: encoder("encoder")?,
            encoder2: if c.variant.has_second_encoder() { Some(encoder("encoder2")?) } else { None },
            verdict: head("verdict")?,
            relevance: if c.variant.has_relevance_head() { Some(head("relevance")?) } else { None },
        })
    }
}

/// Node handles of one forward pass.
#[derive(Debug, Clone)]
pub struct GraphOutput {
    /// `1 x 1`.
    pub verdict_logit: NodeId,
    /// Relevance logits (head variants) or CLS attention scores (guided
    /// variants), `n` values; `None` for the baseline.
    pub relevance: Option<NodeId>,
    /// Final token outputs of the pass that produced the verdict.
    pub tokens: NodeId,
    /// Final token outputs of the first pass.
    pub stage1_tokens: NodeId,
    pub applied_mask: Option<Vec<u8>>,
    pub seq_len: usize,
    pub n_evidence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardOutput {
    pub verdict_logit: f64,
    /// Scores supervised by the relevance loss: head logits, or the CLS
    /// attention scores for guided variants. Empty for the baseline.
    pub relevance_logits: Vec<f64>,
    /// CLS attention scores, guided variants only.
    pub attention_cls_scores: Vec<f64>,
    /// `[seq_len, dim]`, row-major.
    pub token_outputs: Vec<f64>,
    pub seq_len: usize,
    /// Mask applied before the second pass, dual-stage variants only.
    pub applied_mask: Vec<u8>,
}

pub struct RedDotModel<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParameterSet<T>,
    ids: ModelIds,
}

impl<T: Real> Clone for RedDotModel<T> {
    fn clone(&self) -> Self {
        RedDotModel { config: self.config.clone(), params: self.params.clone(), ids: self.ids.clone() }
    }
}

fn convert<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::c(x as f64)).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl<T: Real> RedDotModel<T> {
    /// Freshly initialized model: Xavier-uniform weights, zero biases, unit
    /// layer-norm gains, N(0, 0.02) CLS and positional embeddings.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n = shape[0] * shape[1];
                let v = match init {
                    Init::Xavier(i, o) => crate::autodiff::init::xavier_uniform(&mut rng, i, o),
                    Init::Zeros => crate::autodiff::init::constant(n, 0.0),
                    Init::Ones => crate::autodiff::init::constant(n, 1.0),
                    Init::Normal => crate::autodiff::init::normal(&mut rng, n, 0.02),
                };
                (name, shape, v)
            })
            .collect();
        Self::from_params(config, ParameterSet::from_named(entries)?)
    }

    /// Wraps an existing parameter set after checking it matches `config`.
    pub fn from_params(config: ModelConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        let mut expected: Vec<(String, [usize; 2])> = layout(&config).into_iter().map(|(n, s, _)| (n, s)).collect();
        expected.sort();
        let found: Vec<(String, [usize; 2])> = params.iter().map(|p| (p.name.clone(), p.shape)).collect();
        if expected != found {
            let missing = expected.iter().find(|e| !found.contains(e));
            let extra = found.iter().find(|f| !expected.contains(f));
            bail!(Config, "parameters do not match the model config (missing {:?}, unexpected {:?})", missing, extra);
        }
        let ids = ModelIds::resolve(&params, &config)?;
        Ok(RedDotModel { config, params, ids })
    }

    pub fn cast<U: Real>(&self) -> RedDotModel<U> {
        RedDotModel { config: self.config.clone(), params: self.params.cast(), ids: self.ids.clone() }
    }

    /// Fused claim tokens for one image/text pair.
    pub fn claim_tokens(&self, image: &[f32], text: &[f32]) -> Result<Vec<f32>> {
        if image.len() != self.config.dim {
            bail!(Shape, "claim dim {} differs from model dim {}", image.len(), self.config.dim);
        }
        fuse(image, text, &self.config.fusion)
    }

    fn layer(&self, g: &mut Graph<'_, T>, x: NodeId, l: &LayerIds) -> Result<NodeId> {
        let p = self.config.dropout;
        let att = multi_head_self_attention(g, x, self.config.heads, &l.attn, p)?;
        let a = g.dropout(att.output, p)?;
        let r = g.add(x, a)?;
        let x1 = l.ln1.forward(g, r)?;
        let h = l.ff1.forward(g, x1)?;
        let h = g.gelu(h);
        let h = g.dropout(h, p)?;
        let f = l.ff2.forward(g, h)?;
        let f = g.dropout(f, p)?;
        let r2 = g.add(x1, f)?;
        l.ln2.forward(g, r2)
    }

    fn encode_with(&self, g: &mut Graph<'_, T>, claim: &[f32], evidence: &[f32], layers: &[LayerIds]) -> Result<NodeId> {
        let dim = self.config.dim;
        let n_ops = self.config.fusion.len();
        if claim.len() != n_ops * dim {
            bail!(Shape, "claim tokens have {} values, expected {} x {}", claim.len(), n_ops, dim);
        }
        if evidence.len() % dim != 0 {
            bail!(Shape, "evidence length {} is not a multiple of dim {}", evidence.len(), dim);
        }
        let n = evidence.len() / dim;
        let len = 1 + n_ops + n;
        if len > self.config.max_len() {
            bail!(Config, "sequence of {} tokens exceeds the maximum of {}", len, self.config.max_len());
        }
        let cls = g.param(self.ids.cls);
        let claim = g.input(n_ops, dim, convert(claim))?;
        let mut parts = vec![cls, claim];
        if n > 0 {
            parts.push(g.input(n, dim, convert(evidence))?);
        }
        let x = g.concat_rows(&parts)?;
        let pos = g.param(self.ids.pos);
        let pos = if len == self.config.max_len() { pos } else { g.slice_rows(pos, 0, len)? };
        let mut x = g.add(x, pos)?;
        for l in layers {
            x = self.layer(g, x, l)?;
        }
        Ok(x)
    }

    /// Token outputs `d` of the first encoder over `[CLS; claim; evidence]`.
    pub fn encode(&self, g: &mut Graph<'_, T>, claim: &[f32], evidence: &[f32]) -> Result<NodeId> {
        self.encode_with(g, claim, evidence, &self.ids.encoder)
    }

    fn head(&self, g: &mut Graph<'_, T>, x: NodeId, h: &HeadIds) -> Result<NodeId> {
        let x = h.ln.forward(g, x)?;
        let x = h.fc0.forward(g, x)?;
        let x = g.gelu(x);
        h.fc1.forward(g, x)
    }

    fn ga_scores(&self, g: &mut Graph<'_, T>, d: NodeId, n: usize) -> Result<NodeId> {
        let len = g.shape(d).0;
        if len < 1 + n {
            bail!(Shape, "sequence of {} tokens cannot hold {} evidence slots", len, n);
        }
        let cls = g.slice_rows(d, 0, 1)?;
        let ev = g.slice_rows(d, len - n, n)?;
        let a = g.matmul_nt(cls, ev)?;
        Ok(g.scale(a, T::c(1.0 / self.config.dim as f64)))
    }

    /// Builds the full forward pass on `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_, T>,
        claim: &[f32],
        bundle: &EvidenceBundle,
        mode: Mode,
        teacher: Option<&[u8]>,
    ) -> Result<GraphOutput> {
        let dim = self.config.dim;
        if bundle.dim != dim {
            bail!(Shape, "bundle dim {} differs from model dim {}", bundle.dim, dim);
        }
        let variant = self.config.variant;
        if !variant.uses_red() {
            let relevant = bundle.relevant_only();
            let d = self.encode(g, claim, &relevant.features)?;
            let cls = g.slice_rows(d, 0, 1)?;
            let verdict = self.head(g, cls, &self.ids.verdict)?;
            return Ok(GraphOutput {
                verdict_logit: verdict,
                relevance: None,
                tokens: d,
                stage1_tokens: d,
                applied_mask: None,
                seq_len: g.shape(d).0,
                n_evidence: relevant.len(),
            });
        }

        let n = bundle.len();
        let d1 = self.encode(g, claim, &bundle.features)?;
        let len = g.shape(d1).0;
        let relevance = if n == 0 {
            None
        } else if variant.is_guided() {
            Some(self.ga_scores(g, d1, n)?)
        } else {
            let ev = g.slice_rows(d1, len - n, n)?;
            let head = self.ids.relevance.as_ref().expect("head variants carry a relevance head");
            Some(self.head(g, ev, head)?)
        };

        if !variant.is_dual_stage() {
            let cls = g.slice_rows(d1, 0, 1)?;
            let verdict = self.head(g, cls, &self.ids.verdict)?;
            return Ok(GraphOutput {
                verdict_logit: verdict,
                relevance,
                tokens: d1,
                stage1_tokens: d1,
                applied_mask: None,
                seq_len: len,
                n_evidence: n,
            });
        }

        let mask: Vec<u8> = match mode {
            Mode::Train => {
                let t = teacher.ok_or_else(|| Error::State("dual-stage training needs teacher relevance labels".into()))?;
                if t.len() != n {
                    bail!(Shape, "{} teacher labels for {} evidence slots", t.len(), n);
                }
                t.to_vec()
            }
            Mode::Infer => match relevance {
                Some(r) => {
                    let thr = self.config.inference_mask_threshold;
                    g.value(r).iter().map(|&s| u8::from(sigmoid(s.as_f64()) > thr)).collect()
                }
                None => Vec::new(),
            },
        };
        let masked = apply_evidence_mask(&bundle.features, dim, &mask)?;
        let layers = self.ids.encoder2.as_deref().unwrap_or(&self.ids.encoder);
        let d2 = self.encode_with(g, claim, &masked, layers)?;
        let cls = g.slice_rows(d2, 0, 1)?;
        let verdict = self.head(g, cls, &self.ids.verdict)?;
        Ok(GraphOutput {
            verdict_logit: verdict,
            relevance,
            tokens: d2,
            stage1_tokens: d1,
            applied_mask: Some(mask),
            seq_len: len,
            n_evidence: n,
        })
    }

    /// Dropout-free forward pass returning plain values.
    pub fn forward(&self, claim: &[f32], bundle: &EvidenceBundle, mode: Mode, teacher: Option<&[u8]>) -> Result<ForwardOutput> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_graph(&mut g, claim, bundle, mode, teacher)?;
        Ok(self.collect(&g, &out))
    }

    fn collect(&self, g: &Graph<'_, T>, out: &GraphOutput) -> ForwardOutput {
        let vals = |id: NodeId| g.value(id).iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
        let relevance = out.relevance.map(vals).unwrap_or_default();
        ForwardOutput {
            verdict_logit: g.scalar(out.verdict_logit).as_f64(),
            attention_cls_scores: if self.config.variant.is_guided() { relevance.clone() } else { Vec::new() },
            relevance_logits: relevance,
            token_outputs: vals(out.tokens),
            seq_len: g.shape(out.tokens).0,
            applied_mask: out.applied_mask.clone().unwrap_or_default(),
        }
    }

    /// Total loss node plus verdict and relevance parts.
    pub fn loss_graph(&self, g: &mut Graph<'_, T>, out: &GraphOutput, y_v: u8, y_e: &[u8]) -> Result<(NodeId, NodeId, Option<NodeId>)> {
        let lv = g.bce_with_logits(out.verdict_logit, &[T::c(y_v as f64)])?;
        match out.relevance {
            None => {
                if self.config.variant.uses_red() && !y_e.is_empty() {
                    bail!(Shape, "{} relevance labels for 0 evidence slots", y_e.len());
                }
                Ok((lv, lv, None))
            }
            Some(r) => {
                if y_e.len() != out.n_evidence {
                    bail!(Shape, "{} relevance labels for {} evidence slots", y_e.len(), out.n_evidence);
                }
                let targets: Vec<T> = y_e.iter().map(|&y| T::c(y as f64)).collect();
                let le = g.bce_with_logits(r, &targets)?;
                Ok((g.add(lv, le)?, lv, Some(le)))
            }
        }
    }

    /// Loss and parameter gradients for one training example.
    ///
    /// Dropout is sampled from `dropout_seed`; `None` disables it.
    pub fn example_gradients(
        &self,
        claim: &[f32],
        bundle: &EvidenceBundle,
        verdict: u8,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Gradients<T>)> {
        let mut g = match dropout_seed {
            Some(s) => Graph::with_dropout(&self.params, s),
            None => Graph::new(&self.params),
        };
        let out = self.forward_graph(&mut g, claim, bundle, Mode::Train, Some(&bundle.relevance_labels))?;
        let labels: &[u8] = if self.config.variant.uses_red() { &bundle.relevance_labels } else { &[] };
        let (loss, _, _) = self.loss_graph(&mut g, &out, verdict, labels)?;
        g.check_finite(loss)?;
        let back = g.backward(loss)?;
        Ok((g.scalar(loss).as_f64(), back.params))
    }

    /// Verdict head applied to a CLS output vector.
    pub fn predict_verdict(&self, d_cls: &[f64]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let x = g.input(1, d_cls.len(), d_cls.iter().map(|&v| T::c(v)).collect())?;
        let y = self.head(&mut g, x, &self.ids.verdict)?;
        Ok(g.scalar(y).as_f64())
    }

    /// Relevance head applied to each row of `[n, dim]` evidence outputs.
    pub fn predict_relevance_head(&self, d_evidence: &[f64]) -> Result<Vec<f64>> {
        let Some(head) = self.ids.relevance.as_ref() else {
            bail!(State, "variant {} has no relevance head", self.config.variant);
        };
        let dim = self.config.dim;
        if d_evidence.len() % dim != 0 {
            bail!(Shape, "evidence outputs of {} values are not rows of {}", d_evidence.len(), dim);
        }
        if d_evidence.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(d_evidence.len() / dim, dim, d_evidence.iter().map(|&v| T::c(v)).collect())?;
        let y = self.head(&mut g, x, head)?;
        Ok(g.value(y).iter().map(|v| v.as_f64()).collect())
    }
}

impl RedDotModel<f32> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint { config: serde_json::to_value(&self.config)?, params: self.params.clone() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.config).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        Self::from_params(config, ckpt.params)
    }
}

/// Zeroes whole evidence token rows where `mask` is 0; keeps the row count.
pub fn apply_evidence_mask(tokens: &[f32], dim: usize, mask: &[u8]) -> Result<Vec<f32>> {
    if dim == 0 || tokens.len() != mask.len() * dim {
        bail!(Shape, "mask of {} slots for {} evidence values", mask.len(), tokens.len());
    }
    let mut out = tokens.to_vec();
    for (row, &m) in out.chunks_exact_mut(dim).zip(mask) {
        if m == 0 {
            row.fill(0.0);
        }
    }
    Ok(out)
}

/// `a = d d^T / dim` over `[len, dim]` token outputs.
pub fn guided_attention_matrix(d: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || d.len() % dim != 0 {
        bail!(Shape, "token outputs of {} values are not rows of {}", d.len(), dim);
    }
    let len = d.len() / dim;
    let mut a = vec![0.0; len * len];
    for i in 0..len {
        for j in i..len {
            let v = dot(&d[i * dim..(i + 1) * dim], &d[j * dim..(j + 1) * dim]) / dim as f64;
            a[i * len + j] = v;
            a[j * len + i] = v;
        }
    }
    Ok(a)
}

/// Row 0 of the guided attention matrix restricted to the last `n` tokens.
pub fn guided_attention_scores(d: &[f64], dim: usize, n: usize) -> Result<Vec<f64>> {
    if dim == 0 || d.len() % dim != 0 {
        bail!(Shape, "token outputs of {} values are not rows of {}", d.len(), dim);
    }
    let len = d.len() / dim;
    if len < 1 + n {
        bail!(Shape, "sequence of {} tokens cannot hold {} evidence slots", len, n);
    }
    let cls = &d[..dim];
    Ok((len - n..len).map(|j| dot(cls, &d[j * dim..(j + 1) * dim]) / dim as f64).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
