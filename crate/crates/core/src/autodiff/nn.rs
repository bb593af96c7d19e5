use super::graph::{gelu_value, Graph, NodeId};
use super::params::{ParamId, ParameterSet};
use super::{Real, LN_EPS};
use crate::error::{bail, Result};

/// Scalar GELU (tanh approximation), for reference computations.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu_value(x)
}

/// `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn lookup<T: Real>(params: &ParameterSet<T>, prefix: &str) -> Result<Self> {
        Ok(LinearParams { weight: params.id(&format!("{prefix}.weight"))?, bias: params.id(&format!("{prefix}.bias"))? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }
}

/// Layer-norm gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl NormParams {
    pub fn lookup<T: Real>(params: &ParameterSet<T>, prefix: &str) -> Result<Self> {
        Ok(NormParams { gain: params.id(&format!("{prefix}.gain"))?, shift: params.id(&format!("{prefix}.shift"))? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        g.layer_norm(x, gain, shift, LN_EPS)
    }
}

/// Query, key, value and output projections of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn lookup<T: Real>(params: &ParameterSet<T>, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            query: LinearParams::lookup(params, &format!("{prefix}.query"))?,
            key: LinearParams::lookup(params, &format!("{prefix}.key"))?,
            value: LinearParams::lookup(params, &format!("{prefix}.value"))?,
            output: LinearParams::lookup(params, &format!("{prefix}.output"))?,
        })
    }
}

pub struct AttentionOutput {
    pub output: NodeId,
    /// Post-softmax `[L, L]` weights, one node per head, before dropout.
    pub weights: Vec<NodeId>,
}

/// Bidirectional scaled dot-product attention over the rows of `x`.
pub fn multi_head_self_attention<T: Real>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    heads: usize,
    params: &AttentionParams,
    dropout: f64,
) -> Result<AttentionOutput> {
    let dim = g.shape(x).1;
    if heads == 0 || dim % heads != 0 {
        bail!(Config, "model dim {} is not divisible by {} heads", dim, heads);
    }
    let dh = dim / heads;
    let q = params.query.forward(g, x)?;
    let k = params.key.forward(g, x)?;
    let v = params.value.forward(g, x)?;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let w = g.softmax_rows(scores);
        weights.push(w);
        let wd = g.dropout(w, dropout)?;
        outs.push(g.matmul(wd, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let output = params.output.forward(g, joined)?;
    Ok(AttentionOutput { output, weights })
}
