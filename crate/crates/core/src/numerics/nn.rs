//! Parameter containers and the pre-norm transformer block shared by the codec and
//! the spatial module.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{DropoutStream, Graph, Var};
use super::ops::LAYER_NORM_EPS;
use super::Tensor;
use crate::error::{Error, Result};

/// Anything holding named parameter tensors.
///
/// Both visitors must yield the same names in the same order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_params_mut(&mut |_, t| t.set_requires_grad(trainable));
    }

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }
}

/// Forward-pass mode. Training requires a seed for the dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Uniform Glorot initialization.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(vec![fan_in, fan_out], |_| rng.random_range(-a..a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: glorot(rng, fan_in, fan_out),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> BoundLinear {
        BoundLinear {
            weight: g.param(format!("{prefix}.weight"), &self.weight),
            bias: g.param(format!("{prefix}.bias"), &self.bias),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    /// Plain `x·W + b` for an `m × in` matrix.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = super::ops::matmul(x, &self.weight)?;
        let n = self.out_dim();
        for row in y.data_mut().chunks_mut(n) {
            row.iter_mut()
                .zip(self.bias.data())
                .for_each(|(v, b)| *v += b);
        }
        Ok(y)
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row(y, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayerNorm {
    pub gain: Var,
    pub bias: Var,
}

impl LayerNormParams {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::full(vec![dim], 1.0),
            bias: Tensor::zeros(vec![dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> BoundLayerNorm {
        BoundLayerNorm {
            gain: g.param(format!("{prefix}.gain"), &self.gain),
            bias: g.param(format!("{prefix}.bias"), &self.bias),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.gain"), &self.gain);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.gain"), &mut self.gain);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl BoundLayerNorm {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.layer_norm(x, self.gain, self.bias, LAYER_NORM_EPS)
    }
}

/// Pre-norm transformer encoder block:
/// `X2 = X + MHSA(LN1(X))`, `out = X2 + FFN(LN2(X2))` with a GELU feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub n_heads: usize,
    pub ln1: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln2: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

pub struct BoundBlock {
    n_heads: usize,
    ln1: BoundLayerNorm,
    query: BoundLinear,
    key: BoundLinear,
    value: BoundLinear,
    output: BoundLinear,
    ln2: BoundLayerNorm,
    ffn_in: BoundLinear,
    ffn_out: BoundLinear,
}

/// Attention masking applied to the score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMask {
    /// Every element attends to every other; no positional information.
    None,
    /// Element `i` attends to elements `0..=i`.
    Causal,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, n_heads: usize, ffn_mult: usize) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "hidden dim {dim} must be divisible by head count {n_heads}"
            )));
        }
        Ok(Self {
            n_heads,
            ln1: LayerNormParams::new(dim),
            query: Linear::new(rng, dim, dim),
            key: Linear::new(rng, dim, dim),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
            ln2: LayerNormParams::new(dim),
            ffn_in: Linear::new(rng, dim, ffn_mult * dim),
            ffn_out: Linear::new(rng, ffn_mult * dim, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }

    /// Zeroes the output projection and the second FFN layer so the block is the identity.
    pub fn make_identity(&mut self) {
        let d = self.dim();
        let h = self.ffn_in.out_dim();
        self.output = Linear::zeros(d, d);
        self.ffn_out = Linear::zeros(h, d);
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> BoundBlock {
        BoundBlock {
            n_heads: self.n_heads,
            ln1: self.ln1.bind(g, &format!("{prefix}.ln1")),
            query: self.query.bind(g, &format!("{prefix}.attn.query")),
            key: self.key.bind(g, &format!("{prefix}.attn.key")),
            value: self.value.bind(g, &format!("{prefix}.attn.value")),
            output: self.output.bind(g, &format!("{prefix}.attn.output")),
            ln2: self.ln2.bind(g, &format!("{prefix}.ln2")),
            ffn_in: self.ffn_in.bind(g, &format!("{prefix}.ffn.in")),
            ffn_out: self.ffn_out.bind(g, &format!("{prefix}.ffn.out")),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.query.visit(&format!("{prefix}.attn.query"), f);
        self.key.visit(&format!("{prefix}.attn.key"), f);
        self.value.visit(&format!("{prefix}.attn.value"), f);
        self.output.visit(&format!("{prefix}.attn.output"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
        self.ffn_in.visit(&format!("{prefix}.ffn.in"), f);
        self.ffn_out.visit(&format!("{prefix}.ffn.out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.query.visit_mut(&format!("{prefix}.attn.query"), f);
        self.key.visit_mut(&format!("{prefix}.attn.key"), f);
        self.value.visit_mut(&format!("{prefix}.attn.value"), f);
        self.output.visit_mut(&format!("{prefix}.attn.output"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
        self.ffn_in.visit_mut(&format!("{prefix}.ffn.in"), f);
        self.ffn_out.visit_mut(&format!("{prefix}.ffn.out"), f);
    }
}

/// Dropout configuration for one forward pass.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub stream: Option<&'a mut DropoutStream>,
}

impl DropoutCtx<'_> {
    pub fn off() -> DropoutCtx<'static> {
        DropoutCtx {
            rate: 0.0,
            stream: None,
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.stream.as_deref_mut() {
            Some(s) if self.rate > 0.0 => g.dropout(x, self.rate, s),
            _ => Ok(x),
        }
    }
}

impl BoundBlock {
    /// Per-head attention probabilities (`n×n` each) for the normalized input `xn`.
    pub fn attention_probs(
        &self,
        g: &mut Graph,
        xn: Var,
        mask: AttentionMask,
    ) -> Result<(Vec<Var>, Var)> {
        let (n, d) = g.value(xn).dims2()?;
        let dh = d / self.n_heads;
        let q = self.query.forward(g, xn)?;
        let k = self.key.forward(g, xn)?;
        let v = self.value.forward(g, xn)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask_var = match mask {
            AttentionMask::None => None,
            AttentionMask::Causal => {
                let m = Tensor::from_fn(vec![n, n], |idx| {
                    if idx % n > idx / n {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                });
                Some(g.input(m))
            }
        };
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask_var {
                s = g.add(s, m)?;
            }
            probs.push(g.softmax_rows(s)?);
        }
        Ok((probs, v))
    }

    /// `n×d` in, `n×d` out.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        mask: AttentionMask,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        let (_, d) = g.value(x).dims2()?;
        let dh = d / self.n_heads;
        let xn = self.ln1.forward(g, x)?;
        let (probs, v) = self.attention_probs(g, xn, mask)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for (h, p) in probs.into_iter().enumerate() {
            let p = dropout.apply(g, p)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            heads.push(g.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let attn = self.output.forward(g, cat)?;
        let x2 = g.add(x, attn)?;
        self.feed_forward(g, x2, dropout)
    }

    /// `LN1(x)`, the input seen by the attention projections.
    pub fn normalize_for_attention(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.ln1.forward(g, x)
    }

    /// `FFN(LN2(x))` without the residual.
    pub fn ffn(&self, g: &mut Graph, x: Var, dropout: &mut DropoutCtx<'_>) -> Result<Var> {
        let xn = self.ln2.forward(g, x)?;
        let hidden = self.ffn_in.forward(g, xn)?;
        let hidden = g.gelu(hidden);
        let hidden = dropout.apply(g, hidden)?;
        self.ffn_out.forward(g, hidden)
    }

    /// `x + FFN(LN2(x))`.
    pub fn feed_forward(&self, g: &mut Graph, x: Var, dropout: &mut DropoutCtx<'_>) -> Result<Var> {
        let out = self.ffn(g, x, dropout)?;
        g.add(x, out)
    }
}
