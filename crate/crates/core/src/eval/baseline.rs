//! A deliberately order-dependent forecaster: every channel index owns a learned embedding
//! and the cross-channel mixing weights are a bilinear function of those embeddings alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{BoundLinear, Linear};
use crate::numerics::{Graph, Mode, Parameterized, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBaselineParams {
    pub config: ContrastConfig,
    /// Row `i` belongs to whatever channel sits at position `i`.
    pub embedding: Tensor,
    pub query: Linear,
    pub key: Linear,
    pub temporal: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub skip: Linear,
}

pub struct BoundContrast {
    embedding: Var,
    query: BoundLinear,
    key: BoundLinear,
    temporal: BoundLinear,
    mlp_in: BoundLinear,
    mlp_out: BoundLinear,
    skip: BoundLinear,
}

impl Parameterized for ContrastBaselineParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("contrast.embedding", &self.embedding);
        self.query.visit("contrast.query", f);
        self.key.visit("contrast.key", f);
        self.temporal.visit("contrast.temporal", f);
        self.mlp_in.visit("contrast.mlp_in", f);
        self.mlp_out.visit("contrast.mlp_out", f);
        self.skip.visit("contrast.skip", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("contrast.embedding", &mut self.embedding);
        self.query.visit_mut("contrast.query", f);
        self.key.visit_mut("contrast.key", f);
        self.temporal.visit_mut("contrast.temporal", f);
        self.mlp_in.visit_mut("contrast.mlp_in", f);
        self.mlp_out.visit_mut("contrast.mlp_out", f);
        self.skip.visit_mut("contrast.skip", f);
    }
}

impl ContrastBaselineParams {
    pub fn init(
        config: &ContrastConfig,
        n_channels: usize,
        input_len: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_channels == 0
            || input_len == 0
            || horizon == 0
            || config.embed_dim == 0
            || config.hidden_dim == 0
        {
            return Err(Error::Config(
                "contrast baseline dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let embedding = crate::numerics::nn::glorot(&mut rng, n_channels, config.embed_dim);
        let mut p = Self {
            config: config.clone(),
            embedding,
            query: Linear::new(&mut rng, config.embed_dim, config.embed_dim),
            key: Linear::new(&mut rng, config.embed_dim, config.embed_dim),
            temporal: Linear::new(&mut rng, input_len, h),
            mlp_in: Linear::new(&mut rng, 2 * h + config.embed_dim, h),
            mlp_out: Linear::new(&mut rng, h, horizon),
            skip: Linear::new(&mut rng, input_len, horizon),
        };
        p.set_trainable(true);
        Ok(p)
    }

    pub fn n_channels(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn input_len(&self) -> usize {
        self.temporal.in_dim()
    }

    pub fn horizon(&self) -> usize {
        self.skip.out_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundContrast {
        BoundContrast {
            embedding: g.param("contrast.embedding", &self.embedding),
            query: self.query.bind(g, "contrast.query"),
            key: self.key.bind(g, "contrast.key"),
            temporal: self.temporal.bind(g, "contrast.temporal"),
            mlp_in: self.mlp_in.bind(g, "contrast.mlp_in"),
            mlp_out: self.mlp_out.bind(g, "contrast.mlp_out"),
            skip: self.skip.bind(g, "contrast.skip"),
        }
    }

    /// `rows` is `C × L` (one history per row, in position order); returns `C × T`.
    pub fn forward_graph(&self, g: &mut Graph, b: &BoundContrast, rows: Var) -> Result<Var> {
        let (c, l) = g.value(rows).dims2()?;
        if c != self.n_channels() {
            return Err(Error::arg(format!(
                "contrast baseline was built for {} channels, got {c}",
                self.n_channels()
            )));
        }
        if l != self.input_len() {
            return Err(Error::arg(format!(
                "history has {l} steps, baseline expects {}",
                self.input_len()
            )));
        }
        let z = b.temporal.forward(g, rows)?;
        // Signed channel-to-channel weights, so sources can excite or inhibit.
        let q = b.query.forward(g, b.embedding)?;
        let k = b.key.forward(g, b.embedding)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let adjacency = g.scale(scores, 1.0 / (self.config.embed_dim as f64).sqrt());
        let mixed = g.matmul(adjacency, z)?;
        let cat = g.concat_cols(&[z, mixed, b.embedding])?;
        let hidden = b.mlp_in.forward(g, cat)?;
        let hidden = g.gelu(hidden);
        let out = b.mlp_out.forward(g, hidden)?;
        let skip = b.skip.forward(g, rows)?;
        g.add(out, skip)
    }

    /// Eval-mode forecast: `L × C` history to `T × C`.
    pub fn forward(&self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let rows = g.input(x.transpose()?);
        let y = self.forward_graph(&mut g, &b, rows)?;
        g.value(y).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::permutation::{apply_permutation, PermutationMap};

    #[test]
    fn output_depends_on_channel_position() {
        let p = ContrastBaselineParams::init(&ContrastConfig::default(), 4, 8, 3, 1).unwrap();
        let x = Tensor::from_fn(vec![8, 4], |i| (i as f64 * 0.7).sin());
        let pi = PermutationMap::new(vec![1, 0, 3, 2]).unwrap();
        let y = p.forward(&x, Mode::Eval).unwrap();
        let yp = p
            .forward(&apply_permutation(&x, &pi).unwrap(), Mode::Eval)
            .unwrap();
        assert!(yp.max_abs_diff(&apply_permutation(&y, &pi).unwrap()) > 1e-6);
    }

    #[test]
    fn channel_count_is_fixed() {
        let p = ContrastBaselineParams::init(&ContrastConfig::default(), 4, 8, 3, 1).unwrap();
        assert!(p.forward(&Tensor::zeros(vec![8, 5]), Mode::Eval).is_err());
    }
}
