//! Permutation-equivariant interaction over the set of channel features.
//!
//! The block is a pre-norm transformer encoder applied to the `C × D` feature matrix with
//! no positional encoding and no mask, so every parameter is shared across channels and
//! the map commutes with any reordering of the rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{AttentionMask, BoundBlock, DropoutCtx, TransformerBlock};
use crate::numerics::{DropoutStream, Graph, Mode, Parameterized, Tensor, Var};

/// The unordered set `{h_1..h_C}` stored as a `C × D` matrix (row `i` is channel `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFeatureSet(Tensor);

impl ChannelFeatureSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::arg("channel feature set is empty"));
        }
        Ok(Self(Tensor::stack_rows(rows)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, d) = t.dims2()?;
        if c == 0 || d == 0 {
            return Err(Error::arg(
                "channel feature set must have C >= 1 and D >= 1",
            ));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn n_channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn gather(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim();
        if perm.len() != self.n_channels() {
            return Err(Error::arg(
                "permutation length does not match channel count",
            ));
        }
        let mut data = Vec::with_capacity(perm.len() * d);
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Ok(Self(Tensor::new(vec![perm.len(), d], data)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub dim: usize,
    pub n_heads: usize,
    /// Number of stacked blocks.
    pub depth: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_heads: 4,
            depth: 1,
            dropout: 0.3,
            ffn_mult: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBlockParams {
    pub config: SpatialConfig,
    pub blocks: Vec<TransformerBlock>,
}

pub struct BoundSpatial {
    blocks: Vec<BoundBlock>,
    dropout: f64,
}

impl Parameterized for SpatialBlockParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("spatial.block{i}"), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("spatial.block{i}"), f);
        }
    }
}

impl SpatialBlockParams {
    /// Random, trainable initialization.
    pub fn init(config: &SpatialConfig, seed: u64) -> Result<Self> {
        if config.depth == 0 {
            return Err(Error::Config("spatial depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                config.dropout
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..config.depth)
            .map(|_| TransformerBlock::new(&mut rng, config.dim, config.n_heads, config.ffn_mult))
            .collect::<Result<Vec<_>>>()?;
        let mut p = Self {
            config: config.clone(),
            blocks,
        };
        p.set_trainable(true);
        Ok(p)
    }

    /// Parameters that make every block the identity map.
    pub fn identity(config: &SpatialConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        for b in &mut p.blocks {
            b.make_identity();
        }
        p.set_trainable(true);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn bind(&self, g: &mut Graph) -> BoundSpatial {
        BoundSpatial {
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.bind(g, &format!("spatial.block{i}")))
                .collect(),
            dropout: self.config.dropout,
        }
    }

    fn check(&self, h: &Tensor) -> Result<()> {
        let (c, d) = h.dims2()?;
        if c == 0 {
            return Err(Error::arg("spatial block needs at least one channel"));
        }
        if d != self.dim() {
            return Err(Error::arg(format!(
                "feature width {d}, spatial block expects {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl BoundSpatial {
    /// Attention interaction over the rows of `h` (`C × D`).
    pub fn forward(&self, g: &mut Graph, h: Var, mode: Mode) -> Result<Var> {
        let mut stream = match mode {
            Mode::Train { seed } => Some(DropoutStream::new(seed)),
            Mode::Eval => None,
        };
        let mut ctx = DropoutCtx {
            rate: self.dropout,
            stream: stream.as_mut(),
        };
        let mut x = h;
        for b in &self.blocks {
            x = b.forward(g, x, AttentionMask::None, &mut ctx)?;
        }
        Ok(x)
    }

    /// Mean-pooling ablation: the attention sublayer is replaced by the set mean,
    /// `out_i = h_i + FFN(LN2(h_i + mean_j h_j))`.
    pub fn forward_mean_pool(&self, g: &mut Graph, h: Var, mode: Mode) -> Result<Var> {
        let mut stream = match mode {
            Mode::Train { seed } => Some(DropoutStream::new(seed)),
            Mode::Eval => None,
        };
        let mut ctx = DropoutCtx {
            rate: self.dropout,
            stream: stream.as_mut(),
        };
        let mut x = h;
        for b in &self.blocks {
            let mean = g.mean_rows(x)?;
            let mixed = g.add_row(x, mean)?;
            let ffn = b.ffn(g, mixed, &mut ctx)?;
            x = g.add(x, ffn)?;
        }
        Ok(x)
    }
}

/// `H' = f(H)` for one feature set. Eval mode is deterministic; train mode draws dropout
/// masks from the given seed.
pub fn spatial_forward(
    h: &ChannelFeatureSet,
    params: &SpatialBlockParams,
    mode: Mode,
) -> Result<ChannelFeatureSet> {
    params.check(h.tensor())?;
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let x = g.input(h.tensor().clone());
    let y = b.forward(&mut g, x, mode)?;
    ChannelFeatureSet::from_tensor(g.value(y).clone())
}

/// Eval-mode attention probabilities, `depth × n_heads` matrices of size `C × C`,
/// ordered block-major.
pub fn attention_weights(
    h: &ChannelFeatureSet,
    params: &SpatialBlockParams,
) -> Result<Vec<Tensor>> {
    params.check(h.tensor())?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let mut x = g.input(h.tensor().clone());
    let mut out = Vec::new();
    for b in &bound.blocks {
        let xn = b.normalize_for_attention(&mut g, x)?;
        let (probs, _) = b.attention_probs(&mut g, xn, AttentionMask::None)?;
        out.extend(probs.iter().map(|p| g.value(*p).clone()));
        x = b.forward(&mut g, x, AttentionMask::None, &mut DropoutCtx::off())?;
    }
    Ok(out)
}

/// Mean-pooling ablation comparator in eval mode.
pub fn mean_pool_interaction(
    h: &ChannelFeatureSet,
    params: &SpatialBlockParams,
) -> Result<ChannelFeatureSet> {
    params.check(h.tensor())?;
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let x = g.input(h.tensor().clone());
    let y = b.forward_mean_pool(&mut g, x, Mode::Eval)?;
    ChannelFeatureSet::from_tensor(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(dim: usize) -> SpatialConfig {
        SpatialConfig {
            dim,
            n_heads: 2,
            ..SpatialConfig::default()
        }
    }

    fn random_set(c: usize, d: usize, seed: u64) -> ChannelFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        ChannelFeatureSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn singleton_attention_is_one() {
        let p = SpatialBlockParams::init(&cfg(4), 1).unwrap();
        let h = random_set(1, 4, 2);
        for w in attention_weights(&h, &p).unwrap() {
            assert_eq!(w.data(), &[1.0]);
        }
        let out = spatial_forward(&h, &p, Mode::Eval).unwrap();
        assert_eq!(out.n_channels(), 1);
    }

    #[test]
    fn duplicate_pair_is_symmetric() {
        let p = SpatialBlockParams::init(&cfg(4), 1).unwrap();
        let h = ChannelFeatureSet::from_rows(&vec![vec![0.1, -0.4, 0.9, 2.0]; 2]).unwrap();
        let out = spatial_forward(&h, &p, Mode::Eval).unwrap();
        assert_eq!(out.row(0), out.row(1));
        for w in attention_weights(&h, &p).unwrap() {
            assert!(w.data().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn rejects_empty_and_ragged_sets() {
        assert!(ChannelFeatureSet::from_rows(&[]).is_err());
        assert!(ChannelFeatureSet::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        let p = SpatialBlockParams::init(&cfg(4), 1).unwrap();
        let wrong = random_set(3, 6, 1);
        assert!(spatial_forward(&wrong, &p, Mode::Eval).is_err());
    }

    #[test]
    fn train_mode_reproducible_for_fixed_seed() {
        let p = SpatialBlockParams::init(&cfg(8), 1).unwrap();
        let h = random_set(5, 8, 3);
        let a = spatial_forward(&h, &p, Mode::Train { seed: 11 }).unwrap();
        let b = spatial_forward(&h, &p, Mode::Train { seed: 11 }).unwrap();
        let c = spatial_forward(&h, &p, Mode::Train { seed: 12 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_params_are_identity() {
        let p = SpatialBlockParams::identity(&cfg(8)).unwrap();
        let h = random_set(4, 8, 3);
        assert_eq!(spatial_forward(&h, &p, Mode::Eval).unwrap(), h);
    }

    #[test]
    fn mean_pool_singleton_is_residual_ffn() {
        let p = SpatialBlockParams::init(&cfg(4), 5).unwrap();
        let h = random_set(1, 4, 6);
        let out = mean_pool_interaction(&h, &p).unwrap();
        // C = 1: mean equals h, and layer norm is scale invariant up to eps.
        let b = &p.blocks[0];
        let mut g = Graph::new();
        let bb = b.bind(&mut g, "x");
        let x = g.input(h.tensor().clone());
        let doubled = g.scale(x, 2.0);
        let ffn = bb.ffn(&mut g, doubled, &mut DropoutCtx::off()).unwrap();
        let expect = g.add(x, ffn).unwrap();
        assert!(out.tensor().max_abs_diff(g.value(expect)) < 1e-12);
    }

    #[test]
    fn mean_pool_mean_component_matches_loop() {
        let p = SpatialBlockParams::init(&cfg(4), 5).unwrap();
        let h = random_set(3, 4, 8);
        let mut mean = vec![0.0; 4];
        for i in 0..3 {
            for (m, v) in mean.iter_mut().zip(h.row(i)) {
                *m += v / 3.0;
            }
        }
        let b = &p.blocks[0];
        let mut g = Graph::new();
        let bb = b.bind(&mut g, "x");
        let mut rows = Vec::new();
        for i in 0..3 {
            let mixed: Vec<f64> = h.row(i).iter().zip(&mean).map(|(a, m)| a + m).collect();
            let mv = g.input(Tensor::new(vec![1, 4], mixed.clone()).unwrap());
            let y = bb.feed_forward(&mut g, mv, &mut DropoutCtx::off()).unwrap();
            let row: Vec<f64> = g
                .value(y)
                .data()
                .iter()
                .zip(&mixed)
                .zip(h.row(i))
                .map(|((y, m), x)| x + (y - m))
                .collect();
            rows.push(row);
        }
        let oracle = Tensor::stack_rows(&rows).unwrap();
        let got = mean_pool_interaction(&h, &p).unwrap();
        assert!(got.tensor().max_abs_diff(&oracle) < 1e-12);
    }
}
