//! The three-stage forecaster: frozen per-channel encode, set interaction, frozen decode.

use serde::{Deserialize, Serialize};

use crate::codec::{BoundCodec, CodecParams, Pooling};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Mode, Parameterized, Tensor, Var};
use crate::spatial::{BoundSpatial, ChannelFeatureSet, SpatialBlockParams, SpatialConfig};

/// How channel features exchange information between encode and decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    #[default]
    Attention,
    MeanPool,
    /// Channel-independent: the spatial stage is skipped.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpiriModel {
    pub codec: CodecParams,
    pub spatial: SpatialBlockParams,
    /// Statistics used by [`CpiriModel::forecast_raw`].
    pub norm_stats: NormalizationStats,
    pub interaction: Interaction,
    pub pooling: Pooling,
}

impl Parameterized for CpiriModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.codec.visit_params(f);
        self.spatial.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.codec.visit_params_mut(f);
        self.spatial.visit_params_mut(f);
    }
}

/// Codec and spatial parameters recorded on one graph.
pub struct BoundModel {
    pub codec: BoundCodec,
    pub spatial: BoundSpatial,
}

impl CpiriModel {
    /// Freezes `codec` and attaches a freshly initialized spatial block of matching width.
    pub fn new(
        mut codec: CodecParams,
        spatial: &SpatialConfig,
        norm_stats: NormalizationStats,
        seed: u64,
    ) -> Result<Self> {
        if spatial.dim != codec.dim() {
            return Err(Error::Config(format!(
                "spatial width {} differs from codec width {}",
                spatial.dim,
                codec.dim()
            )));
        }
        codec.set_frozen(true);
        Ok(Self {
            codec,
            spatial: SpatialBlockParams::init(spatial, seed)?,
            norm_stats,
            interaction: Interaction::Attention,
            pooling: Pooling::LastPatch,
        })
    }

    pub fn with_interaction(mut self, interaction: Interaction) -> Self {
        self.interaction = interaction;
        self
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn input_len(&self) -> usize {
        self.codec.input_len()
    }

    pub fn horizon(&self) -> usize {
        self.codec.horizon()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let (l, c) = x.dims2()?;
        if l != self.input_len() {
            return Err(Error::arg(format!(
                "history has {l} steps, model expects {}",
                self.input_len()
            )));
        }
        if c == 0 {
            return Err(Error::arg("history has no channels"));
        }
        if !x.is_finite() {
            return Err(Error::arg("history contains non-finite values"));
        }
        Ok(c)
    }

    /// Stage one: `C × D` features of an `L × C` normalized history.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.codec.encode_rows(&x.transpose()?, self.pooling)
    }

    /// Stages two and three from precomputed features; returns `T × C`.
    pub fn forward_from_features(&self, h: &Tensor, mode: Mode) -> Result<Tensor> {
        let enriched = self.interact(h, mode)?;
        self.codec.decode_rows(&enriched)?.transpose()
    }

    fn interact(&self, h: &Tensor, mode: Mode) -> Result<Tensor> {
        let set = ChannelFeatureSet::from_tensor(h.clone())?;
        Ok(match self.interaction {
            Interaction::Attention => {
                crate::spatial::spatial_forward(&set, &self.spatial, mode)?.into_tensor()
            }
            Interaction::MeanPool => {
                let mut g = Graph::new();
                let b = self.spatial.bind(&mut g);
                let x = g.input(h.clone());
                let y = b.forward_mean_pool(&mut g, x, mode)?;
                g.value(y).clone()
            }
            Interaction::None => h.clone(),
        })
    }

    /// `L × C` normalized history to `T × C` normalized forecast.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.encode(x)?;
        self.forward_from_features(&h, mode)
    }

    /// Eval-mode forecast with the feature sets before (`H`) and after (`H'`) interaction.
    pub fn forward_with_embeddings(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let h = self.encode(x)?;
        let enriched = self.interact(&h, Mode::Eval)?;
        let y = self.codec.decode_rows(&enriched)?.transpose()?;
        Ok((y, h, enriched))
    }

    /// Channel-independent forecast: decode(encode(x)) per channel.
    pub fn ci_forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.encode(x)?;
        self.codec.decode_rows(&h)?.transpose()
    }

    /// Raw history in, raw forecast out, using the model's own statistics.
    pub fn forecast_raw(&self, x_raw: &Tensor) -> Result<Tensor> {
        forecast_with_stats(self, x_raw, &self.norm_stats)
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            codec: self.codec.bind(g),
            spatial: self.spatial.bind(g),
        }
    }

    /// Interaction and decode on a graph; `h` is `C × D`, the result `C × T`.
    pub fn head_graph(&self, g: &mut Graph, b: &BoundModel, h: Var, mode: Mode) -> Result<Var> {
        let enriched = match self.interaction {
            Interaction::Attention => b.spatial.forward(g, h, mode)?,
            Interaction::MeanPool => b.spatial.forward_mean_pool(g, h, mode)?,
            Interaction::None => h,
        };
        self.codec.decode_graph(g, &b.codec, enriched)
    }

    /// Encode on a graph so that gradients can reach the codec; `x` is `L × C`.
    pub fn encode_graph(&self, g: &mut Graph, b: &BoundModel, x: &Tensor) -> Result<Var> {
        self.check(x)?;
        let xt = x.transpose()?;
        let (c, _) = xt.dims2()?;
        let rows = (0..c)
            .map(|i| {
                self.codec
                    .encode_graph(g, &b.codec, xt.row(i), self.pooling)
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat_rows(&rows)
        }
    }
}

/// Normalizes with `stats`, forecasts in eval mode, and maps back to original units.
pub fn forecast_with_stats(
    model: &CpiriModel,
    x_raw: &Tensor,
    stats: &NormalizationStats,
) -> Result<Tensor> {
    let x = stats.apply(x_raw)?;
    let y = model.forward(&x, Mode::Eval)?;
    stats.inverse(&y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::PatchConfig;
    use crate::eval::permutation::{apply_permutation, PermutationMap};
    use crate::spatial::spatial_forward;

    fn model() -> CpiriModel {
        let cfg = PatchConfig {
            patch_len: 4,
            input_len: 12,
            horizon: 6,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
        };
        let codec = CodecParams::init(&cfg, 3).unwrap();
        let sp = SpatialConfig {
            dim: 8,
            n_heads: 2,
            ..SpatialConfig::default()
        };
        CpiriModel::new(codec, &sp, NormalizationStats::identity(4), 5).unwrap()
    }

    fn history(c: usize, seed: u64) -> Tensor {
        Tensor::from_fn(vec![12, c], |i| {
            ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin()
        })
    }

    #[test]
    fn only_spatial_params_trainable() {
        let m = model();
        m.visit_params(&mut |name, t| {
            assert_eq!(t.requires_grad(), name.starts_with("spatial."), "{name}")
        });
    }

    #[test]
    fn identical_channels_identical_columns() {
        let m = model();
        let col: Vec<f64> = (0..12).map(|t| (t as f64 * 0.4).cos()).collect();
        let x = Tensor::from_fn(vec![12, 3], |i| col[i / 3]);
        let y = m.forward(&x, Mode::Eval).unwrap();
        for t in 0..6 {
            assert_eq!(y.get2(t, 0), y.get2(t, 1));
            assert_eq!(y.get2(t, 1), y.get2(t, 2));
        }
    }

    #[test]
    fn singleton_composes_stages() {
        let m = model();
        let x = history(1, 2);
        let h = m.encode(&x).unwrap();
        let set = ChannelFeatureSet::from_tensor(h).unwrap();
        let enriched = spatial_forward(&set, &m.spatial, Mode::Eval).unwrap();
        let expect = m
            .codec
            .decode_rows(enriched.tensor())
            .unwrap()
            .transpose()
            .unwrap();
        assert_eq!(m.forward(&x, Mode::Eval).unwrap(), expect);
    }

    #[test]
    fn ci_forward_equals_identity_block() {
        let mut m = model();
        m.spatial = SpatialBlockParams::identity(&m.spatial.config).unwrap();
        let x = history(4, 1);
        assert_eq!(
            m.forward(&x, Mode::Eval).unwrap(),
            m.ci_forward(&x).unwrap()
        );
    }

    #[test]
    fn embeddings_follow_permutation() {
        let m = model();
        let x = history(5, 4);
        let pi = PermutationMap::random(5, 9);
        let (y, h, hp) = m.forward_with_embeddings(&x).unwrap();
        let (y2, h2, hp2) = m
            .forward_with_embeddings(&apply_permutation(&x, &pi).unwrap())
            .unwrap();
        assert_eq!(h2, pi.apply_rows(&h).unwrap());
        assert!(hp2.max_abs_diff(&pi.apply_rows(&hp).unwrap()) < 1e-12);
        assert!(y2.max_abs_diff(&apply_permutation(&y, &pi).unwrap()) < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let m = model();
        let x = Tensor::zeros(vec![11, 2]);
        assert!(matches!(m.forward(&x, Mode::Eval), Err(Error::Argument(_))));
    }

    #[test]
    fn graph_path_matches_direct_path() {
        let m = model();
        let x = history(3, 7);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let h = m.encode_graph(&mut g, &b, &x).unwrap();
        let y = m.head_graph(&mut g, &b, h, Mode::Eval).unwrap();
        let direct = m.forward(&x, Mode::Eval).unwrap().transpose().unwrap();
        assert!(g.value(y).max_abs_diff(&direct) < 1e-12);
    }
}
