//! Frozen per-channel temporal encoder/decoder and its one-off pretraining.
//!
//! A series of length `L` is cut into patches of `patch_len` samples, embedded, and run
//! through causal transformer layers. The representation of the final patch (after a
//! closing layer norm) is the channel feature `h ∈ R^D`. A linear head maps any `D`-vector
//! back to a `T`-step point forecast. Every channel is processed in isolation.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{
    AttentionMask, BoundBlock, BoundLayerNorm, BoundLinear, DropoutCtx, LayerNormParams, Linear,
    TransformerBlock,
};
use crate::numerics::{
    adam_step, Graph, OptimizerConfig, OptimizerState, Parameterized, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub patch_len: usize,
    /// History length `L`.
    pub input_len: usize,
    /// Forecast horizon `T` produced by the decoder head.
    pub horizon: usize,
    /// Feature width `D`.
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_len: 16,
            input_len: 96,
            horizon: 96,
            hidden_dim: 64,
            n_layers: 3,
            n_heads: 4,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_len == 0 || self.input_len == 0 || self.horizon == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "patch_len, input_len, horizon and hidden_dim must be positive".into(),
            ));
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        Ok(())
    }

    /// Patches per series; a ragged history is left-padded to a whole number of patches.
    pub fn n_patches(&self) -> usize {
        self.input_len.div_ceil(self.patch_len)
    }
}

/// Which patch states become the channel feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    LastPatch,
    MeanPatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub config: PatchConfig,
    pub patch_embed: Linear,
    pub pos_embed: Tensor,
    pub layers: Vec<TransformerBlock>,
    pub final_norm: LayerNormParams,
    pub decoder_head: Linear,
}

pub struct BoundCodec {
    patch_embed: BoundLinear,
    pos_embed: Var,
    layers: Vec<BoundBlock>,
    final_norm: BoundLayerNorm,
    decoder_head: BoundLinear,
}

impl Parameterized for CodecParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.patch_embed.visit("codec.patch_embed", f);
        f("codec.pos_embed", &self.pos_embed);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("codec.layer{i}"), f);
        }
        self.final_norm.visit("codec.final_norm", f);
        self.decoder_head.visit("codec.decoder_head", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.patch_embed.visit_mut("codec.patch_embed", f);
        f("codec.pos_embed", &mut self.pos_embed);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("codec.layer{i}"), f);
        }
        self.final_norm.visit_mut("codec.final_norm", f);
        self.decoder_head.visit_mut("codec.decoder_head", f);
    }
}

impl CodecParams {
    /// Random initialization; the result is trainable (not frozen).
    pub fn init(config: &PatchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let patch_embed = Linear::new(&mut rng, config.patch_len, d);
        let pos_embed = Tensor::from_fn(vec![config.n_patches(), d], |_| {
            rng.random_range(-0.02..0.02)
        });
        let layers = (0..config.n_layers)
            .map(|_| TransformerBlock::new(&mut rng, d, config.n_heads, 4))
            .collect::<Result<Vec<_>>>()?;
        let mut params = Self {
            config: config.clone(),
            patch_embed,
            pos_embed,
            layers,
            final_norm: LayerNormParams::new(d),
            decoder_head: Linear::new(&mut rng, d, config.horizon),
        };
        params.set_trainable(true);
        Ok(params)
    }

    /// True when no codec tensor receives gradients.
    pub fn is_frozen(&self) -> bool {
        let mut any = false;
        self.visit_params(&mut |_, t| any |= t.requires_grad());
        !any
    }

    /// Freezes or unfreezes every codec tensor.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.set_trainable(!frozen);
    }

    pub fn dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len
    }

    pub fn bind(&self, g: &mut Graph) -> BoundCodec {
        BoundCodec {
            patch_embed: self.patch_embed.bind(g, "codec.patch_embed"),
            pos_embed: g.param("codec.pos_embed", &self.pos_embed),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.bind(g, &format!("codec.layer{i}")))
                .collect(),
            final_norm: self.final_norm.bind(g, "codec.final_norm"),
            decoder_head: self.decoder_head.bind(g, "codec.decoder_head"),
        }
    }

    /// Cuts a length-`L` series into a `P × patch_len` matrix, left-padding with the first
    /// observed value when `L` is not a multiple of `patch_len`.
    pub fn patchify(&self, series: &[f64]) -> Result<Tensor> {
        let cfg = &self.config;
        if series.len() != cfg.input_len {
            return Err(Error::arg(format!(
                "series has length {}, codec expects {}",
                series.len(),
                cfg.input_len
            )));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("series contains non-finite values"));
        }
        let p = cfg.n_patches();
        let pad = p * cfg.patch_len - series.len();
        let mut data = vec![series[0]; pad];
        data.extend_from_slice(series);
        Tensor::new(vec![p, cfg.patch_len], data)
    }

    /// Hidden states of every patch after the final layer norm (`P × D`).
    pub fn patch_states_graph(&self, g: &mut Graph, b: &BoundCodec, series: &[f64]) -> Result<Var> {
        let patches = self.patchify(series)?;
        let x = g.input(patches);
        let mut h = b.patch_embed.forward(g, x)?;
        h = g.add(h, b.pos_embed)?;
        let mut no_dropout = DropoutCtx::off();
        for layer in &b.layers {
            h = layer.forward(g, h, AttentionMask::Causal, &mut no_dropout)?;
        }
        b.final_norm.forward(g, h)
    }

    /// Channel feature (`1 × D`) recorded on `g`.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        b: &BoundCodec,
        series: &[f64],
        pooling: Pooling,
    ) -> Result<Var> {
        let states = self.patch_states_graph(g, b, series)?;
        match pooling {
            Pooling::LastPatch => g.select_row(states, self.config.n_patches() - 1),
            Pooling::MeanPatch => g.mean_rows(states),
        }
    }

    /// Forecast rows (`n × T`) for feature rows (`n × D`) recorded on `g`.
    pub fn decode_graph(&self, g: &mut Graph, b: &BoundCodec, h: Var) -> Result<Var> {
        b.decoder_head.forward(g, h)
    }

    pub fn patch_states(&self, series: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let v = self.patch_states_graph(&mut g, &b, series)?;
        Ok(g.value(v).clone())
    }

    /// Encodes each row of a `C × L` matrix into a `C × D` feature matrix.
    pub fn encode_rows(&self, x: &Tensor, pooling: Pooling) -> Result<Tensor> {
        let (c, l) = x.dims2()?;
        if l != self.config.input_len {
            return Err(Error::arg(format!(
                "history length {l}, codec expects {}",
                self.config.input_len
            )));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let mut out = Vec::with_capacity(c * self.dim());
        for i in 0..c {
            let h = self.encode_graph(&mut g, &b, x.row(i), pooling)?;
            out.extend_from_slice(g.value(h).data());
        }
        Tensor::new(vec![c, self.dim()], out)
    }

    /// Decodes each row of a `C × D` matrix into a `C × T` forecast matrix.
    pub fn decode_rows(&self, h: &Tensor) -> Result<Tensor> {
        let (_, d) = h.dims2()?;
        if d != self.dim() {
            return Err(Error::arg(format!(
                "feature width {d}, codec expects {}",
                self.dim()
            )));
        }
        if !h.is_finite() {
            return Err(Error::arg("features contain non-finite values"));
        }
        self.decoder_head.apply(h)
    }
}

/// Final-patch feature of one channel.
pub fn encode_channel(series: &[f64], params: &CodecParams) -> Result<Vec<f64>> {
    let x = Tensor::new(vec![1, series.len()], series.to_vec())?;
    Ok(params.encode_rows(&x, Pooling::LastPatch)?.into_vec())
}

/// Mean of all patch states of one channel.
pub fn encode_channel_meanpool(series: &[f64], params: &CodecParams) -> Result<Vec<f64>> {
    let x = Tensor::new(vec![1, series.len()], series.to_vec())?;
    Ok(params.encode_rows(&x, Pooling::MeanPatch)?.into_vec())
}

/// `T`-step forecast from one (possibly enriched) channel feature.
pub fn decode_channel(h: &[f64], params: &CodecParams) -> Result<Vec<f64>> {
    let t = Tensor::new(vec![1, h.len()], h.to_vec())?;
    Ok(params.decode_rows(&t)?.into_vec())
}

/// Synthetic univariate pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainCorpusSpec {
    pub n_series: usize,
    pub length: usize,
    /// Candidate seasonal periods; each series mixes one or two of them.
    pub periods: Vec<f64>,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Trend slopes are drawn from `±max_trend_slope` per step.
    pub max_trend_slope: f64,
    pub ar_coefficient: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PretrainCorpusSpec {
    fn default() -> Self {
        Self {
            n_series: 64,
            length: 1024,
            periods: vec![12.0, 24.0, 48.0, 96.0, 168.0],
            amplitude_min: 0.5,
            amplitude_max: 2.0,
            max_trend_slope: 0.002,
            ar_coefficient: 0.8,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

impl PretrainCorpusSpec {
    /// Only sinusoids: no trend and no noise.
    pub fn pure_sinusoid(n_series: usize, length: usize, seed: u64) -> Self {
        Self {
            n_series,
            length,
            max_trend_slope: 0.0,
            noise_std: 0.0,
            seed,
            ..Self::default()
        }
    }

    /// Generates `n_series` z-scored series. Identical spec and seed give identical bits.
    pub fn generate(&self) -> Result<Vec<Vec<f64>>> {
        self.generate_with_seed(self.seed)
    }

    fn generate_with_seed(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        if self.n_series == 0 || self.length < 2 {
            return Err(Error::spec(
                "pretraining corpus needs at least one series of length >= 2",
            ));
        }
        if self.periods.is_empty() || self.periods.iter().any(|p| *p <= 0.0) {
            return Err(Error::spec("pretraining corpus needs positive periods"));
        }
        if !(self.amplitude_min <= self.amplitude_max) || !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::spec("invalid amplitude range or AR coefficient"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::with_capacity(self.n_series);
        for _ in 0..self.n_series {
            let n_waves = rng.random_range(1..=2);
            let waves: Vec<(f64, f64, f64)> = (0..n_waves)
                .map(|_| {
                    let amp = if self.amplitude_max > self.amplitude_min {
                        rng.random_range(self.amplitude_min..self.amplitude_max)
                    } else {
                        self.amplitude_min
                    };
                    let period = *self.periods.choose(&mut rng).expect("non-empty");
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (amp, period, phase)
                })
                .collect();
            let slope = if self.max_trend_slope > 0.0 {
                rng.random_range(-self.max_trend_slope..self.max_trend_slope)
            } else {
                0.0
            };
            let mut noise = 0.0;
            let mut s = Vec::with_capacity(self.length);
            for t in 0..self.length {
                let tf = t as f64;
                let seasonal: f64 = waves
                    .iter()
                    .map(|(a, p, ph)| a * (std::f64::consts::TAU * tf / p + ph).sin())
                    .sum();
                noise = self.ar_coefficient * noise + self.noise_std * normal.sample(&mut rng);
                s.push(seasonal + slope * tf + noise);
            }
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64)
                .sqrt()
                .max(1e-8);
            s.iter_mut().for_each(|v| *v = (*v - mean) / std);
            out.push(s);
        }
        Ok(out)
    }

    /// Held-out validation series drawn from the same distribution with a derived seed.
    pub fn generate_validation(&self, n_series: usize) -> Result<Vec<Vec<f64>>> {
        let spec = Self {
            n_series,
            ..self.clone()
        };
        spec.generate_with_seed(crate::numerics::graph::splitmix64(
            self.seed ^ 0x7661_6c69_6461_7465,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSchedule {
    pub epochs: usize,
    pub windows_per_epoch: usize,
    pub batch_size: usize,
    pub validation_series: usize,
    pub validation_windows: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            windows_per_epoch: 512,
            batch_size: 16,
            validation_series: 16,
            validation_windows: 128,
            optimizer: OptimizerConfig {
                milestones: vec![],
                ..OptimizerConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub train_loss: Vec<f64>,
    /// `None` when no epoch ran.
    pub val_mae: Option<f64>,
    pub persistence_mae: Option<f64>,
}

fn sample_windows(
    series: &[Vec<f64>],
    span: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let usable: Vec<usize> = (0..series.len())
        .filter(|&i| series[i].len() >= span)
        .collect();
    if usable.is_empty() {
        return Err(Error::spec(format!(
            "corpus series are shorter than one window ({span} samples)"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let s = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..=series[s].len() - span);
            (s, start)
        })
        .collect())
}

/// Trains the codec on direct `L → T` forecasting of univariate corpus series with an L1
/// loss, then freezes it.
///
/// With `epochs > 0` the trained codec must beat the predict-last-value baseline on held-out
/// series; otherwise a training error is returned.
pub fn pretrain_codec(
    corpus: &PretrainCorpusSpec,
    config: &PatchConfig,
    schedule: &PretrainSchedule,
) -> Result<(CodecParams, PretrainReport)> {
    schedule.optimizer.validate()?;
    let mut params = CodecParams::init(config, schedule.seed)?;
    let mut report = PretrainReport {
        train_loss: Vec::new(),
        val_mae: None,
        persistence_mae: None,
    };
    if schedule.epochs == 0 {
        params.set_frozen(true);
        return Ok((params, report));
    }
    let train = corpus.generate()?;
    let val = corpus.generate_validation(schedule.validation_series.max(1))?;
    let (l, t) = (config.input_len, config.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::numerics::graph::splitmix64(
        schedule.seed ^ 0x7072_6574,
    ));
    let val_windows = sample_windows(&val, l + t, schedule.validation_windows.max(1), &mut rng)?;
    let mut opt = OptimizerState::new(schedule.optimizer.clone());
    let batch = schedule.batch_size.max(1);

    for epoch in 0..schedule.epochs {
        opt.set_epoch(epoch);
        let windows = sample_windows(&train, l + t, schedule.windows_per_epoch.max(1), &mut rng)?;
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in windows.chunks(batch) {
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let mut losses = Vec::with_capacity(chunk.len());
            for &(s, start) in chunk {
                let w = &train[s][start..start + l + t];
                let h = params.encode_graph(&mut g, &b, &w[..l], Pooling::LastPatch)?;
                let pred = params.decode_graph(&mut g, &b, h)?;
                let target = g.input(Tensor::new(vec![1, t], w[l..].to_vec())?);
                losses.push(g.mae(pred, target)?);
            }
            let stacked = g.concat_rows(&losses)?;
            let loss = g.mean(stacked);
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Training {
                    stage: "pretraining epoch",
                    index: epoch,
                    message: "loss is not finite".into(),
                });
            }
            let grads = g.backward(loss)?;
            adam_step(&mut params, &grads, &mut opt)?;
            epoch_loss += lv;
            n_batches += 1;
        }
        report.train_loss.push(epoch_loss / n_batches as f64);
    }

    let mut model_err = 0.0;
    let mut persist_err = 0.0;
    for &(s, start) in &val_windows {
        let w = &val[s][start..start + l + t];
        let h = encode_channel(&w[..l], &params)?;
        let pred = decode_channel(&h, &params)?;
        let last = w[l - 1];
        for (p, y) in pred.iter().zip(&w[l..]) {
            model_err += (p - y).abs();
            persist_err += (last - y).abs();
        }
    }
    let denom = (val_windows.len() * t) as f64;
    let (val_mae, persistence_mae) = (model_err / denom, persist_err / denom);
    report.val_mae = Some(val_mae);
    report.persistence_mae = Some(persistence_mae);
    if !val_mae.is_finite() || val_mae >= persistence_mae {
        return Err(Error::Training {
            stage: "pretraining epoch",
            index: schedule.epochs,
            message: format!(
                "validation MAE {val_mae:.4} does not beat the persistence baseline {persistence_mae:.4}"
            ),
        });
    }
    params.set_frozen(true);
    Ok((params, report))
}
