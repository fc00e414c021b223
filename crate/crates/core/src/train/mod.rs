//! Training with per-batch channel shuffling, freeze schedules, and checkpoints.

pub mod checkpoint;
mod experiment;
mod subset;

pub use checkpoint::{Checkpoint, Entry, ModelSpec, TrainedModel, CHECKPOINT_VERSION};
pub use experiment::{
    contrast_experiment, ContrastExperimentConfig, ContrastExperimentReport, ShuffleComparison,
};
pub use subset::{train_subset_protocol, SubsetCell, SubsetGrid};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ForecastWindow, NormalizationStats};
use crate::digest::params_digest;
use crate::error::{Error, Result};
use crate::eval::baseline::{BoundContrast, ContrastBaselineParams};
use crate::eval::{MetricAccumulator, PermutationMap, ShuffleMode, WAPE_EPS_SCALE};
use crate::numerics::graph::splitmix64;
use crate::numerics::{
    adam_step, Graph, Mode, OptimizerConfig, OptimizerState, Parameterized, Tensor, Var,
};
use crate::pipeline::{BoundModel, CpiriModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Draw one channel permutation per batch and apply it to inputs and targets.
    pub shuffle_channels: bool,
    /// The codec becomes trainable for this many final epochs.
    pub unfreeze_last_epochs: usize,
    /// Train on `ceil(fraction · C)` sampled channels.
    pub channel_fraction: f64,
    /// Stop after this many epochs without a better validation WAPE (0 disables).
    pub patience: usize,
    pub master_seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            shuffle_channels: true,
            unfreeze_last_epochs: 0,
            channel_fraction: 1.0,
            patience: 10,
            master_seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.unfreeze_last_epochs > self.epochs {
            return Err(Error::Config(format!(
                "unfreeze_last_epochs {} exceeds epochs {}",
                self.unfreeze_last_epochs, self.epochs
            )));
        }
        if !(self.channel_fraction > 0.0 && self.channel_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "channel_fraction {} outside (0, 1]",
                self.channel_fraction
            )));
        }
        self.optimizer.validate()
    }
}

/// A model the trainer can fit.
///
/// Inputs reach the differentiable part as per-channel rows (`C × K`), where row `i`
/// depends on channel `i` alone. Reordering channels therefore reorders rows exactly,
/// which lets the trainer cache rows and permute them instead of recomputing.
pub trait Trainable: Parameterized + Clone {
    type Bound;

    fn bind_model(&self, g: &mut Graph) -> Self::Bound;

    /// `L × C` normalized history to `C × K` rows.
    fn channel_rows(&self, x: &Tensor) -> Result<Tensor>;

    /// `C × T` normalized forecast.
    fn rows_graph(&self, g: &mut Graph, b: &Self::Bound, rows: &Tensor, mode: Mode) -> Result<Var>;

    fn rows_eval(&self, rows: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind_model(&mut g);
        let y = self.rows_graph(&mut g, &b, rows, Mode::Eval)?;
        Ok(g.value(y).clone())
    }

    /// Toggles gradients on the pretrained backbone, if any.
    fn set_backbone_trainable(&mut self, _trainable: bool) {}

    /// Digest of the parameters that must stay frozen.
    fn frozen_digest(&self) -> Option<String> {
        None
    }
}

impl Trainable for CpiriModel {
    type Bound = BoundModel;

    fn bind_model(&self, g: &mut Graph) -> BoundModel {
        self.bind(g)
    }

    fn channel_rows(&self, x: &Tensor) -> Result<Tensor> {
        if self.codec.is_frozen() {
            self.encode(x)
        } else {
            x.transpose()
        }
    }

    fn rows_graph(&self, g: &mut Graph, b: &BoundModel, rows: &Tensor, mode: Mode) -> Result<Var> {
        let h = if self.codec.is_frozen() {
            g.input(rows.clone())
        } else {
            let x = rows.transpose()?;
            self.encode_graph(g, b, &x)?
        };
        self.head_graph(g, b, h, mode)
    }

    fn set_backbone_trainable(&mut self, trainable: bool) {
        self.codec.set_frozen(!trainable);
    }

    fn frozen_digest(&self) -> Option<String> {
        self.codec.is_frozen().then(|| params_digest(&self.codec))
    }
}

impl Trainable for ContrastBaselineParams {
    type Bound = BoundContrast;

    fn bind_model(&self, g: &mut Graph) -> BoundContrast {
        self.bind(g)
    }

    fn channel_rows(&self, x: &Tensor) -> Result<Tensor> {
        x.transpose()
    }

    fn rows_graph(
        &self,
        g: &mut Graph,
        b: &BoundContrast,
        rows: &Tensor,
        _mode: Mode,
    ) -> Result<Var> {
        let r = g.input(rows.clone());
        self.forward_graph(g, b, r)
    }
}

/// A window reduced to model rows plus its `C × T` target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rows: Tensor,
    pub target: Tensor,
}

pub fn prepare<M: Trainable>(model: &M, windows: &[ForecastWindow]) -> Result<Vec<Sample>> {
    windows
        .iter()
        .map(|w| {
            Ok(Sample {
                rows: model.channel_rows(&w.x)?,
                target: w.y.transpose()?,
            })
        })
        .collect()
}

/// Mean MAE over `batch` after reordering channels by `pi`, with gradients.
///
/// `step_seed` drives dropout; `None` runs the forward pass in eval mode.
pub fn batch_loss<M: Trainable>(
    model: &M,
    batch: &[Sample],
    pi: &PermutationMap,
    step_seed: Option<u64>,
) -> Result<(f64, crate::numerics::Gradients)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let mut g = Graph::new();
    let b = model.bind_model(&mut g);
    let mut losses = Vec::with_capacity(batch.len());
    for (k, s) in batch.iter().enumerate() {
        let rows = pi.apply_rows(&s.rows)?;
        let target = pi.apply_rows(&s.target)?;
        let mode = match step_seed {
            Some(seed) => Mode::Train {
                seed: splitmix64(seed.wrapping_add(k as u64)),
            },
            None => Mode::Eval,
        };
        let pred = model.rows_graph(&mut g, &b, &rows, mode)?;
        let t = g.input(target);
        losses.push(g.mae(pred, t)?);
    }
    let loss = if losses.len() == 1 {
        losses[0]
    } else {
        let stacked = g.concat_rows(&losses)?;
        g.mean(stacked)
    };
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?))
}

/// One optimizer step; a non-finite loss is a training error naming `step_index`.
pub fn train_step<M: Trainable>(
    model: &mut M,
    opt: &mut OptimizerState,
    batch: &[Sample],
    pi: &PermutationMap,
    step_seed: u64,
    step_index: usize,
) -> Result<f64> {
    let (loss, grads) = batch_loss(model, batch, pi, Some(step_seed))?;
    if !loss.is_finite() {
        return Err(Error::Training {
            stage: "step",
            index: step_index,
            message: format!("loss is {loss}"),
        });
    }
    adam_step(model, &grads, opt)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Normalized-space MAE on the validation windows, channels unshuffled.
    pub val_loss: f64,
    /// Percent, original units.
    pub val_wape: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Channel positions used for training when `channel_fraction < 1`.
    pub channels: Vec<usize>,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_wape,lr\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_wape, e.lr
            ));
        }
        s
    }
}

/// Validation MAE (normalized) and WAPE (original units) for prepared samples.
fn validate<M: Trainable>(
    model: &M,
    samples: &[Sample],
    stats: &NormalizationStats,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut acc = MetricAccumulator::default();
    let mut norm_err = 0.0;
    let mut count = 0usize;
    for s in samples {
        let pred = model.rows_eval(&s.rows)?;
        for (p, y) in pred.data().iter().zip(s.target.data()) {
            norm_err += (p - y).abs();
        }
        count += pred.len();
        acc.add(
            &stats.inverse(&s.target.transpose()?)?,
            &stats.inverse(&pred.transpose()?)?,
        )?;
    }
    let report = acc.finish(ShuffleMode::None, WAPE_EPS_SCALE)?;
    Ok((norm_err / count as f64, report.wape))
}

/// Keeps channels `idx` (in order) in every window.
pub fn select_window_channels(
    windows: &[ForecastWindow],
    idx: &[usize],
) -> Result<Vec<ForecastWindow>> {
    let pick = |m: &Tensor| -> Result<Tensor> {
        let (n, _) = m.dims2()?;
        let mut data = Vec::with_capacity(n * idx.len());
        for t in 0..n {
            let row = m.row(t);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        Tensor::new(vec![n, idx.len()], data)
    };
    windows
        .iter()
        .map(|w| {
            Ok(ForecastWindow {
                x: pick(&w.x)?,
                y: pick(&w.y)?,
                channel_ids: idx
                    .iter()
                    .map(|&i| w.channel_ids[i].clone())
                    .collect::<Vec<_>>()
                    .into(),
                start: w.start,
            })
        })
        .collect()
}

/// Sorted channel positions for a training fraction; all channels when `fraction = 1`.
pub fn training_channels(c: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "channel_fraction {fraction} outside (0, 1]"
        )));
    }
    let k = ((fraction * c as f64) - 1e-9).ceil().max(1.0) as usize;
    if k >= c {
        return Ok((0..c).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6368_616e));
    let mut idx = rand::seq::index::sample(&mut rng, c, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Full training loop: milestone learning-rate schedule, per-batch permutation, early
/// stopping on validation WAPE with the best parameters restored, optional unfreezing
/// of the backbone for the final epochs.
pub fn train<M: Trainable>(
    model: &mut M,
    train_windows: &[ForecastWindow],
    val_windows: &[ForecastWindow],
    stats: &NormalizationStats,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let c = stats.n_channels();
    let channels = training_channels(c, config.channel_fraction, config.master_seed)?;
    let (train_w, val_w, stats) = if channels.len() < c {
        (
            select_window_channels(train_windows, &channels)?,
            select_window_channels(val_windows, &channels)?,
            stats.select(&channels)?,
        )
    } else {
        (train_windows.to_vec(), val_windows.to_vec(), stats.clone())
    };
    if train_w.is_empty() && config.epochs > 0 {
        return Err(Error::spec("no training windows"));
    }

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        channels,
    };
    let mut opt = OptimizerState::new(config.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    let frozen_at_start = model.frozen_digest();
    let unfreeze_from = config.epochs - config.unfreeze_last_epochs;
    let mut train_samples = prepare(model, &train_w)?;
    let mut val_samples = prepare(model, &val_w)?;
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;
    let n_ch = stats.n_channels();

    for epoch in 0..config.epochs {
        if config.unfreeze_last_epochs > 0 && epoch == unfreeze_from {
            model.set_backbone_trainable(true);
            train_samples = prepare(model, &train_w)?;
            val_samples = prepare(model, &val_w)?;
        }
        opt.set_epoch(epoch);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let pi = if config.shuffle_channels {
                PermutationMap::random_with(n_ch, &mut rng)
            } else {
                PermutationMap::identity(n_ch)
            };
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_samples[i].clone()).collect();
            let step_seed = splitmix64(config.master_seed ^ splitmix64(step as u64 + 1));
            let loss =
                train_step(model, &mut opt, &batch, &pi, step_seed, step).map_err(|e| match e {
                    Error::Training { message, .. } => Error::Training {
                        stage: "epoch",
                        index: epoch,
                        message: format!("step {step}: {message}"),
                    },
                    other => other,
                })?;
            total += loss;
            n_batches += 1;
            step += 1;
        }
        if let (Some(before), Some(now)) = (&frozen_at_start, model.frozen_digest()) {
            if *before != now {
                return Err(Error::Protocol(format!(
                    "frozen parameters changed during epoch {epoch}"
                )));
            }
        }
        let (val_loss, val_wape) = validate(model, &val_samples, &stats)?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: total / n_batches.max(1) as f64,
            val_loss,
            val_wape,
            lr: opt.lr(),
        });

        if val_wape.is_finite() {
            if best.as_ref().is_none_or(|(w, _)| val_wape < *w) {
                best = Some((val_wape, model.clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        } else if val_samples.is_empty() {
            report.best_epoch = Some(epoch);
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    model.set_backbone_trainable(false);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecParams, PatchConfig};
    use crate::spatial::SpatialConfig;
    use std::sync::Arc;

    fn tiny_model() -> CpiriModel {
        let cfg = PatchConfig {
            patch_len: 4,
            input_len: 8,
            horizon: 4,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
        };
        let sp = SpatialConfig {
            dim: 8,
            n_heads: 2,
            dropout: 0.0,
            ..SpatialConfig::default()
        };
        CpiriModel::new(
            CodecParams::init(&cfg, 1).unwrap(),
            &sp,
            NormalizationStats::identity(3),
            2,
        )
        .unwrap()
    }

    fn windows(n: usize, c: usize) -> Vec<ForecastWindow> {
        let ids: Arc<[String]> = (0..c).map(|i| format!("c{i}")).collect::<Vec<_>>().into();
        (0..n)
            .map(|k| ForecastWindow {
                x: Tensor::from_fn(vec![8, c], |i| {
                    ((i / c + k) as f64 * 0.5 + (i % c) as f64).sin()
                }),
                y: Tensor::from_fn(vec![4, c], |i| {
                    ((i / c + k + 8) as f64 * 0.5 + (i % c) as f64).sin()
                }),
                channel_ids: ids.clone(),
                start: k,
            })
            .collect()
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let mut m = tiny_model();
        let init = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(
            &mut m,
            &windows(4, 3),
            &windows(2, 3),
            &NormalizationStats::identity(3),
            &cfg,
        )
        .unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(m, init);
    }

    #[test]
    fn identity_permutation_matches_plain_loss() {
        let m = tiny_model();
        let s = prepare(&m, &windows(3, 3)).unwrap();
        let (loss, _) = batch_loss(&m, &s, &PermutationMap::identity(3), None).unwrap();
        let mut plain = 0.0;
        for w in windows(3, 3) {
            let y = m.forward(&w.x, Mode::Eval).unwrap();
            plain += crate::eval::mae(&w.y, &y).unwrap() / 3.0;
        }
        assert!((loss - plain).abs() < 1e-12);
    }

    #[test]
    fn eval_loss_is_permutation_constant() {
        let m = tiny_model();
        let s = prepare(&m, &windows(3, 3)).unwrap();
        let (base, _) = batch_loss(&m, &s, &PermutationMap::identity(3), None).unwrap();
        for seed in 0..6 {
            let (l, _) = batch_loss(&m, &s, &PermutationMap::random(3, seed), None).unwrap();
            assert!((l - base).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_target_permutation_inflates_loss() {
        let m = tiny_model();
        let s = prepare(&m, &windows(3, 3)).unwrap();
        let (base, _) = batch_loss(&m, &s, &PermutationMap::identity(3), None).unwrap();
        let pi = PermutationMap::new(vec![1, 2, 0]).unwrap();
        let skewed: Vec<Sample> = s
            .iter()
            .map(|x| Sample {
                rows: x.rows.clone(),
                target: pi.apply_rows(&x.target).unwrap(),
            })
            .collect();
        let (bad, _) = batch_loss(&m, &skewed, &PermutationMap::identity(3), None).unwrap();
        assert!(bad > base);
    }

    #[test]
    fn frozen_codec_survives_training_and_runs_repeat() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            patience: 0,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny_model();
            let before = params_digest(&m.codec);
            let r = train(
                &mut m,
                &windows(6, 3),
                &windows(2, 3),
                &NormalizationStats::identity(3),
                &cfg,
            )
            .unwrap();
            assert_eq!(before, params_digest(&m.codec));
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(params_digest(&a), params_digest(&b));
        assert_eq!(ra, rb);
        assert_eq!(ra.epochs.len(), 3);
    }

    #[test]
    fn unfreezing_changes_codec() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            unfreeze_last_epochs: 1,
            patience: 0,
            ..TrainConfig::default()
        };
        let mut m = tiny_model();
        let before = params_digest(&m.codec);
        train(
            &mut m,
            &windows(6, 3),
            &[],
            &NormalizationStats::identity(3),
            &cfg,
        )
        .unwrap();
        assert_ne!(before, params_digest(&m.codec));
        assert!(m.codec.is_frozen());
    }

    #[test]
    fn rejects_bad_schedule() {
        let cfg = TrainConfig {
            epochs: 2,
            unfreeze_last_epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
