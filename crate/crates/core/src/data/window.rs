use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NormalizationStats, SeriesDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::spec(format!(
                "split ratios {}/{}/{} must be non-negative and sum to 1",
                self.train, self.val, self.test
            )));
        }
        if self.train == 0.0 {
            return Err(Error::spec("training split is empty"));
        }
        Ok(())
    }

    /// Segment lengths for a series of `n` steps.
    pub fn segment_lengths(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64).floor() as usize;
        let val = (self.val * n as f64).floor() as usize;
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_len: 96,
            horizon: 96,
            stride: 1,
        }
    }
}

impl WindowConfig {
    /// `floor((len - L - T) / stride) + 1`, or 0 when one window does not fit.
    pub fn count(&self, len: usize) -> usize {
        let span = self.input_len + self.horizon;
        if len < span || self.stride == 0 {
            0
        } else {
            (len - span) / self.stride + 1
        }
    }
}

/// One forecasting sample: `x` is `L × C`, `y` is `T × C`, both z-scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    pub x: Tensor,
    pub y: Tensor,
    /// Labels for reporting only; never seen by a model.
    pub channel_ids: Arc<[String]>,
    /// Index of the first history step in the source series.
    pub start: usize,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<ForecastWindow>,
    pub val: Vec<ForecastWindow>,
    pub test: Vec<ForecastWindow>,
    /// Fitted on the training segment only.
    pub stats: NormalizationStats,
    /// `[0, train_end)`, `[train_end, val_end)`, `[val_end, N)`.
    pub train_end: usize,
    pub val_end: usize,
    pub config: WindowConfig,
}

impl Splits {
    /// Confirms that no validation or test history reaches back into an earlier segment.
    pub fn check_no_leakage(&self) -> Result<()> {
        let span = self.config.input_len + self.config.horizon;
        let last_train_target = self.train.iter().map(|w| w.start + span).max().unwrap_or(0);
        for (name, set, lo) in [
            ("validation", &self.val, self.train_end),
            ("test", &self.test, self.val_end),
        ] {
            for w in set {
                if w.start < lo || w.start < last_train_target {
                    return Err(Error::Protocol(format!(
                        "{name} window at {} overlaps earlier segment data",
                        w.start
                    )));
                }
            }
        }
        Ok(())
    }
}

fn windows_in(
    values: &Tensor,
    lo: usize,
    hi: usize,
    cfg: &WindowConfig,
    ids: &Arc<[String]>,
) -> Result<Vec<ForecastWindow>> {
    let (_, c) = values.dims2()?;
    let (l, t) = (cfg.input_len, cfg.horizon);
    let slice = |a: usize, b: usize| -> Result<Tensor> {
        Tensor::new(vec![b - a, c], values.data()[a * c..b * c].to_vec())
    };
    (0..cfg.count(hi - lo))
        .map(|k| {
            let s = lo + k * cfg.stride;
            Ok(ForecastWindow {
                x: slice(s, s + l)?,
                y: slice(s + l, s + l + t)?,
                channel_ids: ids.clone(),
                start: s,
            })
        })
        .collect()
}

/// Chronological split followed by sliding windows inside each segment.
///
/// Values are z-scored with statistics fitted on the training segment. A segment with a
/// non-zero ratio that cannot hold one window is a spec error.
pub fn split_and_window(
    ds: &SeriesDataset,
    ratios: &SplitRatios,
    cfg: &WindowConfig,
) -> Result<Splits> {
    ratios.validate()?;
    if cfg.input_len == 0 || cfg.horizon == 0 || cfg.stride == 0 {
        return Err(Error::spec(
            "input_len, horizon and stride must be positive",
        ));
    }
    let n = ds.len();
    let (n_train, n_val, n_test) = ratios.segment_lengths(n);
    for (name, len, ratio) in [
        ("train", n_train, ratios.train),
        ("val", n_val, ratios.val),
        ("test", n_test, ratios.test),
    ] {
        if ratio > 0.0 && cfg.count(len) == 0 {
            return Err(Error::spec(format!(
                "{name} segment has {len} steps, fewer than one window of {}",
                cfg.input_len + cfg.horizon
            )));
        }
    }
    let stats = NormalizationStats::fit(&ds.values, n_train)?;
    let values = stats.apply(&ds.values)?;
    let ids: Arc<[String]> = ds.channel_ids.clone().into();
    let (train_end, val_end) = (n_train, n_train + n_val);
    let splits = Splits {
        train: windows_in(&values, 0, train_end, cfg, &ids)?,
        val: windows_in(&values, train_end, val_end, cfg, &ids)?,
        test: windows_in(&values, val_end, n, cfg, &ids)?,
        stats,
        train_end,
        val_end,
        config: *cfg,
    };
    splits.check_no_leakage()?;
    Ok(splits)
}

/// Keeps `ceil(fraction · C)` uniformly sampled channels (in their original order) and
/// returns the ids of the rest.
pub fn subset_channels(
    ds: &SeriesDataset,
    fraction: f64,
    seed: u64,
) -> Result<(SeriesDataset, Vec<String>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::spec(format!(
            "channel fraction {fraction} outside (0, 1]"
        )));
    }
    let c = ds.n_channels();
    let k = ((fraction * c as f64) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Err(Error::spec(format!(
            "fraction {fraction} of {c} channels selects none"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, c, k).into_vec();
    keep.sort_unstable();
    let held_out = (0..c)
        .filter(|i| keep.binary_search(i).is_err())
        .map(|i| ds.channel_ids[i].clone())
        .collect();
    Ok((ds.select_channels(&keep)?, held_out))
}
