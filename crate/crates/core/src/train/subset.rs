use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainReport};
use crate::data::{ForecastWindow, NormalizationStats};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ShuffleMode};
use crate::pipeline::CpiriModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCell {
    pub fraction: f64,
    pub shuffle: bool,
    /// Evaluated on every channel of the test windows.
    pub wape_pct: f64,
    pub mae: f64,
    pub trained_channels: usize,
    /// Wall time; not part of the deterministic CSV output.
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetGrid {
    pub cells: Vec<SubsetCell>,
}

impl SubsetGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,shuffle,wape_pct,mae,trained_channels\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.fraction, c.shuffle, c.wape_pct, c.mae, c.trained_channels
            ));
        }
        s
    }

    pub fn cell(&self, fraction: f64, shuffle: bool) -> Option<&SubsetCell> {
        self.cells
            .iter()
            .find(|c| c.fraction == fraction && c.shuffle == shuffle)
    }
}

/// Trains one model per `fraction × {shuffle on, off}` on a channel subset and evaluates
/// each on all channels of `test` without retraining.
pub fn train_subset_protocol(
    make_model: &dyn Fn() -> Result<CpiriModel>,
    train_windows: &[ForecastWindow],
    val_windows: &[ForecastWindow],
    test_windows: &[ForecastWindow],
    stats: &NormalizationStats,
    fractions: &[f64],
    base: &TrainConfig,
) -> Result<(SubsetGrid, Vec<TrainReport>)> {
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subset fraction {fraction} outside (0, 1]"
            )));
        }
        for shuffle in [true, false] {
            let ctx = format!("subset cell (fraction {fraction}, shuffle {shuffle})");
            let cfg = TrainConfig {
                channel_fraction: fraction,
                shuffle_channels: shuffle,
                ..base.clone()
            };
            let mut model = make_model()?;
            let started = Instant::now();
            let report = train(&mut model, train_windows, val_windows, stats, &cfg)
                .map_err(|e| e.context(&ctx))?;
            let train_seconds = started.elapsed().as_secs_f64();
            let metrics = evaluate(&model, test_windows, stats, None, ShuffleMode::None)
                .map_err(|e| e.context(&ctx))?;
            cells.push(SubsetCell {
                fraction,
                shuffle,
                wape_pct: metrics.wape,
                mae: metrics.mae,
                trained_channels: report.channels.len(),
                train_seconds,
            });
            reports.push(report);
        }
    }
    Ok((SubsetGrid { cells }, reports))
}
