//! Paired comparison of an order-dependent baseline and CPiRi on the same data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainReport};
use crate::data::Splits;
use crate::error::Result;
use crate::eval::{cpi_audit, AuditConfig, AuditTable, ContrastBaselineParams, ContrastConfig};
use crate::pipeline::CpiriModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastExperimentConfig {
    pub contrast: ContrastConfig,
    /// Shuffling is forced off for the fixed-order baseline and on for its twin.
    pub contrast_train: TrainConfig,
    /// Used as given for CPiRi.
    pub cpiri_train: TrainConfig,
    pub audit: AuditConfig,
    /// Also train the baseline with channel shuffling.
    pub shuffled_twin: bool,
    pub seed: u64,
}

impl Default for ContrastExperimentConfig {
    fn default() -> Self {
        Self {
            contrast: ContrastConfig::default(),
            contrast_train: TrainConfig::default(),
            cpiri_train: TrainConfig::default(),
            audit: AuditConfig::default(),
            shuffled_twin: true,
            seed: 0,
        }
    }
}

/// One line of the train-shuffle versus test-shuffle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleComparison {
    pub model: String,
    pub train_shuffle: bool,
    pub wape_pct: f64,
    /// Mean over the audit's full-shuffle repeats.
    pub shuffled_wape_pct: f64,
    pub degradation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastExperimentReport {
    pub baseline_audit: AuditTable,
    pub twin_audit: Option<AuditTable>,
    pub cpiri_audit: AuditTable,
    pub comparison: Vec<ShuffleComparison>,
    pub baseline_training: TrainReport,
    pub cpiri_training: TrainReport,
}

fn full_shuffle_row(model: &str, train_shuffle: bool, table: &AuditTable) -> ShuffleComparison {
    let summary = table.summary();
    let full = summary
        .iter()
        .find(|s| s.fraction >= 1.0)
        .or(summary.last());
    let (shuffled, ratio) =
        full.map_or((table.base.wape, 1.0), |s| (s.mean_wape_pct, s.mean_ratio));
    ShuffleComparison {
        model: model.to_string(),
        train_shuffle,
        wape_pct: table.base.wape,
        shuffled_wape_pct: shuffled,
        degradation_ratio: ratio,
    }
}

impl ContrastExperimentReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| model | train shuffle | WAPE (%) | test-shuffled WAPE (%) | ratio |\n|---|---|---:|---:|---:|\n");
        for r in &self.comparison {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.6} |",
                r.model,
                if r.train_shuffle { "yes" } else { "no" },
                r.wape_pct,
                r.shuffled_wape_pct,
                r.degradation_ratio
            );
        }
        s
    }
}

/// Trains the contrast baseline in fixed channel order (and optionally a shuffle-trained twin)
/// and CPiRi on identical splits, then audits every model on the test split.
pub fn contrast_experiment(
    make_cpiri: &dyn Fn() -> Result<CpiriModel>,
    splits: &Splits,
    cfg: &ContrastExperimentConfig,
) -> Result<ContrastExperimentReport> {
    let c = splits.stats.n_channels();
    let l = splits.config.input_len;
    let t = splits.config.horizon;
    let fresh = || ContrastBaselineParams::init(&cfg.contrast, c, l, t, cfg.seed);

    let mut baseline = fresh()?;
    let fixed = TrainConfig {
        shuffle_channels: false,
        ..cfg.contrast_train.clone()
    };
    let baseline_training = train(
        &mut baseline,
        &splits.train,
        &splits.val,
        &splits.stats,
        &fixed,
    )
    .map_err(|e| e.context("fixed-order baseline"))?;
    let baseline_audit = cpi_audit(&baseline, &splits.test, &splits.stats, &cfg.audit)?;
    let mut comparison = vec![full_shuffle_row("contrast", false, &baseline_audit)];

    let twin_audit = if cfg.shuffled_twin {
        let mut twin = fresh()?;
        let shuffled = TrainConfig {
            shuffle_channels: true,
            ..cfg.contrast_train.clone()
        };
        train(
            &mut twin,
            &splits.train,
            &splits.val,
            &splits.stats,
            &shuffled,
        )
        .map_err(|e| e.context("shuffle-trained baseline"))?;
        let table = cpi_audit(&twin, &splits.test, &splits.stats, &cfg.audit)?;
        comparison.push(full_shuffle_row("contrast", true, &table));
        Some(table)
    } else {
        None
    };

    let mut cpiri = make_cpiri()?;
    let cpiri_training = train(
        &mut cpiri,
        &splits.train,
        &splits.val,
        &splits.stats,
        &cfg.cpiri_train,
    )
    .map_err(|e| e.context("CPiRi"))?;
    let cpiri_audit = cpi_audit(&cpiri, &splits.test, &splits.stats, &cfg.audit)?;
    comparison.push(full_shuffle_row(
        "cpiri",
        cfg.cpiri_train.shuffle_channels,
        &cpiri_audit,
    ));

    Ok(ContrastExperimentReport {
        baseline_audit,
        twin_audit,
        cpiri_audit,
        comparison,
        baseline_training,
        cpiri_training,
    })
}
