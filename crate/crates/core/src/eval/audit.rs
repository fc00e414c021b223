use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::ContrastBaselineParams;
use super::metrics::{MetricAccumulator, MetricReport, ShuffleMode, WAPE_EPS_SCALE};
use super::permutation::{apply_permutation, partial_with, PermutationMap};
use crate::data::{ForecastWindow, NormalizationStats};
use crate::error::{Error, Result};
use crate::numerics::graph::splitmix64;
use crate::numerics::{Mode, Tensor};
use crate::pipeline::CpiriModel;

/// Anything that maps a normalized `L × C` history to a normalized `T × C` forecast.
pub trait Forecaster {
    fn predict(&self, x: &Tensor) -> Result<Tensor>;
}

impl Forecaster for CpiriModel {
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Eval)
    }
}

impl Forecaster for ContrastBaselineParams {
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Eval)
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Forecaster for F {
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

/// Metrics in original units over `windows`, with every window's channels reordered by `pi`
/// (statistics travel with the channels).
pub fn evaluate(
    model: &dyn Forecaster,
    windows: &[ForecastWindow],
    stats: &NormalizationStats,
    pi: Option<&PermutationMap>,
    shuffle: ShuffleMode,
) -> Result<MetricReport> {
    let stats = match pi {
        Some(p) => stats.select(p.as_slice())?,
        None => stats.clone(),
    };
    let mut acc = MetricAccumulator::default();
    for w in windows {
        let (x, y) = match pi {
            Some(p) => (apply_permutation(&w.x, p)?, apply_permutation(&w.y, p)?),
            None => (w.x.clone(), w.y.clone()),
        };
        let pred = model.predict(&x)?;
        acc.add(&stats.inverse(&y)?, &stats.inverse(&pred)?)?;
    }
    acc.finish(shuffle, WAPE_EPS_SCALE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub fractions: Vec<f64>,
    pub n_repeats: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub fraction: f64,
    pub repeat: usize,
    pub wape_pct: f64,
    pub mae: f64,
    pub degradation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub fraction: f64,
    pub mean_wape_pct: f64,
    pub mean_mae: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    /// Unshuffled reference.
    pub base: MetricReport,
    pub rows: Vec<AuditRow>,
}

impl AuditTable {
    /// Per-fraction means over repeats, in the order the fractions were given.
    pub fn summary(&self) -> Vec<AuditSummary> {
        let mut out: Vec<AuditSummary> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for r in &self.rows {
            let k = match out.iter().position(|s| s.fraction == r.fraction) {
                Some(k) => k,
                None => {
                    out.push(AuditSummary {
                        fraction: r.fraction,
                        mean_wape_pct: 0.0,
                        mean_mae: 0.0,
                        mean_ratio: 0.0,
                    });
                    counts.push(0);
                    out.len() - 1
                }
            };
            out[k].mean_wape_pct += r.wape_pct;
            out[k].mean_mae += r.mae;
            out[k].mean_ratio += r.degradation_ratio;
            counts[k] += 1;
        }
        for (s, n) in out.iter_mut().zip(counts) {
            let n = n as f64;
            s.mean_wape_pct /= n;
            s.mean_mae /= n;
            s.mean_ratio /= n;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,repeat,wape_pct,mae,degradation_ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.fraction, r.repeat, r.wape_pct, r.mae, r.degradation_ratio
            );
        }
        s
    }

    /// Fractions as columns; WAPE, MAE and ratio as rows.
    pub fn to_markdown(&self) -> String {
        let summary = self.summary();
        let mut s = String::from("| metric |");
        for c in &summary {
            let _ = write!(s, " {:.0}% |", c.fraction * 100.0);
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(summary.len()));
        s.push('\n');
        let mut line = |label: &str, f: &dyn Fn(&AuditSummary) -> String| {
            s.push_str(&format!("| {label} |"));
            for c in &summary {
                let _ = write!(s, " {} |", f(c));
            }
            s.push('\n');
        };
        line("WAPE (%)", &|c| format!("{:.4}", c.mean_wape_pct));
        line("MAE", &|c| format!("{:.4}", c.mean_mae));
        line("ratio", &|c| format!("{:.6}", c.mean_ratio));
        s
    }
}

/// Degradation under partial channel shuffling.
///
/// For each fraction and repeat one permutation is drawn and applied to every window;
/// ratios are relative to the unshuffled WAPE.
pub fn cpi_audit(
    model: &dyn Forecaster,
    windows: &[ForecastWindow],
    stats: &NormalizationStats,
    config: &AuditConfig,
) -> Result<AuditTable> {
    let c = stats.n_channels();
    if config.n_repeats == 0 {
        return Err(Error::arg("audit needs at least one repeat"));
    }
    let base = evaluate(model, windows, stats, None, ShuffleMode::None)?;
    let mut rows = Vec::new();
    for (fi, &fraction) in config.fractions.iter().enumerate() {
        for repeat in 0..config.n_repeats {
            let seed = splitmix64(config.seed ^ splitmix64(((fi as u64) << 32) | repeat as u64));
            let (pi, _) = partial_with(c, fraction, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let mode = if fraction >= 1.0 {
                ShuffleMode::Full
            } else {
                ShuffleMode::Partial(fraction)
            };
            let report = if pi.is_identity() {
                MetricReport {
                    shuffle: mode,
                    ..base.clone()
                }
            } else {
                evaluate(model, windows, stats, Some(&pi), mode)
                    .map_err(|e| e.context(format!("audit at fraction {fraction}")))?
            };
            rows.push(AuditRow {
                fraction,
                repeat,
                wape_pct: report.wape,
                mae: report.mae,
                degradation_ratio: report.wape / base.wape,
            });
        }
    }
    Ok(AuditTable { base, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn windows(c: usize) -> Vec<ForecastWindow> {
        let ids: Arc<[String]> = (0..c).map(|i| i.to_string()).collect::<Vec<_>>().into();
        (0..4)
            .map(|k| ForecastWindow {
                x: Tensor::from_fn(vec![3, c], |i| ((i + k) as f64 * 0.9).sin()),
                y: Tensor::from_fn(vec![2, c], |i| ((i + 2 * k) as f64 * 0.4).cos() + 2.0),
                channel_ids: ids.clone(),
                start: k,
            })
            .collect()
    }

    fn last_value(x: &Tensor) -> Result<Tensor> {
        let (l, c) = x.dims2()?;
        Tensor::new(vec![2, c], [x.row(l - 1), x.row(l - 1)].concat())
    }

    #[test]
    fn equivariant_model_has_unit_ratios() {
        let stats = NormalizationStats {
            mean: vec![1.0, -2.0, 0.5, 3.0],
            std: vec![2.0, 0.5, 1.0, 4.0],
        };
        let table = cpi_audit(&last_value, &windows(4), &stats, &AuditConfig::default()).unwrap();
        assert_eq!(table.rows.len(), 25);
        for r in &table.rows {
            assert!((r.degradation_ratio - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_fraction_single_repeat_equals_plain_eval() {
        let stats = NormalizationStats::identity(3);
        let cfg = AuditConfig {
            fractions: vec![0.0],
            n_repeats: 1,
            seed: 4,
        };
        let w = windows(3);
        let table = cpi_audit(&last_value, &w, &stats, &cfg).unwrap();
        let plain = evaluate(&last_value, &w, &stats, None, ShuffleMode::None).unwrap();
        assert_eq!(table.rows[0].wape_pct, plain.wape);
        assert_eq!(table.rows[0].mae, plain.mae);
        assert!(table.to_markdown().contains("| 0% |"));
    }

    #[test]
    fn positional_model_degrades() {
        // Forecasts channel i with a constant that only suits the channel originally at i.
        let stats = NormalizationStats::identity(4);
        let w: Vec<ForecastWindow> = windows(4)
            .into_iter()
            .map(|mut w| {
                w.y = Tensor::from_fn(vec![2, 4], |i| 10.0 * (i % 4) as f64 + 1.0);
                w
            })
            .collect();
        let positional = |x: &Tensor| -> Result<Tensor> {
            let (_, c) = x.dims2()?;
            Ok(Tensor::from_fn(vec![2, c], |i| 10.0 * (i % c) as f64 + 1.5))
        };
        let table = cpi_audit(&positional, &w, &stats, &AuditConfig::default()).unwrap();
        let s = table.summary();
        assert_eq!(s[0].mean_ratio, 1.0);
        assert!(s[4].mean_ratio > 1.0);
    }
}
