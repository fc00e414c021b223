use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const WAPE_EPS_SCALE: f64 = 1e-8;

fn check(y: &Tensor, yhat: &Tensor) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::arg(format!(
            "shape mismatch: {:?} vs {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    if !y.is_finite() || !yhat.is_finite() {
        return Err(Error::arg("metric inputs must be finite"));
    }
    if y.is_empty() {
        return Err(Error::arg("metric inputs are empty"));
    }
    Ok(())
}

/// Stabilizer added to the WAPE denominator: `eps_scale · mean|y|`, or `eps_scale` itself
/// when every target is zero.
pub fn wape_epsilon(y: &Tensor, eps_scale: f64) -> f64 {
    let mean_abs = y.data().iter().map(|v| v.abs()).sum::<f64>() / y.len().max(1) as f64;
    if mean_abs > 0.0 {
        eps_scale * mean_abs
    } else {
        eps_scale
    }
}

/// `100 · Σ|y − ŷ| / (Σ|y| + ε)`.
pub fn wape(y: &Tensor, yhat: &Tensor, eps_scale: f64) -> Result<f64> {
    check(y, yhat)?;
    let (num, den) = abs_sums(y, yhat);
    Ok(100.0 * num / (den + wape_epsilon(y, eps_scale)))
}

pub fn mae(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check(y, yhat)?;
    let (num, _) = abs_sums(y, yhat);
    Ok(num / y.len() as f64)
}

fn abs_sums(y: &Tensor, yhat: &Tensor) -> (f64, f64) {
    y.data()
        .iter()
        .zip(yhat.data())
        .fold((0.0, 0.0), |(n, d), (a, b)| {
            (n + (a - b).abs(), d + a.abs())
        })
}

/// Pools absolute errors over many windows before forming the ratios.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    abs_err: f64,
    abs_target: f64,
    count: usize,
    n_windows: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, y: &Tensor, yhat: &Tensor) -> Result<()> {
        check(y, yhat)?;
        let (num, den) = abs_sums(y, yhat);
        self.abs_err += num;
        self.abs_target += den;
        self.count += y.len();
        self.n_windows += 1;
        Ok(())
    }

    pub fn finish(&self, shuffle: ShuffleMode, eps_scale: f64) -> Result<MetricReport> {
        if self.count == 0 {
            return Err(Error::arg("no windows were evaluated"));
        }
        let mean_abs = self.abs_target / self.count as f64;
        let epsilon = if mean_abs > 0.0 {
            eps_scale * mean_abs
        } else {
            eps_scale
        };
        Ok(MetricReport {
            wape: 100.0 * self.abs_err / (self.abs_target + epsilon),
            mae: self.abs_err / self.count as f64,
            n_windows: self.n_windows,
            shuffle,
            epsilon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    None,
    Full,
    Partial(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Percent.
    pub wape: f64,
    pub mae: f64,
    pub n_windows: usize,
    pub shuffle: ShuffleMode,
    pub epsilon: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn hand_values() {
        assert_eq!(wape(&v(&[10.0]), &v(&[10.0]), WAPE_EPS_SCALE).unwrap(), 0.0);
        let w = wape(&v(&[10.0]), &v(&[8.0]), WAPE_EPS_SCALE).unwrap();
        assert!((w - 20.0).abs() < 1e-6);
        assert_eq!(mae(&v(&[1.0, 3.0]), &v(&[2.0, 5.0])).unwrap(), 1.5);
    }

    #[test]
    fn all_zero_targets_are_finite() {
        let w = wape(&v(&[0.0, 0.0]), &v(&[1.0, -1.0]), WAPE_EPS_SCALE).unwrap();
        assert!(w.is_finite());
        assert_eq!(w, 100.0 * 2.0 / WAPE_EPS_SCALE);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(
            wape(&v(&[1.0]), &v(&[1.0, 2.0]), WAPE_EPS_SCALE),
            Err(Error::Argument(_))
        ));
        assert!(mae(&v(&[1.0]), &v(&[f64::NAN])).is_err());
    }

    #[test]
    fn accumulator_matches_concatenation() {
        let y1 = v(&[1.0, -2.0]);
        let p1 = v(&[0.5, -1.0]);
        let y2 = v(&[4.0]);
        let p2 = v(&[2.0]);
        let mut acc = MetricAccumulator::default();
        acc.add(&y1, &p1).unwrap();
        acc.add(&y2, &p2).unwrap();
        let r = acc.finish(ShuffleMode::None, WAPE_EPS_SCALE).unwrap();
        let all_y = v(&[1.0, -2.0, 4.0]);
        let all_p = v(&[0.5, -1.0, 2.0]);
        assert_eq!(r.wape, wape(&all_y, &all_p, WAPE_EPS_SCALE).unwrap());
        assert_eq!(r.mae, mae(&all_y, &all_p).unwrap());
        assert_eq!(r.n_windows, 2);
    }
}
