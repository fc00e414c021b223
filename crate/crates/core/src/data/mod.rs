//! Multivariate series: synthetic generators, CSV ingestion, normalization, and windowing.

mod csv_io;
mod synthetic;
mod window;

pub(crate) use csv_io::write_csv_to;
pub use csv_io::{load_csv, write_csv};
pub use synthetic::{
    generate, lag1_cross_correlation, max_lagged_cross_correlation, SyntheticKind, SyntheticSpec,
};
pub use window::{
    split_and_window, subset_channels, ForecastWindow, SplitRatios, Splits, WindowConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    File(String),
}

/// `N × C` matrix of observations plus channel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub values: Tensor,
    pub channel_ids: Vec<String>,
    pub timestamps: Vec<String>,
    pub sampling_period: f64,
    pub provenance: Provenance,
}

impl SeriesDataset {
    pub fn new(values: Tensor, channel_ids: Vec<String>, provenance: Provenance) -> Result<Self> {
        let (n, c) = values.dims2()?;
        if channel_ids.len() != c {
            return Err(Error::spec(format!(
                "{} channel ids for {c} channels",
                channel_ids.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::spec("dataset contains non-finite values"));
        }
        Ok(Self {
            values,
            channel_ids,
            timestamps: (0..n).map(|t| t.to_string()).collect(),
            sampling_period: 1.0,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.values.shape()[1]
    }

    /// Keeps only the listed channel columns, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        let (n, c) = self.values.dims2()?;
        if let Some(bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::arg(format!(
                "channel index {bad} out of range for {c} channels"
            )));
        }
        let mut data = Vec::with_capacity(n * idx.len());
        for t in 0..n {
            let row = self.values.row(t);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        Ok(Self {
            values: Tensor::new(vec![n, idx.len()], data)?,
            channel_ids: idx.iter().map(|&i| self.channel_ids[i].clone()).collect(),
            timestamps: self.timestamps.clone(),
            sampling_period: self.sampling_period,
            provenance: self.provenance.clone(),
        })
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Statistics of the first `rows` rows of an `N × C` matrix.
    pub fn fit(values: &Tensor, rows: usize) -> Result<Self> {
        let (n, c) = values.dims2()?;
        if rows == 0 || rows > n {
            return Err(Error::spec(format!(
                "cannot fit normalization on {rows} of {n} rows"
            )));
        }
        let mut mean = vec![0.0; c];
        for t in 0..rows {
            for (m, v) in mean.iter_mut().zip(values.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for t in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(values.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / rows as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (n, c) = x.dims2()?;
        if c != self.n_channels() {
            return Err(Error::arg(format!(
                "{c} columns but statistics for {} channels",
                self.n_channels()
            )));
        }
        Ok((n, c))
    }

    /// Z-scores the columns of an `n × C` matrix.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c) = self.check(x)?;
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % c;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c) = self.check(x)?;
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % c;
            *v = *v * self.std[j] + self.mean[j];
        }
        Ok(out)
    }

    /// Statistics for the channels `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(bad) = idx.iter().find(|&&i| i >= self.n_channels()) {
            return Err(Error::arg(format!("channel index {bad} out of range")));
        }
        Ok(Self {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_floor() {
        let x = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 6.0, 5.0]).unwrap();
        let s = NormalizationStats::fit(&x, 3).unwrap();
        assert_eq!(s.std[1], STD_FLOOR);
        let back = s.inverse(&s.apply(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn fit_uses_only_leading_rows() {
        let x = Tensor::matrix(4, 1, vec![1.0, 3.0, 100.0, -50.0]).unwrap();
        let s = NormalizationStats::fit(&x, 2).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn permutation_commutes() {
        let x = Tensor::from_fn(vec![5, 3], |i| (i * i) as f64 * 0.3 - 1.0);
        let s = NormalizationStats::fit(&x, 5).unwrap();
        let perm = [2, 0, 1];
        let ds = SeriesDataset::new(
            x.clone(),
            vec!["a".into(), "b".into(), "c".into()],
            Provenance::File("m".into()),
        )
        .unwrap();
        let px = ds.select_channels(&perm).unwrap().values;
        let lhs = s.select(&perm).unwrap().apply(&px).unwrap();
        let full = s.apply(&x).unwrap();
        let rhs = SeriesDataset::new(full, ds.channel_ids.clone(), Provenance::File("m".into()))
            .unwrap()
            .select_channels(&perm)
            .unwrap()
            .values;
        assert_eq!(lhs, rhs);
    }
}
