//! Forward kernels shared by the autodiff graph and plain inference code.

use super::Tensor;
use crate::error::{Error, Result};

/// `a (m×k) · b (k×n)`, written into `out (m×n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `a (m×k) · bᵀ` where `b` is `n×k`; accumulates into `out (m×n)`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`; accumulates into `out (k×n)`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let o_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::arg(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Numerically stable softmax of one contiguous slice, in place.
pub(crate) fn softmax_slice(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::arg(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            for (a, b) in buf.iter_mut().enumerate() {
                *b = out[idx(a)];
            }
            softmax_slice(&mut buf);
            for (a, b) in buf.iter().enumerate() {
                out[idx(a)] = *b;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row statistics used by layer norm: `(xhat, inv_std)` for each row of width `n`.
pub(crate) fn normalize_rows(x: &[f64], n: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / n;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + eps).sqrt();
        for (o, v) in xhat[r * n..(r + 1) * n].iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        inv_std.push(s);
    }
    (xhat, inv_std)
}

/// Layer normalization over the last dimension with an affine gain and bias.
///
/// A constant row normalizes to zeros, so its output is exactly `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::arg("layer_norm on a scalar"))?;
    if n == 0 {
        return Err(Error::arg("layer_norm over a zero-length dimension"));
    }
    if gain.len() != n || bias.len() != n {
        return Err(Error::arg(format!(
            "layer_norm gain/bias length {}/{} does not match last dimension {n}",
            gain.len(),
            bias.len()
        )));
    }
    let (mut xhat, _) = normalize_rows(x.data(), n, eps);
    for row in xhat.chunks_mut(n) {
        for ((v, g), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), xhat)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_pair() {
        let t = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(softmax(&t, 0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_huge_inputs() {
        let t = Tensor::vector(vec![1e9, 1e9]);
        assert_eq!(softmax(&t, 0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_scalar_reference() {
        // Reference: exp(x - 3) / sum, accumulated with compensated summation.
        let xs = [1.0f64, 2.0, 3.0];
        let e: Vec<f64> = xs.iter().map(|x| (x - 3.0).exp()).collect();
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for v in &e {
            let y = v - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let got = softmax(&Tensor::vector(xs.to_vec()), 0).unwrap();
        for (g, v) in got.data().iter().zip(&e) {
            assert!((g - v / sum).abs() < 1e-15);
        }
        // 0.09003057317038046, 0.24472847105479767, 0.6652409557748219
        assert!((got.data()[0] - 0.090_030_573_170_380_46).abs() < 1e-15);
        assert!((got.data()[2] - 0.665_240_955_774_821_9).abs() < 1e-15);
    }

    #[test]
    fn softmax_inner_axis() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let s = softmax(&t, 0).unwrap();
        for v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let s = softmax(&t, 1).unwrap();
        assert!((s.data()[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_bad_axis() {
        assert!(softmax(&Tensor::vector(vec![1.0]), 1).is_err());
    }

    #[test]
    fn layer_norm_constant_row_gives_bias() {
        let x = Tensor::vector(vec![3.0; 4]);
        let y = layer_norm(
            &x,
            &Tensor::full(vec![4], 1.0),
            &Tensor::zeros(vec![4]),
            LAYER_NORM_EPS,
        )
        .unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_pair() {
        let x = Tensor::vector(vec![1.0, -1.0]);
        let y = layer_norm(
            &x,
            &Tensor::full(vec![2], 1.0),
            &Tensor::zeros(vec![2]),
            LAYER_NORM_EPS,
        )
        .unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-5);
        assert!((y.data()[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_zero_gain_is_bias() {
        let x = Tensor::vector(vec![0.3, -2.0, 7.0]);
        let bias = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let y = layer_norm(&x, &Tensor::zeros(vec![3]), &bias, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn layer_norm_rejects_empty_rows() {
        let x = Tensor::zeros(vec![2, 0]);
        assert!(layer_norm(&x, &Tensor::zeros(vec![0]), &Tensor::zeros(vec![0]), 1e-5).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
