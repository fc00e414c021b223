//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation order.
//! [`Graph::backward`] walks that record in reverse and accumulates gradients for the
//! named leaves registered with [`Graph::param`] whose tensor has `requires_grad` set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, gelu, gelu_grad};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradients of a scalar loss, keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf(Option<String>),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SelectRow(usize, usize),
    MeanRows(usize),
    Abs(usize),
    Mean(usize),
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Deterministic source of dropout masks.
///
/// Each call site draws from its own ChaCha stream derived from `(seed, counter)`, so a
/// forward pass repeated with the same seed reproduces every mask exactly.
#[derive(Debug, Clone)]
pub struct DropoutStream {
    seed: u64,
    counter: u64,
}

impl DropoutStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    fn next_rng(&mut self) -> ChaCha8Rng {
        let site = self.counter;
        self.counter += 1;
        ChaCha8Rng::seed_from_u64(splitmix64(
            self.seed ^ splitmix64(site.wrapping_add(0x5851_f42d)),
        ))
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant input; it never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None), false)
    }

    /// Records a named parameter leaf. Gradients are reported for it only when the
    /// tensor has `requires_grad` set.
    pub fn param(&mut self, name: impl Into<String>, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t.clone(), Op::Leaf(Some(name.into())), needs)
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::arg(format!(
                "{what}: shape {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a.0, b.0), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Transpose(a.0), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a.0, b.0), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a.0, b.0), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a.0, b.0), needs))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(row).len() != n {
            return Err(Error::arg(format!(
                "add_row: row of length {} for matrix {m}x{n}",
                self.value(row).len()
            )));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a.0, row.0), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let needs = self.needs(a);
        self.push(out, Op::Scale(a.0, s), needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let needs = self.needs(a);
        self.push(out, Op::Gelu(a.0), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let needs = self.needs(a);
        self.push(out, Op::Abs(a.0), needs)
    }

    /// Softmax over the last dimension of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            ops::softmax_slice(row);
        }
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Softmax(a.0), needs))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let out_shape = self.value(x).shape().to_vec();
        let n = *out_shape
            .last()
            .ok_or_else(|| Error::arg("layer_norm on a scalar"))?;
        if n == 0 {
            return Err(Error::arg("layer_norm over a zero-length dimension"));
        }
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::arg(
                "layer_norm gain/bias must match the last dimension",
            ));
        }
        let (xhat, inv_std) = ops::normalize_rows(self.value(x).data(), n, eps);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut data = xhat.clone();
        for row in data.chunks_mut(n) {
            for ((v, gv), bv) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start + len > n {
            return Err(Error::arg(format!(
                "slice_cols {start}+{len} exceeds {n} columns"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], data)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a.0, start), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_cols of nothing"))?;
        let (m, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if r != m {
                return Err(Error::arg("concat_cols: row counts differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![m, total], data)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            out,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            needs,
        ))
    }

    /// Stacks matrices (or vectors, as one-row matrices) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_rows of nothing"))?;
        let n = *self.value(*first).shape().last().unwrap_or(&1);
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if *v.shape().last().unwrap_or(&1) != n {
                return Err(Error::arg("concat_rows: column counts differ"));
            }
            data.extend_from_slice(v.data());
        }
        let m = data.len() / n.max(1);
        let out = Tensor::new(vec![m, n], data)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            out,
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            needs,
        ))
    }

    /// Row `i` of a matrix as a `1×n` matrix.
    pub fn select_row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if i >= m {
            return Err(Error::arg(format!("select_row {i} of {m} rows")));
        }
        let out = Tensor::new(vec![1, n], self.value(a).row(i).to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::SelectRow(a.0, i), needs))
    }

    /// Column-wise mean of a matrix as a `1×n` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if m == 0 {
            return Err(Error::arg("mean_rows of an empty matrix"));
        }
        let mut data = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        let out = Tensor::new(vec![1, n], data)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::MeanRows(a.0), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(out, Op::Sum(a.0), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        let needs = self.needs(a);
        self.push(out, Op::Mean(a.0), needs)
    }

    /// Mean absolute error between two equally shaped values.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and scales the
    /// survivors by `1/(1-rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, stream: &mut DropoutStream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let mut rng = stream.next_rng();
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(a).shape().to_vec();
        let mask = Tensor::from_fn(shape, |_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        let m = self.input(mask);
        self.mul(a, m)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    ///
    /// Returns gradients for every named leaf that requires them and that the loss
    /// depends on; an empty map when nothing upstream requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut out = Gradients::new();
        if !self.needs(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf(name) => {
                    if let Some(name) = name {
                        let t = Tensor::new(node.value.shape().to_vec(), g)?;
                        match out.get_mut(name) {
                            // A parameter bound more than once accumulates.
                            Some(prev) => {
                                for (p, v) in prev.data_mut().iter_mut().zip(t.data()) {
                                    *p += v;
                                }
                            }
                            None => {
                                out.insert(name.clone(), t);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[*a].value.dims2()?;
                    let (_, n) = self.nodes[*b].value.dims2()?;
                    if self.nodes[*a].needs_grad {
                        let ga = acc(&mut grads, *a, m * k);
                        ops::matmul_bt_acc(&g, self.nodes[*b].value.data(), ga, m, n, k);
                    }
                    if self.nodes[*b].needs_grad {
                        let gb = acc(&mut grads, *b, k * n);
                        ops::matmul_at_acc(self.nodes[*a].value.data(), &g, gb, m, k, n);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.nodes[*a].value.dims2()?;
                    let ga = acc(&mut grads, *a, r * c);
                    // node value is c×r
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (src, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if self.nodes[src].needs_grad {
                            let gs = acc(&mut grads, src, g.len());
                            gs.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (src, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if self.nodes[src].needs_grad {
                            let gs = acc(&mut grads, src, g.len());
                            gs.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        let other = self.nodes[*b].value.data();
                        let ga = acc(&mut grads, *a, g.len());
                        for ((x, y), o) in ga.iter_mut().zip(&g).zip(other) {
                            *x += y * o;
                        }
                    }
                    if self.nodes[*b].needs_grad {
                        let other = self.nodes[*a].value.data();
                        let gb = acc(&mut grads, *b, g.len());
                        for ((x, y), o) in gb.iter_mut().zip(&g).zip(other) {
                            *x += y * o;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let n = self.nodes[*row].value.len();
                    if self.nodes[*a].needs_grad {
                        let ga = acc(&mut grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if self.nodes[*row].needs_grad {
                        let gr = acc(&mut grads, *row, n);
                        for chunk in g.chunks(n) {
                            gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                }
                Op::Gelu(a) => {
                    let xs = self.nodes[*a].value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), v) in ga.iter_mut().zip(&g).zip(xs) {
                        *x += y * gelu_grad(*v);
                    }
                }
                Op::Abs(a) => {
                    let xs = self.nodes[*a].value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), v) in ga.iter_mut().zip(&g).zip(xs) {
                        let s = if *v > 0.0 {
                            1.0
                        } else if *v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *x += y * s;
                    }
                }
                Op::Softmax(a) => {
                    let (_, n) = node.value.dims2()?;
                    let p = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((gr, pr), out) in g.chunks(n).zip(p.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(pr).map(|(x, y)| x * y).sum();
                        for ((o, gi), pi) in out.iter_mut().zip(gr).zip(pr) {
                            *o += pi * (gi - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = self.nodes[*gain].value.len();
                    let gv = self.nodes[*gain].value.data();
                    if self.nodes[*gain].needs_grad {
                        let gg = acc(&mut grads, *gain, n);
                        for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                            for ((o, a), b) in gg.iter_mut().zip(gr).zip(xr) {
                                *o += a * b;
                            }
                        }
                    }
                    if self.nodes[*bias].needs_grad {
                        let gb = acc(&mut grads, *bias, n);
                        for gr in g.chunks(n) {
                            gb.iter_mut().zip(gr).for_each(|(o, a)| *o += a);
                        }
                    }
                    if self.nodes[*x].needs_grad {
                        let gx = acc(&mut grads, *x, g.len());
                        let nf = n as f64;
                        for (r, ((gr, xr), out)) in g
                            .chunks(n)
                            .zip(xhat.chunks(n))
                            .zip(gx.chunks_mut(n))
                            .enumerate()
                        {
                            let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                            let s = inv_std[r] / nf;
                            for ((o, d), xh) in out.iter_mut().zip(&dxhat).zip(xr) {
                                *o += s * (nf * d - sum_d - xh * sum_dx);
                            }
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.nodes[*a].value.dims2()?;
                    let (_, len) = node.value.dims2()?;
                    let ga = acc(&mut grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..len {
                            ga[i * n + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for p in parts {
                        let (_, w) = self.nodes[*p].value.dims2()?;
                        if self.nodes[*p].needs_grad {
                            let gp = acc(&mut grads, *p, m * w);
                            for i in 0..m {
                                for j in 0..w {
                                    gp[i * w + j] += g[i * total + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[*p].value.len();
                        if self.nodes[*p].needs_grad {
                            let gp = acc(&mut grads, *p, len);
                            gp.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += len;
                    }
                }
                Op::SelectRow(a, i) => {
                    let (m, n) = self.nodes[*a].value.dims2()?;
                    let ga = acc(&mut grads, *a, m * n);
                    ga[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, y)| *x += y);
                }
                Op::MeanRows(a) => {
                    let (m, n) = self.nodes[*a].value.dims2()?;
                    let ga = acc(&mut grads, *a, m * n);
                    let inv = 1.0 / m as f64;
                    for chunk in ga.chunks_mut(n) {
                        chunk.iter_mut().zip(&g).for_each(|(x, y)| *x += y * inv);
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[*a].value.len();
                    let ga = acc(&mut grads, *a, len);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.nodes[*a].value.len();
                    let ga = acc(&mut grads, *a, len);
                    let s = g[0] / len.max(1) as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Var {
        let t = Tensor::new(shape, data).unwrap().with_requires_grad(true);
        g.param(name, &t)
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = leaf(&mut g, "x", vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads["x"].data(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = leaf(&mut g, "x", vec![2], vec![1.0, 2.0]);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads["x"].data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = leaf(&mut g, "x", vec![2], vec![1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn detached_graph_gives_empty_map() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let frozen = g.param("w", &Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(x, frozen).unwrap();
        let l = g.sum(p);
        assert!(g.backward(l).unwrap().is_empty());
    }

    #[test]
    fn dropout_is_reproducible_per_seed() {
        let run = |seed| {
            let mut g = Graph::new();
            let x = g.input(Tensor::full(vec![4, 8], 1.0));
            let mut s = DropoutStream::new(seed);
            let y = g.dropout(x, 0.3, &mut s).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        let v = run(7);
        assert!(v
            .data()
            .iter()
            .all(|x| *x == 0.0 || (x - 1.0 / 0.7).abs() < 1e-12));
    }
}
