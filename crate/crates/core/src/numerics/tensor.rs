use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Storage precision of a tensor payload.
///
/// All arithmetic runs in `f64`; the dtype only governs how values are rounded when
/// a tensor is created with [`Tensor::with_dtype`] and how they are serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

/// Dense row-major n-dimensional array.
///
/// The payload is reference counted, so cloning is cheap and values are effectively
/// immutable once shared. [`Tensor::data_mut`] copies on write.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    dtype: Dtype,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            dtype: Dtype::F64,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("sized by construction")
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("sized by construction")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(Vec::<usize>::new(), vec![value]).expect("scalar")
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).expect("sized by construction")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("sized by construction")
    }

    /// Rounds the payload to `dtype` precision.
    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        if dtype == Dtype::F32 {
            for v in Arc::make_mut(&mut self.data).iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.dtype = dtype;
        self
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::arg(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
            dtype: self.dtype,
            requires_grad: self.requires_grad,
        })
    }

    /// Row `i` of a matrix as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Column `j` of a matrix, copied out.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let (rows, cols) = self.dims2().expect("column() needs a matrix");
        (0..rows).map(|i| self.data[i * cols + j]).collect()
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let cols = self.shape[1];
        self.data[i * cols + j]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn stack_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::arg("cannot stack zero rows"));
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::arg(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
            dtype: self.dtype,
            requires_grad: false,
        }
    }

    /// Little-endian bytes of the payload at the tensor's dtype.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self.dtype {
            Dtype::F64 => self.data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Dtype::F32 => self
                .data
                .iter()
                .flat_map(|v| (*v as f32).to_le_bytes())
                .collect(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_payload() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn transpose_roundtrip() {
        let t = Tensor::from_fn(vec![3, 4], |i| i as f64);
        assert_eq!(t.transpose().unwrap().transpose().unwrap(), t);
        assert_eq!(t.transpose().unwrap().get2(1, 2), t.get2(2, 1));
    }

    #[test]
    fn f32_rounding() {
        let t = Tensor::vector(vec![0.1]).with_dtype(Dtype::F32);
        assert_eq!(t.data()[0], 0.1f32 as f64);
        assert_eq!(t.to_le_bytes().len(), 4);
    }

    #[test]
    fn clone_on_write() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        b.data_mut()[0] = 5.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 5.0);
    }
}
