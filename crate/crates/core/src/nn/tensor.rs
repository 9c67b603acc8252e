use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!("{n} values for shape {shape:?}"), data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(format!("{cols} columns"), bad.len()));
        }
        Tensor::from_vec(&[rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols().max(1)).map(<[f64]>::to_vec).collect()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// `out = self * x` for a 2-D tensor.
    #[inline]
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(cols)) {
            *o = dot(row, x);
        }
    }

    /// `out += self^T * y` for a 2-D tensor.
    #[inline]
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(cols)) {
            if yi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * yi;
                }
            }
        }
    }

    /// `self += y x^T` for a 2-D tensor.
    #[inline]
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        let cols = self.cols();
        for (&yi, row) in y.iter().zip(self.data.chunks_exact_mut(cols)) {
            if yi != 0.0 {
                for (w, xj) in row.iter_mut().zip(x) {
                    *w += yi * xj;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
