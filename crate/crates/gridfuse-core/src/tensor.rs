//! Dense real tensors in 64-bit floating point.
//!
//! Everything in the learning stack is carried by [`Tensor`]: vectors are
//! rank-1, matrices rank-2 (row-major). The type is deliberately plain; no
//! views, no broadcasting. Shapes are checked at every operation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "value count must equal product of shape"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v,
        }
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "add: shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "sub: shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data.iter().map(|a| a * c).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Matrix-vector product: `self` is `r x c`, `x` has length `c`.
    pub fn matvec(&self, x: &Tensor) -> Tensor {
        assert_eq!(self.shape.len(), 2, "matvec: lhs must be a matrix");
        assert_eq!(x.shape.len(), 1, "matvec: rhs must be a vector");
        assert_eq!(self.cols(), x.len(), "matvec: dimension mismatch");
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += self.data[i * c + j] * x.data[j];
            }
            out[i] = acc;
        }
        Tensor::vector(out)
    }

    pub fn matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.shape.len(), 2);
        assert_eq!(b.shape.len(), 2);
        assert_eq!(self.cols(), b.rows(), "matmul: dimension mismatch");
        let (m, k, n) = (self.rows(), self.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * b.data[l * n + j];
                }
            }
        }
        out
    }

    /// Outer product of two vectors: result is `a.len() x b.len()`.
    pub fn outer(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape.len(), 1);
        assert_eq!(b.shape.len(), 1);
        let (m, n) = (a.len(), b.len());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] = a.data[i] * b.data[j];
            }
        }
        out
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sq_sum(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
