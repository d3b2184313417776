//! Dense row-major `f64` tensors and the handful of kernels the model needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `x[n×k] · w[k×m]`.
pub(crate) fn matmul(x: &[f64], n: usize, k: usize, w: &[f64], m: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let xi = &x[i * k..(i + 1) * k];
        let oi = &mut out[i * m..(i + 1) * m];
        for (kk, &a) in xi.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let wr = &w[kk * m..(kk + 1) * m];
            for (o, &b) in oi.iter_mut().zip(wr) {
                *o += a * b;
            }
        }
    }
    out
}

/// `dy[n×m] · w[k×m]ᵀ`, the input gradient of [`matmul`].
pub(crate) fn matmul_wt(dy: &[f64], n: usize, m: usize, w: &[f64], k: usize) -> Vec<f64> {
    debug_assert_eq!(dy.len(), n * m);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let di = &dy[i * m..(i + 1) * m];
        for kk in 0..k {
            let wr = &w[kk * m..(kk + 1) * m];
            out[i * k + kk] = dot(di, wr);
        }
    }
    out
}

/// `dw[k×m] += x[n×k]ᵀ · dy[n×m]`, the weight gradient of [`matmul`].
pub(crate) fn acc_xt_dy(dw: &mut [f64], x: &[f64], n: usize, k: usize, dy: &[f64], m: usize) {
    debug_assert_eq!(dw.len(), k * m);
    for i in 0..n {
        let xi = &x[i * k..(i + 1) * k];
        let di = &dy[i * m..(i + 1) * m];
        for (kk, &a) in xi.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &mut dw[kk * m..(kk + 1) * m];
            for (o, &b) in row.iter_mut().zip(di) {
                *o += a * b;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// In-place softmax over a row; returns the log normalizer.
pub fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    for x in xs.iter_mut() {
        *x /= s;
    }
    max + s.ln()
}
