//! Stateless forward kernels shared by the eager API and the recording [`Graph`](super::Graph).

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major boolean matrix; `true` means "may attend".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "bool_matrix",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..rows * cols).map(|x| f(x / cols, x % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Contract(format!(
            "{op} expects a 2-D tensor, got shape {s:?}"
        ))),
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        a.data(),
        (k as isize, 1),
        b.data(),
        (n as isize, 1),
        &mut out,
        false,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Softmax over the allowed entries of one row. Disallowed entries get exactly
/// zero weight, which is the limit of adding −∞ to their scores. Returns
/// `false` when nothing is allowed.
pub(crate) fn softmax_row<T: Scalar>(scores: &[T], allow: &[bool], out: &mut [T]) -> bool {
    let mut max = T::neg_infinity();
    for (&s, &a) in scores.iter().zip(allow) {
        if a && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return false;
    }
    let mut total = T::zero();
    for ((o, &s), &a) in out.iter_mut().zip(scores).zip(allow) {
        *o = if a { (s - max).exp() } else { T::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    true
}

pub fn masked_softmax<T: Scalar>(scores: &Tensor<T>, mask: &BoolMatrix) -> Result<Tensor<T>> {
    let (r, c) = dims2(scores, "masked_softmax")?;
    if (r, c) != (mask.rows, mask.cols) {
        return Err(Error::Dimension {
            op: "masked_softmax",
            left: scores.shape().to_vec(),
            right: vec![mask.rows, mask.cols],
        });
    }
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        if !softmax_row(scores.row(i), mask.row(i), &mut out[i * c..(i + 1) * c]) {
            return Err(Error::InvalidMask { row: i });
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

pub(crate) struct LayerNormStats<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormStats<T>)> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    let rows = x.rows();
    let inv_d = T::one() / T::of(d as f64);
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        inv_std.push(rstd);
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            normalized[i * d + j] = xh;
            out[i * d + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormStats {
            normalized,
            inv_std,
        },
    ))
}

/// Normalizes every last-axis slice of `x` and applies the affine `gamma`, `beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
