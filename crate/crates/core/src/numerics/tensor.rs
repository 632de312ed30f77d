use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Product of all axes but the last.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.data.len() / self.cols()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_cover_data() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Tensor::from_rows(&rows).is_err());
    }
}
