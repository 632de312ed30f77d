use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::distributions::uniform::SampleUniform;

/// Floating-point element type of a [`Tensor`](super::Tensor).
///
/// Implemented for `f32` (training) and `f64` (gradient checking).
pub trait Scalar:
    Float + NumAssign + Debug + Display + Default + Sum + SampleUniform + Send + Sync + 'static
{
    /// `c = a·b` (or `c += a·b` when `accumulate`), with arbitrary strides so
    /// transposed operands need no copy.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * strides.0 + (cols as isize - 1) * strides.1;
    assert!(
        strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                assert!(c.len() >= m * n, "gemm output too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
                    }
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: operand extents checked above; output is row-major m×n.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn of(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
