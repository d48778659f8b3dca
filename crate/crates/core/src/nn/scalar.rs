use std::fmt::{Debug, Display};

use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type of a [`Tensor`](super::Tensor).
///
/// Training and inference run in `f32`; gradient checks run in `f64`.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + Serialize + DeserializeOwned + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a·b (+ c)` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
    /// `trans_a`/`trans_b` read the stored matrix as its transpose.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical [rows, cols]; stored as [cols, rows] when transposed
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Output widths up to this use a register-accumulator loop instead of the
/// packed kernel, whose packing cost dominates for narrow outputs.
const NARROW_N: usize = 16;

fn narrow_gemm<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let mut padded = vec![T::zero(); k * NARROW_N];
    for (dst, src) in padded.chunks_exact_mut(NARROW_N).zip(b[..k * n].chunks_exact(n)) {
        dst[..n].copy_from_slice(src);
    }
    for (row, out) in a[..m * k].chunks_exact(k).zip(c[..m * n].chunks_exact_mut(n)) {
        let mut acc = [T::zero(); NARROW_N];
        for (&av, brow) in row.iter().zip(padded.chunks_exact(NARROW_N)) {
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s = *s + av * bv;
            }
        }
        for (o, &s) in out.iter_mut().zip(&acc) {
            *o = if accumulate { *o + s } else { s };
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:ident) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                if !trans_a && !trans_b && n <= NARROW_N {
                    narrow_gemm(m, k, n, a, b, c, accumulate);
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    matrixmultiply::$gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, sgemm);
impl_scalar!(f64, dgemm);
