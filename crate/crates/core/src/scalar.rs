//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type the networks, losses and optimizers are generic over.
///
/// Implemented for `f32` (the production path) and `f64` (used for
/// finite-difference gradient checks). The matrix product is delegated to
/// `matrixmultiply`, which only provides these two precisions.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// General matrix multiply `C <- alpha * A * B + beta * C` on strided views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    /// Lossless-where-possible narrowing used by the checkpoint format.
    fn to_f32_bits(self) -> u32;
    fn from_f32_bits(bits: u32) -> Self;
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    rsa: usize,
    csa: usize,
    b_len: usize,
    rsb: usize,
    csb: usize,
    c_len: usize,
    rsc: usize,
    csc: usize,
) {
    assert!(last_index(m, k, rsa, csa) <= a_len, "gemm: A out of bounds");
    assert!(last_index(k, n, rsb, csb) <= b_len, "gemm: B out of bounds");
    assert!(last_index(m, n, rsc, csc) <= c_len, "gemm: C out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:ident) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_gemm_bounds(
                    m,
                    k,
                    n,
                    a.len(),
                    rsa,
                    csa,
                    b.len(),
                    rsb,
                    csb,
                    c.len(),
                    rsc,
                    csc,
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel was bounds-checked above
                // and `c` is exclusively borrowed.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }

            #[inline]
            fn to_f32_bits(self) -> u32 {
                (self as f32).to_bits()
            }

            #[inline]
            fn from_f32_bits(bits: u32) -> Self {
                f32::from_bits(bits) as $t
            }
        }
    };
}

impl_scalar!(f32, sgemm);
impl_scalar!(f64, dgemm);
