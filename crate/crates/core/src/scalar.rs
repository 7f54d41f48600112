//! Floating-point scalar abstraction shared by the numeric modules.
//!
//! Alignment, retrieval and dispersion are written once over [`Scalar`] and
//! instantiated for `f32` (storage precision, used for large retrieval
//! batches) and `f64` (fitting precision, used for SVD and PCA).

use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// A real scalar usable by every numeric routine in the crate.
///
/// Besides the usual field operations (via [`RealField`]) and conversions
/// (via `num-traits`), implementors supply a dense matrix product kernel.
pub trait Scalar:
    RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon for this type.
    const EPS: Self;

    /// `c = alpha·a·b + beta·c` for strided operands.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; element `(i, j)` of a
    /// matrix `x` lives at `x[i·rsx + j·csx]`.
    ///
    /// # Safety
    ///
    /// Every index reachable through the given shapes and strides must be in
    /// bounds of the respective pointer's allocation, and `c` must not alias
    /// `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        // FromPrimitive::from_f64 never fails for f32/f64.
        Self::from_f64(v).expect("f64 converts to every float scalar")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float scalars widen to f64")
    }
}

impl Scalar for f32 {
    const EPS: f32 = f32::EPSILON;

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const EPS: f64 = f64::EPSILON;

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}
