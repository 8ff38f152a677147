use std::fmt::{Debug, Display};

/// Floating-point element type the engine is generic over.
///
/// Training runs in `f32`; gradient checks against central finite
/// differences run the same graphs in `f64`.
pub trait Elem:
    num_traits::Float + num_traits::NumAssign + Debug + Display + Send + Sync + 'static
{
    /// General matrix multiply `C = alpha * A @ B + beta * C` with explicit
    /// row/column strides, row-major semantics.
    ///
    /// # Safety
    /// Pointers must be valid for the strided `m x k`, `k x n`, `m x n`
    /// accesses implied by the strides.
    unsafe fn gemm(
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

    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 conversion")
    }

    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }

    fn from_usize(v: usize) -> Self {
        Self::from(v).expect("usize conversion")
    }
}

impl Elem for f32 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Elem for f64 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
