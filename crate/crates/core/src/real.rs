//! Floating-point abstraction shared by the rasterizer, the deformation
//! network and the metrics.
//!
//! Training runs in `f32`; gradient checks run the very same code in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst};

pub trait Real:
    Float
    + FloatConst
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
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
}

impl Real for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major dense matrix product helpers built on [`Real::gemm`].
pub(crate) mod dense {
    use super::Real;

    /// `out (rows×n_out) (+)= x (rows×n_in, row stride ldx) · wᵀ`, where `w`
    /// is `n_out×ldw` row-major and only columns `[0, n_in)` of it are used
    /// (callers offset the pointer for column sub-blocks).
    #[allow(clippy::too_many_arguments)]
    pub fn x_wt<F: Real>(
        rows: usize,
        n_in: usize,
        n_out: usize,
        x: &[F],
        ldx: usize,
        w: &[F],
        ldw: usize,
        out: &mut [F],
        accumulate: bool,
    ) {
        if rows == 0 || n_out == 0 {
            return;
        }
        assert!(x.len() >= (rows - 1) * ldx + n_in);
        assert!(w.len() >= (n_out - 1) * ldw + n_in);
        assert!(out.len() >= rows * n_out);
        let beta = if accumulate { F::one() } else { F::zero() };
        unsafe {
            F::gemm(
                rows,
                n_in,
                n_out,
                F::one(),
                x.as_ptr(),
                ldx as isize,
                1,
                w.as_ptr(),
                1,
                ldw as isize,
                beta,
                out.as_mut_ptr(),
                n_out as isize,
                1,
            );
        }
    }

    /// `dw (n_out×ldw, columns [0,n_in)) += dyᵀ (n_out×rows) · x (rows×n_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn dyt_x<F: Real>(
        rows: usize,
        n_in: usize,
        n_out: usize,
        dy: &[F],
        x: &[F],
        ldx: usize,
        dw: &mut [F],
        ldw: usize,
    ) {
        if rows == 0 || n_out == 0 || n_in == 0 {
            return;
        }
        assert!(dy.len() >= rows * n_out);
        assert!(x.len() >= (rows - 1) * ldx + n_in);
        assert!(dw.len() >= (n_out - 1) * ldw + n_in);
        unsafe {
            F::gemm(
                n_out,
                rows,
                n_in,
                F::one(),
                dy.as_ptr(),
                1,
                n_out as isize,
                x.as_ptr(),
                ldx as isize,
                1,
                F::one(),
                dw.as_mut_ptr(),
                ldw as isize,
                1,
            );
        }
    }

    /// `dx (rows×n_in, row stride ldx) = dy (rows×n_out) · w (n_out×ldw, cols [0,n_in))`.
    #[allow(clippy::too_many_arguments)]
    pub fn dy_w<F: Real>(
        rows: usize,
        n_in: usize,
        n_out: usize,
        dy: &[F],
        w: &[F],
        ldw: usize,
        dx: &mut [F],
        ldx: usize,
    ) {
        if rows == 0 || n_in == 0 {
            return;
        }
        assert!(dy.len() >= rows * n_out);
        assert!(w.len() >= (n_out - 1) * ldw + n_in);
        assert!(dx.len() >= (rows - 1) * ldx + n_in);
        unsafe {
            F::gemm(
                rows,
                n_out,
                n_in,
                F::one(),
                dy.as_ptr(),
                n_out as isize,
                1,
                w.as_ptr(),
                ldw as isize,
                1,
                F::zero(),
                dx.as_mut_ptr(),
                ldx as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::dense;

    #[test]
    fn x_wt_matches_naive_product() {
        // x: 2×3, w: 2×4 (use first 3 columns)
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 0.0, -1.0, 9.0, 2.0, 1.0, 0.5, 9.0];
        let mut out = [0.0f64; 4];
        dense::x_wt(2, 3, 2, &x, 3, &w, 4, &mut out, false);
        assert_eq!(out, [-2.0, 5.5, -2.0, 16.0]);
    }

    #[test]
    fn backward_products_match_naive() {
        let dy = [1.0, -1.0, 0.5, 2.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut dw = [0.0f64; 4];
        dense::dyt_x(2, 2, 2, &dy, &x, 2, &mut dw, 2);
        // dyᵀx = [[1*1+0.5*3, 1*2+0.5*4], [-1*1+2*3, -1*2+2*4]]
        assert_eq!(dw, [2.5, 4.0, 5.0, 6.0]);
        let w = [1.0, 2.0, 3.0, 4.0];
        let mut dx = [0.0f64; 4];
        dense::dy_w(2, 2, 2, &dy, &w, 2, &mut dx, 2);
        assert_eq!(dx, [-2.0, -2.0, 6.5, 9.0]);
    }
}
