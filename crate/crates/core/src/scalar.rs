//! Floating-point element types accepted by tensors and models.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of every tensor in the crate.
///
/// Implemented for `f32` (default training precision) and `f64` (gradient
/// checks and bit-exact determinism tests).
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Dtype code written into the tensor file header.
    const DTYPE: u8;
    const BYTES: usize;
    const NAME: &'static str;

    /// `c += a * b` for row-major `a: m×k`, `b: k×n`, `c: m×n` with
    /// explicit row/column strides (so transposed views need no copy).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }
}

macro_rules! gemm_body {
    ($f:ident, $m:ident, $k:ident, $n:ident, $a:ident, $rsa:ident, $csa:ident, $b:ident, $rsb:ident, $csb:ident, $c:ident) => {{
        if $m == 0 || $n == 0 {
            return;
        }
        if $k == 0 {
            return;
        }
        debug_assert!($c.len() >= $m * $n);
        // SAFETY: callers pass slices that cover every strided element
        // touched for the given m, k, n and strides; c is row-major m×n.
        unsafe {
            matrixmultiply::$f(
                $m,
                $k,
                $n,
                1.0,
                $a.as_ptr(),
                $rsa,
                $csa,
                $b.as_ptr(),
                $rsb,
                $csb,
                1.0,
                $c.as_mut_ptr(),
                $n as isize,
                1,
            );
        }
    }};
}

impl Scalar for f32 {
    const DTYPE: u8 = 1;
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        c: &mut [f32],
    ) {
        gemm_body!(sgemm, m, k, n, a, rsa, csa, b, rsb, csb, c)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 2;
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        c: &mut [f64],
    ) {
        gemm_body!(dgemm, m, k, n, a, rsa, csa, b, rsb, csb, c)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
