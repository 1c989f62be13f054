use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage precision tag recorded in model artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}

/// Floating point element type of tensors: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    /// `c = a·b (+ c when `accumulate`)` for row-major operands; `a` is
    /// `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when
    /// `trans_b`), `c` is `m×n`.
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

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

/// `gemm` for `m == 1` or `k == 1`, where both layouts of `a` coincide.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Float + Sum>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        unsafe { small_gemm_avx2(m, k, n, a, b, trans_b, c, accumulate) };
        return;
    }
    small_gemm_portable(m, k, n, a, b, trans_b, c, accumulate);
}

/// The same loops compiled for 256-bit vectors. Only the vector width
/// changes; the arithmetic and its order are identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn small_gemm_avx2<T: Float + Sum>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    small_gemm_portable(m, k, n, a, b, trans_b, c, accumulate);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn small_gemm_portable<T: Float + Sum>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let c = &mut c[..m * n];
    if !accumulate {
        c.fill(T::zero());
    }
    if k == 1 {
        // b holds n values either way
        for (i, row) in c.chunks_exact_mut(n).enumerate() {
            let ai = a[i];
            for (cj, &bj) in row.iter_mut().zip(&b[..n]) {
                *cj = *cj + ai * bj;
            }
        }
    } else if trans_b {
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = *cj + dot(&a[..k], &b[j * k..(j + 1) * k]);
        }
    } else {
        for (p, &ap) in a[..k].iter().enumerate() {
            for (cj, &bj) in c.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj = *cj + ap * bj;
            }
        }
    }
}

/// Dot product over eight independent lanes, so the loop vectorizes.
#[inline(always)]
fn dot<T: Float>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: T = xc.remainder().iter().zip(yc.remainder()).fold(T::zero(), |s, (&a, &b)| s + a * b);
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + xs[l] * ys[l];
        }
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

macro_rules! impl_scalar {
    ($ty:ty, $prec:expr, $gemm:path, $width:expr) => {
        impl Scalar for $ty {
            const PRECISION: Precision = $prec;

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
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if m == 1 || k == 1 {
                    // vector and outer products: skipping the packing step of
                    // the blocked kernel is several times faster here
                    small_gemm(m, k, n, a, b, trans_b, c, accumulate);
                    return;
                }
                // Strides of the logical m×k and k×n views over row-major storage.
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the assertion above bounds every index the kernel
                // touches for the given dimensions and strides.
                unsafe {
                    $gemm(
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

            fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
                values.iter().flat_map(|v| v.to_le_bytes()).collect()
            }

            fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
                bytes
                    .chunks_exact($width)
                    .map(|chunk| <$ty>::from_le_bytes(chunk.try_into().unwrap()))
                    .collect()
            }
        }
    };
}

impl_scalar!(f32, Precision::F32, matrixmultiply::sgemm, 4);
impl_scalar!(f64, Precision::F64, matrixmultiply::dgemm, 8);
