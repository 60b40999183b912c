use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network: `f32` for training
/// throughput, `f64` for gradient and oracle checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static {
    /// Width in bytes; doubles as the precision tag in model files.
    const BYTES: usize;

    /// `C ← α·A·B + β·C` over strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: the asserts above bound every strided access, all
                // callers pass dense row-major buffers of exactly these shapes.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| T::cast(x)).collect())
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        out
    }
}

/// `self·rhs`.
pub fn matmul<T: Real>(lhs: &Matrix<T>, rhs: &Matrix<T>) -> Matrix<T> {
    assert_eq!(lhs.cols, rhs.rows);
    let mut out = Matrix::zeros(lhs.rows, rhs.cols);
    T::gemm(
        lhs.rows,
        lhs.cols,
        rhs.cols,
        T::one(),
        &lhs.data,
        lhs.cols as isize,
        1,
        &rhs.data,
        rhs.cols as isize,
        1,
        T::zero(),
        &mut out.data,
        rhs.cols as isize,
        1,
    );
    out
}

/// `lhsᵀ·rhs`.
pub fn matmul_tn<T: Real>(lhs: &Matrix<T>, rhs: &Matrix<T>) -> Matrix<T> {
    assert_eq!(lhs.rows, rhs.rows);
    let mut out = Matrix::zeros(lhs.cols, rhs.cols);
    T::gemm(
        lhs.cols,
        lhs.rows,
        rhs.cols,
        T::one(),
        &lhs.data,
        1,
        lhs.cols as isize,
        &rhs.data,
        rhs.cols as isize,
        1,
        T::zero(),
        &mut out.data,
        rhs.cols as isize,
        1,
    );
    out
}

/// `lhs·rhsᵀ`.
pub fn matmul_nt<T: Real>(lhs: &Matrix<T>, rhs: &Matrix<T>) -> Matrix<T> {
    assert_eq!(lhs.cols, rhs.cols);
    let mut out = Matrix::zeros(lhs.rows, rhs.rows);
    T::gemm(
        lhs.rows,
        lhs.cols,
        rhs.rows,
        T::one(),
        &lhs.data,
        lhs.cols as isize,
        1,
        &rhs.data,
        1,
        rhs.cols as isize,
        T::zero(),
        &mut out.data,
        rhs.rows as isize,
        1,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn products_match_naive_loops() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|v| (v as f64).sin()).collect();
        let am = Matrix::<f64>::from_vec(3, 4, a.clone());
        let bm = Matrix::<f64>::from_vec(4, 5, b.clone());
        let c = matmul(&am, &bm);
        for (x, y) in c.data.iter().zip(naive(&a, &b, 3, 4, 5)) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = Matrix::from_vec(4, 3, (0..12).map(|i| a[(i % 3) * 4 + i / 3]).collect());
        let c2 = matmul_tn(&at, &bm);
        assert_eq!(c2.rows, 3);
        for (x, y) in c2.data.iter().zip(&c.data) {
            assert!((x - y).abs() < 1e-12);
        }

        let bt = Matrix::from_vec(5, 4, (0..20).map(|i| b[(i % 4) * 5 + i / 4]).collect());
        let c3 = matmul_nt(&am, &bt);
        for (x, y) in c3.data.iter().zip(&c.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn le_bytes_round_trip() {
        let mut buf = Vec::new();
        1.25f32.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.25);
        assert_eq!(f64::read_le(&buf[4..]), -3.5);
    }
}
