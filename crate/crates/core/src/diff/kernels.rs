//! Row-major dense kernels shared by the tape and the no-tape eval paths.

use super::DiffError;

/// `out = beta*out + op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is `a_rows x a_cols` and `b` is `b_rows x b_cols` as stored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    (a_rows, a_cols): (usize, usize),
    trans_a: bool,
    b: &[f64],
    (b_rows, b_cols): (usize, usize),
    trans_b: bool,
    beta: f64,
    out: &mut [f64],
) {
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1isize, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1isize, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1isize)
    };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    // SAFETY: slice lengths match the strides computed above for an
    // m x k by k x n product written into a row-major m x n output.
    unsafe {
        matrixmultiply::dgemm(
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
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Product of two row-major matrices with optional transposition.
pub fn matmul(
    a: &[f64],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_dims: (usize, usize),
    trans_b: bool,
) -> Result<(Vec<f64>, (usize, usize)), DiffError> {
    let (m, k) = if trans_a { (a_dims.1, a_dims.0) } else { a_dims };
    let (k2, n) = if trans_b { (b_dims.1, b_dims.0) } else { b_dims };
    if k != k2 || a.len() != a_dims.0 * a_dims.1 || b.len() != b_dims.0 * b_dims.1 {
        return Err(DiffError::Shape {
            op: "matmul",
            left: (m, k),
            right: (k2, n),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(a, a_dims, trans_a, b, b_dims, trans_b, 0.0, &mut out);
    Ok((out, (m, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], (m, k): (usize, usize), b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        out
    }

    fn transpose(a: &[f64], (r, c): (usize, usize)) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn transposed_products_match_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let expect = naive(&a, (2, 3), &b, 4);

        let (plain, dims) = matmul(&a, (2, 3), false, &b, (3, 4), false).unwrap();
        assert_eq!(dims, (2, 4));
        let at = transpose(&a, (2, 3));
        let bt = transpose(&b, (3, 4));
        let (ta, _) = matmul(&at, (3, 2), true, &b, (3, 4), false).unwrap();
        let (tb, _) = matmul(&a, (2, 3), false, &bt, (4, 3), true).unwrap();
        let (tt, _) = matmul(&at, (3, 2), true, &bt, (4, 3), true).unwrap();
        for got in [plain, ta, tb, tt] {
            for (x, y) in got.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_dimension_mismatch_is_an_error() {
        assert!(matmul(&[0.0; 6], (2, 3), false, &[0.0; 6], (2, 3), false).is_err());
    }
}
