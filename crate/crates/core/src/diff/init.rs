use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    XavierUniform,
    /// Square matrix with orthonormal columns.
    Orthogonal,
    Zeros,
}

pub fn init_matrix<R: Rng + ?Sized>(
    kind: InitKind,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Tensor, DiffError> {
    if rows == 0 || cols == 0 {
        return Err(DiffError::InvalidShape(vec![rows, cols]));
    }
    match kind {
        InitKind::Zeros => Ok(Tensor::zeros(&[rows, cols])),
        InitKind::XavierUniform => {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
            Tensor::new(vec![rows, cols], data)
        }
        InitKind::Orthogonal => {
            if rows != cols {
                return Err(DiffError::NotSquare { rows, cols });
            }
            let n = rows;
            let gauss: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
            Tensor::new(vec![n, n], orthonormalize(gauss, n))
        }
    }
}

/// Modified Gram-Schmidt over columns, applied twice for numerical
/// orthogonality. Degenerate columns are replaced by unit vectors.
fn orthonormalize(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let col = |a: &[f64], j: usize| -> Vec<f64> { (0..n).map(|i| a[i * n + j]).collect() };
    for j in 0..n {
        let mut v = col(&a, j);
        for _pass in 0..2 {
            for k in 0..j {
                let q = col(&a, k);
                let dot: f64 = q.iter().zip(&v).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(&q).for_each(|(vi, qi)| *vi -= dot * qi);
            }
        }
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v = vec![0.0; n];
            v[j] = 1.0;
            norm = 1.0;
        }
        for i in 0..n {
            a[i * n + j] = v[i] / norm;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = init_matrix(InitKind::Zeros, 3, 2, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(t.shape(), &[3, 2]);
    }

    #[test]
    fn orthogonal_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 4, 12, 48] {
            let q = init_matrix(InitKind::Orthogonal, n, n, &mut rng).unwrap();
            let d = q.data();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|k| d[k * n + i] * d[k * n + j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((dot - target).abs());
                }
            }
            assert!(worst <= 1e-8, "n={n} max |QtQ - I| = {worst}");
        }
    }

    #[test]
    fn orthogonal_rejects_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            init_matrix(InitKind::Orthogonal, 3, 2, &mut rng),
            Err(DiffError::NotSquare { rows: 3, cols: 2 })
        );
    }

    #[test]
    fn xavier_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bound = (6.0f64 / 128.0).sqrt();
        assert!((bound - 0.2165).abs() < 1e-4);
        let t = init_matrix(InitKind::XavierUniform, 64, 64, &mut rng).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // The sample mean of U(-a, a) has standard error a / sqrt(3n).
        for draws in [1usize, 16] {
            let samples: Vec<f64> = (0..draws)
                .flat_map(|_| init_matrix(InitKind::XavierUniform, 64, 64, &mut rng).unwrap().into_data())
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            assert!(mean.abs() < 5.0 * bound / (3.0 * n).sqrt(), "mean {mean} over {n}");
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = init_matrix(InitKind::XavierUniform, 5, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_matrix(InitKind::XavierUniform, 5, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
