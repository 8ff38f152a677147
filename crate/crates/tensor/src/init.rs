//! Parameter initializers. All draws happen in `f64` and are cast to the
//! target element type, so an `f32` and an `f64` network built from the same
//! seed agree to rounding.

use crate::elem::Elem;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn zeros<T: Elem>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

pub fn normal<T: Elem>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::from_f64(v * std)
    })
}

/// Orthogonal initializer for rank >= 2 weights; conv kernels `[O,C,KH,KW]`
/// are treated as `[O, C*KH*KW]`. The smaller of the two dimensions ends up
/// orthonormal, scaled by `gain`.
pub fn orthogonal<T: Elem>(shape: &[usize], gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    assert!(shape.len() >= 2, "orthogonal init needs rank >= 2");
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };

    // Gaussian matrix with orthonormalized rows (r <= c).
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    // Modified Gram-Schmidt, two passes for numerical safety.
    for _pass in 0..2 {
        for i in 0..r {
            for j in 0..i {
                let dot: f64 = (0..c).map(|k| m[i][k] * m[j][k]).sum();
                for k in 0..c {
                    m[i][k] -= dot * m[j][k];
                }
            }
            let norm: f64 = (0..c).map(|k| m[i][k] * m[i][k]).sum::<f64>().sqrt();
            assert!(norm > 1e-12, "degenerate draw in orthogonal init");
            for k in 0..c {
                m[i][k] /= norm;
            }
        }
    }

    let mut flat = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            flat[i * cols + j] = gain * if transpose { m[j][i] } else { m[i][j] };
        }
    }
    Tensor::from_fn(shape, |i| T::from_f64(flat[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w: Tensor<f64> = orthogonal(&[4, 16], 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..16).map(|k| w.at2(i, k) * w.at2(j, k)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "row {i} . row {j} = {dot}");
            }
        }
    }

    #[test]
    fn orthogonal_tall_matrix_has_orthonormal_columns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let w: Tensor<f64> = orthogonal(&[16, 3], 1.0, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..16).map(|k| w.at2(k, i) * w.at2(k, j)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }
}
