//! Symmetric eigendecomposition (cyclic Jacobi) and the PSD matrix square
//! root built on it. Small dense matrices only, which is all the
//! feature-space statistics need.

use fagan_tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {0:?}")]
    NotSquare(Vec<usize>),
    #[error("matrix is not symmetric: |a - a^T| reaches {0:.3e}")]
    NotSymmetric(f64),
    #[error("matrix has eigenvalue {value:.3e} below the PSD tolerance {tolerance:.3e}")]
    NotPsd { value: f64, tolerance: f64 },
}

fn check_square(a: &Tensor<f64>) -> Result<usize, LinalgError> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(LinalgError::NotSquare(s.to_vec()));
    }
    Ok(s[0])
}

fn max_abs(a: &Tensor<f64>) -> f64 {
    a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (unsorted) and the orthogonal matrix whose columns
/// are the eigenvectors, so `A = V diag(w) V^T`.
pub fn sym_eigen(a: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>), LinalgError> {
    let n = check_square(a)?;
    let mut m: Vec<f64> = a.data().to_vec();
    let sym_err = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |e, (i, j)| e.max((m[i * n + j] - m[j * n + i]).abs()));
    let scale = max_abs(a).max(1e-300);
    if sym_err > 1e-8 * scale.max(1.0) {
        return Err(LinalgError::NotSymmetric(sym_err));
    }
    // exact symmetrization before rotating
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..64 {
        if off(&m) <= 1e-14 * fro {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    Ok((w, Tensor::new(&[n, n], v)))
}

/// Symmetric square root of a PSD matrix via eigendecomposition with
/// clamped eigenvalue square roots. Eigenvalues below `-1e-8 * ||A||` are
/// rejected; small negatives inside the tolerance clamp to zero.
pub fn sqrtm_psd(a: &Tensor<f64>) -> Result<Tensor<f64>, LinalgError> {
    let n = check_square(a)?;
    let (w, v) = sym_eigen(a)?;
    let scale = max_abs(a).max(1.0);
    let tolerance = -1e-8 * scale;
    let mut roots = vec![0.0f64; n];
    for (i, &lambda) in w.iter().enumerate() {
        if lambda < tolerance {
            return Err(LinalgError::NotPsd {
                value: lambda,
                tolerance,
            });
        }
        roots[i] = lambda.max(0.0).sqrt();
    }
    // S = V diag(sqrt(w)) V^T, then exact symmetrization
    let vd = v.data();
    let mut s = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for (k, &r) in roots.iter().enumerate() {
                acc += vd[i * n + k] * r * vd[j * n + k];
            }
            s[i * n + j] = acc;
            s[j * n + i] = acc;
        }
    }
    Ok(Tensor::new(&[n, n], s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        fagan_tensor::kernels::matmul(a, b, false, false)
    }

    #[test]
    fn diagonal_square_root() {
        let a = Tensor::new(&[2, 2], vec![4.0, 0.0, 0.0, 9.0]);
        let s = sqrtm_psd(&a).unwrap();
        assert!((s.at2(0, 0) - 2.0).abs() < 1e-12);
        assert!((s.at2(1, 1) - 3.0).abs() < 1e-12);
        assert!(s.at2(0, 1).abs() < 1e-12);
    }

    #[test]
    fn identity_square_root_is_identity() {
        let n = 5;
        let a = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let s = sqrtm_psd(&a).unwrap();
        for i in 0..n * n {
            assert!((s.data()[i] - a.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_psd_reconstruction_to_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for n in [4usize, 16, 64] {
            let b = Tensor::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0));
            let a = fagan_tensor::kernels::matmul(&b, &b, true, false); // B^T B
            let s = sqrtm_psd(&a).unwrap();
            let ss = matmul(&s, &s);
            let num: f64 = ss
                .data()
                .iter()
                .zip(a.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let den: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "n={n}: relative error {}", num / den);
            // symmetry of the root
            for i in 0..n {
                for j in 0..n {
                    assert!((s.at2(i, j) - s.at2(j, i)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let a = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sqrtm_psd(&a), Err(LinalgError::NotSymmetric(_))));
        let b = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(sqrtm_psd(&b), Err(LinalgError::NotPsd { .. })));
    }

    #[test]
    fn eigen_recovers_known_spectrum() {
        // A = Q diag(3, 1) Q^T with a hand-built rotation Q
        let (c, s) = (0.6f64, 0.8f64);
        let q = Tensor::new(&[2, 2], vec![c, -s, s, c]);
        let d = Tensor::new(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]);
        let qd = matmul(&q, &d);
        let a = fagan_tensor::kernels::matmul(&qd, &q, false, true);
        let (mut w, _) = sym_eigen(&a).unwrap();
        w.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 3.0).abs() < 1e-12);
    }
}
