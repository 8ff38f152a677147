//! Gaussian moment fitting and the closed-form Frechet distance between two
//! Gaussians.

use super::linalg::{sqrtm_psd, LinalgError};
use fagan_tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("need at least 2 rows to fit a covariance, got {0}")]
    TooFewRows(usize),
    #[error("feature matrix must be rank 2, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("feature matrix contains a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("distance {0:.3e} is below the negative tolerance")]
    NegativeDistance(f64),
}

/// Mean vector and symmetric PSD covariance of one feature distribution.
#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Tensor<f64>,
    pub cov: Tensor<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.shape()[0]
    }
}

/// Sample mean and unbiased sample covariance (divisor N-1), symmetrized.
pub fn fit_gaussian(features: &Tensor<f64>) -> Result<GaussianStats, GaussianError> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(GaussianError::BadShape(s.to_vec()));
    }
    let (n, d) = (s[0], s[1]);
    if n < 2 {
        return Err(GaussianError::TooFewRows(n));
    }
    if !features.all_finite() {
        return Err(GaussianError::NonFinite);
    }
    let data = features.data();
    let mut mean = vec![0.0f64; d];
    for row in 0..n {
        for j in 0..d {
            mean[j] += data[row * d + j];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for row in 0..n {
        for i in 0..d {
            let di = data[row * d + i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += di * (data[row * d + j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianStats {
        mean: Tensor::new(&[d], mean),
        cov: Tensor::new(&[d, d], cov),
    })
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(sqrt(S1) S2 sqrt(S1)))`, clamped
/// to zero when within `-1e-6`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, GaussianError> {
    let d = a.dim();
    if d != b.dim() {
        return Err(GaussianError::DimensionMismatch(d, b.dim()));
    }
    let mean_term: f64 = a
        .mean
        .data()
        .iter()
        .zip(b.mean.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = sqrtm_psd(&a.cov)?;
    let inner = {
        let left = fagan_tensor::kernels::matmul(&sqrt_a, &b.cov, false, false);
        fagan_tensor::kernels::matmul(&left, &sqrt_a, false, false)
    };
    let cross = sqrtm_psd(&inner)?;
    let trace = |m: &Tensor<f64>| -> f64 { (0..d).map(|i| m.at2(i, i)).sum() };
    let value = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * trace(&cross);
    if value < -1e-6 {
        return Err(GaussianError::NegativeDistance(value));
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn degenerate_and_two_point_fits() {
        let all_same = Tensor::new(&[3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = fit_gaussian(&all_same).unwrap();
        assert_eq!(g.mean.data(), &[1.0, 2.0]);
        assert!(g.cov.data().iter().all(|&v| v == 0.0));

        let two = Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]);
        let g = fit_gaussian(&two).unwrap();
        assert_eq!(g.mean.data(), &[1.0, 0.0]);
        assert_eq!(g.cov.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_single_row() {
        let one = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_gaussian(&one), Err(GaussianError::TooFewRows(1))));
    }

    #[test]
    fn standard_normal_sampling_recovers_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let (n, d) = (100_000, 4);
        let feats = Tensor::from_fn(&[n, d], |_| StandardNormal.sample(&mut rng));
        let g = fit_gaussian(&feats).unwrap();
        for j in 0..d {
            assert!(g.mean.data()[j].abs() < 0.02);
            for k in 0..d {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((g.cov.at2(j, k) - expect).abs() < 0.05);
            }
        }
    }

    fn diag_stats(mean: &[f64], var: &[f64]) -> GaussianStats {
        let d = mean.len();
        GaussianStats {
            mean: Tensor::new(&[d], mean.to_vec()),
            cov: Tensor::from_fn(&[d, d], |i| {
                if i / d == i % d {
                    var[i / d]
                } else {
                    0.0
                }
            }),
        }
    }

    #[test]
    fn analytic_distances() {
        let a = diag_stats(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);

        // equal covariance: distance is the squared mean gap
        let b = diag_stats(&[3.0, 4.0], &[1.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-8);

        // equal means, 4I vs I in 2 dims: Tr(4I + I - 2*2I) = 2
        let c = diag_stats(&[0.0, 0.0], &[4.0, 4.0]);
        assert!((frechet_distance(&a, &c).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b1 = Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0));
        let b2 = Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0));
        let a = GaussianStats {
            mean: Tensor::new(&[3], vec![0.1, -0.2, 0.3]),
            cov: fagan_tensor::kernels::matmul(&b1, &b1, true, false),
        };
        let b = GaussianStats {
            mean: Tensor::new(&[3], vec![-0.5, 0.4, 0.0]),
            cov: fagan_tensor::kernels::matmul(&b2, &b2, true, false),
        };
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab >= 0.0);
    }

    #[test]
    fn monte_carlo_consistency_with_closed_form() {
        // two explicit diagonal Gaussians, 50k samples each
        let mean_a = [0.5, -1.0, 0.0];
        let var_a = [1.0, 2.0, 0.5];
        let mean_b = [-0.5, 0.0, 1.5];
        let var_b = [0.5, 1.0, 1.0];
        let truth = frechet_distance(&diag_stats(&mean_a, &var_a), &diag_stats(&mean_b, &var_b))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sample = |mean: &[f64], var: &[f64]| {
            Tensor::from_fn(&[50_000, 3], |i| {
                let j = i % 3;
                let z: f64 = StandardNormal.sample(&mut rng);
                mean[j] + var[j].sqrt() * z
            })
        };
        let fa = fit_gaussian(&sample(&mean_a, &var_a)).unwrap();
        let fb = fit_gaussian(&sample(&mean_b, &var_b)).unwrap();
        let estimate = frechet_distance(&fa, &fb).unwrap();
        assert!(
            (estimate - truth).abs() / truth < 0.05,
            "estimate {estimate} vs truth {truth}"
        );
    }
}
