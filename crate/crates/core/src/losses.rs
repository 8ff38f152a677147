//! Objective terms: matching-aware hinge pair, gradient penalty at real
//! matched pairs, perceptual reconstruction, feature-aware generator
//! regularizer, and the unweighted totals.
//!
//! Each term exists as a graph builder (`*_node`, used by the training
//! steps) and, where tests exercise plain numbers, as a convenience
//! function that evaluates the same builder on constants — one formula,
//! two surfaces.

use crate::models::{Bound, PerceptualExtractor};
use fagan_tensor::{Elem, Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

/// Raw discriminator outputs for the three training cases.
#[derive(Clone, Debug)]
pub struct ScoreBatch {
    pub match_scores: Vec<f64>,
    pub mismatch_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
}

impl ScoreBatch {
    fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("match_scores", &self.match_scores),
            ("mismatch_scores", &self.mismatch_scores),
            ("fake_scores", &self.fake_scores),
        ] {
            if v.is_empty() {
                return Err(LossError::InvalidArgument(format!("{name} is empty")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(LossError::InvalidArgument(format!(
                    "{name} contains a non-finite value"
                )));
            }
        }
        Ok(())
    }
}

/// Discriminator hinge:
/// `-mean[min(0,-1+m)] - 1/2 mean[min(0,-1-m^)] - 1/2 mean[min(0,-1-f)]`.
/// The gradient penalty is a separate term.
pub fn adv_loss_d_node<T: Elem>(
    g: &mut Graph<T>,
    match_scores: NodeId,
    mismatch_scores: NodeId,
    fake_scores: NodeId,
) -> NodeId {
    let half = T::from_f64(0.5);
    let m_term = {
        let shifted = g.add_scalar(match_scores, -T::one());
        let hinge = g.min_zero(shifted);
        let mean = g.mean_all(hinge);
        g.neg(mean)
    };
    let negative_term = |g: &mut Graph<T>, scores: NodeId| {
        let flipped = g.neg(scores);
        let shifted = g.add_scalar(flipped, -T::one());
        let hinge = g.min_zero(shifted);
        let mean = g.mean_all(hinge);
        let neg = g.neg(mean);
        g.scale(neg, half)
    };
    let mis_term = negative_term(g, mismatch_scores);
    let fake_term = negative_term(g, fake_scores);
    let partial = g.add(m_term, mis_term);
    g.add(partial, fake_term)
}

pub fn adv_loss_d(scores: &ScoreBatch) -> Result<f64, LossError> {
    scores.validate()?;
    let mut g: Graph<f64> = Graph::new();
    let m = g.constant(Tensor::new(&[scores.match_scores.len()], scores.match_scores.clone()));
    let mis = g.constant(Tensor::new(
        &[scores.mismatch_scores.len()],
        scores.mismatch_scores.clone(),
    ));
    let f = g.constant(Tensor::new(&[scores.fake_scores.len()], scores.fake_scores.clone()));
    let node = adv_loss_d_node(&mut g, m, mis, f);
    Ok(g.value(node).item())
}

/// Generator adversarial term: `-mean(fake_scores)`.
pub fn adv_loss_g_node<T: Elem>(g: &mut Graph<T>, fake_scores: NodeId) -> NodeId {
    let mean = g.mean_all(fake_scores);
    g.neg(mean)
}

pub fn adv_loss_g(fake_scores: &[f64]) -> Result<f64, LossError> {
    if fake_scores.is_empty() {
        return Err(LossError::InvalidArgument("fake_scores is empty".into()));
    }
    if fake_scores.iter().any(|x| !x.is_finite()) {
        return Err(LossError::InvalidArgument(
            "fake_scores contains a non-finite value".into(),
        ));
    }
    let mut g: Graph<f64> = Graph::new();
    let f = g.constant(Tensor::new(&[fake_scores.len()], fake_scores.to_vec()));
    let node = adv_loss_g_node(&mut g, f);
    Ok(g.value(node).item())
}

/// Gradient penalty at the real matched pair:
/// `k * mean_batch(||grad_(x,s) D||_2 ^ p)`, differentiable w.r.t. the
/// discriminator parameters through the gradient itself.
///
/// `scores` must be `D(images, sents)` built in `g` with `images` and
/// `sents` as gradient-tracked leaves.
pub fn ma_gp_node<T: Elem>(
    g: &mut Graph<T>,
    images: NodeId,
    sents: NodeId,
    scores: NodeId,
    k: T,
    p: T,
) -> Result<NodeId, LossError> {
    if k <= T::zero() || p <= T::zero() {
        return Err(LossError::InvalidArgument(
            "gradient penalty needs k > 0 and p > 0".into(),
        ));
    }
    if !g.requires_grad(images) || !g.requires_grad(sents) {
        return Err(LossError::Unsupported(
            "gradient penalty needs gradient-tracked image and sentence inputs".into(),
        ));
    }
    let total = g.sum_all(scores);
    let grads = g.backward(total, &[images, sents]);
    let (Some(gx), Some(gs)) = (grads[0], grads[1]) else {
        return Err(LossError::Unsupported(
            "discriminator output does not depend on its inputs".into(),
        ));
    };
    let gx2 = g.mul(gx, gx);
    let gs2 = g.mul(gs, gs);
    let per_x = g.sum_per_sample(gx2);
    let per_s = g.sum_per_sample(gs2);
    let sumsq = g.add(per_x, per_s);
    // ||g||^p as (||g||^2)^(p/2); exact for the even p used by default
    let two = T::one() + T::one();
    let powered = g.powf(sumsq, p / two);
    let mean = g.mean_all(powered);
    Ok(g.scale(mean, k))
}

/// Gradient penalty of an arbitrary scorer on concrete inputs; builds its
/// own graph. The scorer sees gradient-tracked leaves for both inputs.
pub fn ma_gp_value<T: Elem>(
    images: &Tensor<T>,
    sents: &Tensor<T>,
    k: T,
    p: T,
    scorer: impl FnOnce(&mut Graph<T>, NodeId, NodeId) -> NodeId,
) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let x = g.variable(images.clone());
    let s = g.variable(sents.clone());
    let scores = scorer(&mut g, x, s);
    let node = ma_gp_node(&mut g, x, s, scores, k, p)?;
    Ok(Elem::to_f64(g.value(node).item()))
}

/// Mean squared distance between the extractor activations of two images,
/// averaged over the extractor's layer set.
pub fn perceptual_distance_node<T: Elem>(
    g: &mut Graph<T>,
    extractor: &PerceptualExtractor<T>,
    bound: &Bound,
    a: NodeId,
    b: NodeId,
) -> Result<NodeId, LossError> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(LossError::InvalidArgument(format!(
            "perceptual distance needs equal shapes, got {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let fa = extractor.features(g, bound, a);
    let fb = extractor.features(g, bound, b);
    let mut acc: Option<NodeId> = None;
    let layers = fa.len();
    for (na, nb) in fa.into_iter().zip(fb) {
        let diff = g.sub(na, nb);
        let sq = g.mul(diff, diff);
        let mse = g.mean_all(sq);
        acc = Some(match acc {
            None => mse,
            Some(prev) => g.add(prev, mse),
        });
    }
    Ok(g.scale(acc.expect("extractor has layers"), T::one() / T::from_usize(layers)))
}

pub fn perceptual_distance<T: Elem>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    extractor: &PerceptualExtractor<T>,
) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let bound = extractor.params.bind(&mut g, false);
    let an = g.constant(a.clone());
    let bn = g.constant(b.clone());
    let node = perceptual_distance_node(&mut g, extractor, &bound, an, bn)?;
    Ok(Elem::to_f64(g.value(node).item()))
}

/// Reconstruction term: perceptual distance between `Dec(Enc(x, s))` and
/// the real image. Applies to real samples only; the target must be a
/// constant so gradients reach Enc and Dec parameters alone.
pub fn reconstruction_loss_node<T: Elem>(
    g: &mut Graph<T>,
    extractor: &PerceptualExtractor<T>,
    bound: &Bound,
    reconstruction: NodeId,
    real_images: NodeId,
) -> Result<NodeId, LossError> {
    perceptual_distance_node(g, extractor, bound, reconstruction, real_images)
}

/// Feature-aware term: mean absolute difference between the joint features
/// of the real and the generated image under the same sentence. The real
/// feature is the constant target; gradient flows through the generated
/// side only.
pub fn feature_aware_loss_node<T: Elem>(
    g: &mut Graph<T>,
    enc_real: NodeId,
    enc_fake: NodeId,
) -> Result<NodeId, LossError> {
    if g.value(enc_real).shape() != g.value(enc_fake).shape() {
        return Err(LossError::InvalidArgument(format!(
            "feature batches differ in shape: {:?} vs {:?}",
            g.value(enc_real).shape(),
            g.value(enc_fake).shape()
        )));
    }
    let diff = g.sub(enc_real, enc_fake);
    let mag = g.abs(diff);
    Ok(g.mean_all(mag))
}

pub fn feature_aware_loss<T: Elem>(
    enc_real: &Tensor<T>,
    enc_fake: &Tensor<T>,
) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let a = g.constant(enc_real.clone());
    let b = g.constant(enc_fake.clone());
    let node = feature_aware_loss_node(&mut g, a, b)?;
    Ok(Elem::to_f64(g.value(node).item()))
}

fn ensure_finite(name: &str, v: f64) -> Result<f64, LossError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LossError::InvalidArgument(format!("{name} is not finite: {v}")))
    }
}

/// Discriminator total: adversarial (penalty included) plus reconstruction.
/// Coefficients default to 1.0 and are plain multipliers.
pub fn total_d(adv_d: f64, magp: f64, rec: f64) -> Result<f64, LossError> {
    Ok(ensure_finite("adv_d", adv_d)? + ensure_finite("magp", magp)? + ensure_finite("rec", rec)?)
}

/// Generator total: adversarial plus feature-aware.
pub fn total_g(adv_g: f64, fa: f64) -> Result<f64, LossError> {
    Ok(ensure_finite("adv_g", adv_g)? + ensure_finite("fa", fa)?)
}

/// Per-step loss summary; fields are present only in the phase that
/// produced them.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct LossReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_g: Option<f64>,
}

impl LossReport {
    pub fn merge(mut self, other: LossReport) -> LossReport {
        self.adv_d = self.adv_d.or(other.adv_d);
        self.magp = self.magp.or(other.magp);
        self.rec = self.rec.or(other.rec);
        self.total_d = self.total_d.or(other.total_d);
        self.adv_g = self.adv_g.or(other.adv_g);
        self.fa = self.fa.or(other.fa);
        self.total_g = self.total_g.or(other.total_g);
        self
    }

    pub fn all_finite(&self) -> bool {
        [
            self.adv_d, self.magp, self.rec, self.total_d, self.adv_g, self.fa, self.total_g,
        ]
        .iter()
        .flatten()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(m: &[f64], mis: &[f64], f: &[f64]) -> ScoreBatch {
        ScoreBatch {
            match_scores: m.to_vec(),
            mismatch_scores: mis.to_vec(),
            fake_scores: f.to_vec(),
        }
    }

    #[test]
    fn hinge_values_match_hand_computation() {
        // all margins satisfied
        assert_eq!(adv_loss_d(&scores(&[1.0], &[-1.0], &[-1.0])).unwrap(), 0.0);
        // all scores at zero: 1 + 0.5 + 0.5
        assert_eq!(adv_loss_d(&scores(&[0.0], &[0.0], &[0.0])).unwrap(), 2.0);
        // deep in the clamp region
        assert_eq!(adv_loss_d(&scores(&[2.0], &[-3.0], &[-1.5])).unwrap(), 0.0);
    }

    #[test]
    fn hinge_rejects_empty_and_non_finite() {
        assert!(adv_loss_d(&scores(&[], &[0.0], &[0.0])).is_err());
        assert!(adv_loss_d(&scores(&[f64::NAN], &[0.0], &[0.0])).is_err());
    }

    #[test]
    fn generator_adversarial_values() {
        assert_eq!(adv_loss_g(&[0.5, -0.5]).unwrap(), 0.0);
        assert_eq!(adv_loss_g(&[3.0]).unwrap(), -3.0);
        assert_eq!(adv_loss_g(&[-1.0, -1.0, -1.0, -1.0]).unwrap(), 1.0);
        assert!(adv_loss_g(&[]).is_err());
    }

    #[test]
    fn linear_scorer_penalty_is_analytic() {
        // D(x, s) = 3 x0 + 4 x1, no sentence dependence: ||grad|| = 5,
        // penalty = k * 5^p = 2 * 5^6 = 31250
        let images = Tensor::new(&[1, 2], vec![0.3f64, -0.7]);
        let sents = Tensor::new(&[1, 1], vec![0.1f64]);
        let value = ma_gp_value(&images, &sents, 2.0, 6.0, |g, x, s| {
            let w = g.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]));
            let zero = g.constant(Tensor::new(&[1, 1], vec![0.0]));
            let wx = g.matmul(x, w);
            let ws = g.matmul(s, zero);
            let sum = g.add(wx, ws);
            g.reshape(sum, &[1])
        })
        .unwrap();
        assert!((value - 31250.0).abs() / 31250.0 < 1e-9, "got {value}");
    }

    #[test]
    fn zero_weight_scorer_gives_zero_penalty() {
        let images = Tensor::new(&[2, 3], vec![0.5f64; 6]);
        let sents = Tensor::new(&[2, 2], vec![0.25f64; 4]);
        let value = ma_gp_value(&images, &sents, 2.0, 6.0, |g, x, s| {
            let wx = g.constant(Tensor::zeros(&[3, 1]));
            let ws = g.constant(Tensor::zeros(&[2, 1]));
            let a = g.matmul(x, wx);
            let b = g.matmul(s, ws);
            let sum = g.add(a, b);
            g.reshape(sum, &[2])
        })
        .unwrap();
        assert_eq!(value, 0.0);
    }

    #[test]
    fn penalty_requires_tracked_inputs() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]));
        let s = g.variable(Tensor::new(&[1, 1], vec![0.5]));
        let fake_scores = g.sum_per_sample(x);
        assert!(matches!(
            ma_gp_node(&mut g, x, s, fake_scores, 2.0, 6.0),
            Err(LossError::Unsupported(_))
        ));
    }

    #[test]
    fn feature_aware_arithmetic_and_identity() {
        let a = Tensor::new(&[1, 2], vec![1.0f64, 2.0]);
        let b = Tensor::new(&[1, 2], vec![0.0f64, 0.0]);
        assert_eq!(feature_aware_loss(&a, &b).unwrap(), 1.5);
        assert_eq!(feature_aware_loss(&a, &a).unwrap(), 0.0);
        let c = Tensor::new(&[2, 1], vec![0.0f64, 0.0]);
        assert!(feature_aware_loss(&a, &c).is_err());
    }

    #[test]
    fn totals_are_plain_sums_with_finite_checks() {
        assert_eq!(total_d(2.0, 0.0, 0.0).unwrap(), 2.0);
        assert_eq!(total_g(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_d(1.5, 0.25, 0.75).unwrap(), 2.5);
        assert!(total_d(f64::INFINITY, 0.0, 0.0).is_err());
        assert!(total_g(0.0, f64::NAN).is_err());
    }

    #[test]
    fn perceptual_distance_identity_and_symmetry() {
        let extractor: PerceptualExtractor<f64> = PerceptualExtractor::seeded(5);
        let a = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i % 11) as f64) / 5.5 - 1.0);
        let b = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i % 7) as f64) / 3.5 - 1.0);
        assert_eq!(perceptual_distance(&a, &a, &extractor).unwrap(), 0.0);
        let ab = perceptual_distance(&a, &b, &extractor).unwrap();
        let ba = perceptual_distance(&b, &a, &extractor).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12);
    }
}
