//! Joint image-text discriminator. The trunk (`Enc`) downsamples the image
//! to 4x4, injects the projected sentence vector by channel concatenation
//! and one fusing convolution, and the scoring head collapses the joint
//! feature to one unbounded logit per sample. The reconstruction decoder
//! consumes the same joint feature, so the scoring trunk and the feature
//! space coincide by construction.

use super::{expect_shape, Bound, Conv2dLayer, DenseLayer, ModelError, NetDims, ParamSet};
use fagan_tensor::{Elem, Graph, NodeId};
use rand::Rng;

const LEAK: f64 = 0.2;

pub struct Discriminator<T: Elem> {
    pub params: ParamSet<T>,
    dims: NetDims,
    stem: Vec<Conv2dLayer>,
    to_cf: Conv2dLayer,
    s_proj: DenseLayer,
    fuse: Conv2dLayer,
    score1: Conv2dLayer,
    score2: Conv2dLayer,
    s_channels: usize,
}

impl<T: Elem> Discriminator<T> {
    pub fn init(dims: NetDims, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut stem = Vec::new();
        let mut c = 3;
        let mut width = dims.d_base;
        for i in 0..dims.stages() {
            stem.push(Conv2dLayer::orthogonal(
                &mut ps,
                rng,
                &format!("stem{i}"),
                c,
                width,
                4,
                2,
                1,
            ));
            c = width;
            width *= 2;
        }
        let c_f = dims.c_f();
        let to_cf = Conv2dLayer::orthogonal(&mut ps, rng, "to_cf", c, c_f, 3, 1, 1);
        let s_channels = 2 * dims.d_base;
        let s_proj = DenseLayer::orthogonal(&mut ps, rng, "s_proj", dims.d_s, s_channels);
        let fuse = Conv2dLayer::orthogonal(&mut ps, rng, "fuse", c_f + s_channels, c_f, 3, 1, 1);
        let score1 = Conv2dLayer::orthogonal(&mut ps, rng, "score1", c_f, c_f, 3, 1, 1);
        let score2 = Conv2dLayer::orthogonal(&mut ps, rng, "score2", c_f, 1, 4, 1, 0);
        Self {
            params: ps,
            dims,
            stem,
            to_cf,
            s_proj,
            fuse,
            score1,
            score2,
            s_channels,
        }
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    /// `Enc(x, s) -> [N, c_f, 4, 4]`: strided downsampling stack, sentence
    /// projected, spatially replicated, concatenated channel-wise, fused by
    /// one convolution.
    pub fn encode_joint(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        image: NodeId,
        s: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(image).shape().first().copied().unwrap_or(0);
        let r = self.dims.resolution;
        expect_shape(g.value(image), &[n, 3, r, r], "discriminator image")?;
        expect_shape(g.value(s), &[n, self.dims.d_s], "sentence vector")?;
        let mut x = image;
        for conv in &self.stem {
            x = conv.forward(g, bound, x);
            x = g.leaky_relu(x, T::from_f64(LEAK));
        }
        x = self.to_cf.forward(g, bound, x);
        x = g.leaky_relu(x, T::from_f64(LEAK));
        let sp = self.s_proj.forward(g, bound, s);
        let sp4 = g.reshape(sp, &[n, self.s_channels, 1, 1]);
        let sp_up = broadcast_1x1(g, sp4, 4, 4);
        let joined = g.concat_axis1(x, sp_up);
        Ok(self.fuse.forward(g, bound, joined))
    }

    /// Two convolutions collapse the joint feature to one raw logit per
    /// sample.
    pub fn score(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        feature: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(feature).shape().first().copied().unwrap_or(0);
        expect_shape(
            g.value(feature),
            &[n, self.dims.c_f(), 4, 4],
            "joint feature",
        )?;
        let h = self.score1.forward(g, bound, feature);
        let h = g.leaky_relu(h, T::from_f64(LEAK));
        let out = self.score2.forward(g, bound, h);
        Ok(g.reshape(out, &[n]))
    }

    /// `D(x, s) = score(Enc(x, s))`.
    pub fn score_pair(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        image: NodeId,
        s: NodeId,
    ) -> Result<NodeId, ModelError> {
        let feat = self.encode_joint(g, bound, image, s)?;
        self.score(g, bound, feat)
    }
}

/// Replicate `[N,C,1,1]` to `[N,C,H,W]` by repeated nearest upsampling
/// (H and W must be powers of two).
fn broadcast_1x1<T: Elem>(g: &mut Graph<T>, x: NodeId, h: usize, w: usize) -> NodeId {
    assert_eq!(h, w, "square replication only");
    assert!(h.is_power_of_two());
    let mut cur = x;
    let mut size = 1;
    while size < h {
        cur = g.upsample2x(cur);
        size *= 2;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use fagan_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims {
            resolution: 16,
            d_z: 8,
            d_s: 12,
            g_base: 8,
            d_base: 8,
            emb_dim: 8,
            rnn_hidden: 8,
            max_tokens: 12,
        }
    }

    fn forward(disc: &Discriminator<f32>, img: &Tensor<f32>, s: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
        let mut g = Graph::new();
        let bound = disc.params.bind(&mut g, false);
        let i = g.constant(img.clone());
        let sv = g.constant(s.clone());
        let feat = disc.encode_joint(&mut g, &bound, i, sv).unwrap();
        let score = disc.score(&mut g, &bound, feat).unwrap();
        (g.value(feat).clone(), g.value(score).clone())
    }

    #[test]
    fn joint_feature_shape_and_score_is_scalar_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let disc: Discriminator<f32> = Discriminator::init(dims(), &mut rng);
        let mut dr = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_fn(&[2, 3, 16, 16], |_| dr.random_range(-1.0f32..1.0));
        let s = Tensor::from_fn(&[2, 12], |_| dr.random_range(-1.0f32..1.0));
        let (feat, score) = forward(&disc, &img, &s);
        // two downsampling stages from 16x16: c_f = 8 * 2^2 = 32
        assert_eq!(feat.shape(), &[2, 32, 4, 4]);
        assert_eq!(score.shape(), &[2]);
        assert!(score.all_finite());
        let (feat2, score2) = forward(&disc, &img, &s);
        assert!(feat == feat2 && score == score2);
    }

    #[test]
    fn sentence_vector_reaches_the_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let disc: Discriminator<f32> = Discriminator::init(dims(), &mut rng);
        let mut dr = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::from_fn(&[1, 3, 16, 16], |_| dr.random_range(-1.0f32..1.0));
        let s1 = Tensor::from_fn(&[1, 12], |_| dr.random_range(-1.0f32..1.0));
        let s2 = Tensor::from_fn(&[1, 12], |_| dr.random_range(-1.0f32..1.0));
        let (f1, _) = forward(&disc, &img, &s1);
        let (f2, _) = forward(&disc, &img, &s2);
        assert!(f1 != f2, "feature ignores the sentence vector");
    }

    #[test]
    fn rejects_wrong_image_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let disc: Discriminator<f32> = Discriminator::init(dims(), &mut rng);
        let mut g = Graph::new();
        let bound = disc.params.bind(&mut g, false);
        let img = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let s = g.constant(Tensor::zeros(&[1, 12]));
        assert!(matches!(
            disc.encode_joint(&mut g, &bound, img, s),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }
}
