//! Sentence-conditioned generator: the latent vector seeds a 4x4 feature
//! map which is upsampled through fusion blocks. Each fusion block modulates
//! channels with an affine transform computed from the sentence vector,
//! then applies a nonlinearity and a convolution.

use super::{expect_shape, Bound, Conv2dLayer, DenseLayer, ModelError, NetDims, ParamSet};
use fagan_tensor::{Elem, Graph, NodeId};
use rand::Rng;

const LEAK: f64 = 0.2;

/// Affine channel modulation from the sentence vector followed by a conv.
/// Modulation transforms are zero-initialized, so a fresh block computes
/// `conv(leaky_relu(x))` exactly.
pub struct FuseBlock {
    gamma: DenseLayer,
    beta: DenseLayer,
    conv: Conv2dLayer,
    c_in: usize,
}

impl FuseBlock {
    pub(crate) fn init<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        d_s: usize,
    ) -> Self {
        Self {
            gamma: DenseLayer::zeroed(ps, &format!("{name}.gamma"), d_s, c_in),
            beta: DenseLayer::zeroed(ps, &format!("{name}.beta"), d_s, c_in),
            conv: Conv2dLayer::orthogonal(ps, rng, &format!("{name}.conv"), c_in, c_out, 3, 1, 1),
            c_in,
        }
    }

    /// `conv(leaky_relu(x * (1 + gamma(s)) + beta(s)))`; spatial shape is
    /// preserved.
    pub fn forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: NodeId,
        s: NodeId,
    ) -> Result<NodeId, ModelError> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != self.c_in {
            return Err(ModelError::ShapeMismatch {
                what: "fusion input",
                expected: vec![xs.first().copied().unwrap_or(0), self.c_in, xs[2], xs[3]],
                got: xs,
            });
        }
        let gm = self.gamma.forward(g, bound, s);
        let scale = g.add_scalar(gm, T::one());
        let shift = self.beta.forward(g, bound, s);
        let modulated = g.mul_chan(x, scale);
        let modulated = g.add_chan(modulated, shift);
        let act = g.leaky_relu(modulated, T::from_f64(LEAK));
        Ok(self.conv.forward(g, bound, act))
    }
}

pub struct Generator<T: Elem> {
    pub params: ParamSet<T>,
    dims: NetDims,
    seed_fc: DenseLayer,
    stages: Vec<(FuseBlock, FuseBlock)>,
    to_rgb: Conv2dLayer,
}

impl<T: Elem> Generator<T> {
    pub fn init(dims: NetDims, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let seed_ch = dims.g_seed_channels();
        let seed_fc = DenseLayer::orthogonal(&mut ps, rng, "seed", dims.d_z, seed_ch * 16);
        let mut stages = Vec::new();
        let mut c = seed_ch;
        for i in 0..dims.stages() {
            let c_out = (c / 2).max(8);
            let a = FuseBlock::init(&mut ps, rng, &format!("stage{i}.fuse0"), c, c_out, dims.d_s);
            let b = FuseBlock::init(
                &mut ps,
                rng,
                &format!("stage{i}.fuse1"),
                c_out,
                c_out,
                dims.d_s,
            );
            stages.push((a, b));
            c = c_out;
        }
        let to_rgb = Conv2dLayer::orthogonal(&mut ps, rng, "to_rgb", c, 3, 3, 1, 1);
        Self {
            params: ps,
            dims,
            seed_fc,
            stages,
            to_rgb,
        }
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    /// `G(z, s) -> [N, 3, R, R]` with values in `[-1, 1]`.
    pub fn generate(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        z: NodeId,
        s: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(z).shape().first().copied().unwrap_or(0);
        expect_shape(g.value(z), &[n, self.dims.d_z], "latent noise")?;
        expect_shape(g.value(s), &[n, self.dims.d_s], "sentence vector")?;
        let seed_ch = self.dims.g_seed_channels();
        let seed = self.seed_fc.forward(g, bound, z);
        let mut x = g.reshape(seed, &[n, seed_ch, 4, 4]);
        for (a, b) in &self.stages {
            x = g.upsample2x(x);
            x = a.forward(g, bound, x, s)?;
            x = b.forward(g, bound, x, s)?;
        }
        let act = g.leaky_relu(x, T::from_f64(LEAK));
        let rgb = self.to_rgb.forward(g, bound, act);
        Ok(g.tanh(rgb))
    }

    /// One-shot generation outside a training graph.
    pub fn generate_values(
        &self,
        z: &fagan_tensor::Tensor<T>,
        s: &fagan_tensor::Tensor<T>,
    ) -> Result<fagan_tensor::Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let zn = g.constant(z.clone());
        let sn = g.constant(s.clone());
        let out = self.generate(&mut g, &bound, zn, sn)?;
        Ok(g.value(out).clone())
    }
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

    #[test]
    fn output_shape_range_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen: Generator<f32> = Generator::init(dims(), &mut rng);
        let mut data_rng = ChaCha8Rng::seed_from_u64(6);
        let z = Tensor::from_fn(&[3, 8], |_| data_rng.random_range(-1.0f32..1.0));
        let s = Tensor::from_fn(&[3, 12], |_| data_rng.random_range(-1.0f32..1.0));
        let a = gen.generate_values(&z, &s).unwrap();
        let b = gen.generate_values(&z, &s).unwrap();
        assert!(a == b);
        assert_eq!(a.shape(), &[3, 3, 16, 16]);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn distinct_noise_produces_distinct_images_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gen: Generator<f32> = Generator::init(dims(), &mut rng);
        let mut data_rng = ChaCha8Rng::seed_from_u64(8);
        let z1 = Tensor::from_fn(&[1, 8], |_| data_rng.random_range(-1.0f32..1.0));
        let z2 = Tensor::from_fn(&[1, 8], |_| data_rng.random_range(-1.0f32..1.0));
        let s = Tensor::from_fn(&[1, 12], |_| data_rng.random_range(-1.0f32..1.0));
        let a = gen.generate_values(&z1, &s).unwrap();
        let b = gen.generate_values(&z2, &s).unwrap();
        let differing = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| (**x - **y).abs() > 1e-3)
            .count();
        assert!(
            differing * 100 >= a.len(),
            "only {differing} of {} pixels differ",
            a.len()
        );
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gen: Generator<f32> = Generator::init(dims(), &mut rng);
        let z = Tensor::zeros(&[2, 5]);
        let s = Tensor::zeros(&[2, 12]);
        assert!(matches!(
            gen.generate_values(&z, &s),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }
}
