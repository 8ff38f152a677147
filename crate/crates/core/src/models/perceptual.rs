//! Fixed random-feature extractor for the perceptual distance. Seeded,
//! never trained; distances are computed in its activation spaces.

use super::{Bound, Conv2dLayer, ParamSet};
use fagan_tensor::{Elem, Graph, NodeId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LEAK: f64 = 0.2;
const CHANNELS: [usize; 4] = [16, 32, 64, 64];
const STRIDES: [usize; 4] = [2, 2, 2, 1];

pub struct PerceptualExtractor<T: Elem> {
    pub params: ParamSet<T>,
    convs: Vec<Conv2dLayer>,
    seed: u64,
}

impl<T: Elem> PerceptualExtractor<T> {
    /// Deterministically built from a seed; two extractors with the same
    /// seed are identical.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let mut c = 3;
        for (i, (&width, &stride)) in CHANNELS.iter().zip(STRIDES.iter()).enumerate() {
            convs.push(Conv2dLayer::orthogonal(
                &mut ps,
                &mut rng,
                &format!("conv{i}"),
                c,
                width,
                3,
                stride,
                1,
            ));
            c = width;
        }
        Self {
            params: ps,
            convs,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Post-activation feature maps of all four layers.
    pub fn features(&self, g: &mut Graph<T>, bound: &Bound, image: NodeId) -> Vec<NodeId> {
        let mut x = image;
        let mut feats = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            x = conv.forward(g, bound, x);
            x = g.leaky_relu(x, T::from_f64(LEAK));
            feats.push(x);
        }
        feats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fagan_tensor::{Graph, Tensor};

    #[test]
    fn same_seed_same_features() {
        let a: PerceptualExtractor<f32> = PerceptualExtractor::seeded(99);
        let b: PerceptualExtractor<f32> = PerceptualExtractor::seeded(99);
        assert_eq!(a.params.sha256(), b.params.sha256());

        let img = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i % 7) as f32) / 3.5 - 1.0);
        let mut g = Graph::new();
        let bound = a.params.bind(&mut g, false);
        let x = g.constant(img);
        let feats = a.features(&mut g, &bound, x);
        assert_eq!(feats.len(), 4);
        // 8 -> 4 -> 2 -> 1 -> 1
        assert_eq!(g.value(feats[3]).shape(), &[1, 64, 1, 1]);
    }
}
