//! Attribute classifier: the fixed semantic feature space for evaluation.
//! Trained once per experiment suite on rendered scenes with pixel-noise
//! augmentation, then frozen and content-addressed by parameter hash.

use super::{expect_shape, Bound, Conv2dLayer, DenseLayer, ModelError, ParamSet};
use crate::scenes::{render, Color, Position, SceneSpec, SceneSplit, Shape, Size};
use fagan_tensor::{Adam, Elem, Graph, NodeId, Tensor};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LEAK: f64 = 0.2;
const FEAT_DIM: usize = 128;

pub struct AttrClassifier<T: Elem> {
    pub params: ParamSet<T>,
    convs: Vec<Conv2dLayer>,
    heads: Vec<DenseLayer>,
    resolution: usize,
}

/// Class counts per attribute head: shape, color, position, size.
const HEAD_SIZES: [usize; 4] = [
    Shape::ALL.len(),
    Color::ALL.len(),
    Position::ALL.len(),
    Size::ALL.len(),
];

fn scene_labels(scene: &SceneSpec) -> [usize; 4] {
    [
        Shape::ALL.iter().position(|s| s == &scene.shape).unwrap(),
        Color::ALL.iter().position(|c| c == &scene.color).unwrap(),
        Position::ALL.iter().position(|p| p == &scene.position).unwrap(),
        Size::ALL.iter().position(|s| s == &scene.size).unwrap(),
    ]
}

impl<T: Elem> AttrClassifier<T> {
    pub fn init(resolution: usize, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let mut c = 3;
        for (i, width) in [32usize, 64, 128].into_iter().enumerate() {
            convs.push(Conv2dLayer::orthogonal(
                &mut ps,
                rng,
                &format!("conv{i}"),
                c,
                width,
                4,
                2,
                1,
            ));
            c = width;
        }
        convs.push(Conv2dLayer::orthogonal(
            &mut ps, rng, "conv3", c, FEAT_DIM, 3, 1, 1,
        ));
        let heads = HEAD_SIZES
            .iter()
            .enumerate()
            .map(|(i, &classes)| DenseLayer::orthogonal(&mut ps, rng, &format!("head{i}"), FEAT_DIM, classes))
            .collect();
        Self {
            params: ps,
            convs,
            heads,
            resolution,
        }
    }

    pub fn feat_dim(&self) -> usize {
        FEAT_DIM
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Penultimate features: trunk activations globally mean-pooled to
    /// `[N, FEAT_DIM]`.
    pub fn features(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        images: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(images).shape().first().copied().unwrap_or(0);
        let r = self.resolution;
        expect_shape(g.value(images), &[n, 3, r, r], "classifier input")?;
        let mut x = images;
        for conv in &self.convs {
            x = conv.forward(g, bound, x);
            x = g.leaky_relu(x, T::from_f64(LEAK));
        }
        let s = g.value(x).shape();
        let spatial = s[2] * s[3];
        let pooled = g.sum_spatial(x);
        Ok(g.scale(pooled, T::one() / T::from_usize(spatial)))
    }

    fn logits(&self, g: &mut Graph<T>, bound: &Bound, feat: NodeId) -> Vec<NodeId> {
        self.heads.iter().map(|h| h.forward(g, bound, feat)).collect()
    }

    /// Argmax attribute prediction for each image.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<SceneSpec>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let feat = self.features(&mut g, &bound, x)?;
        let logits = self.logits(&mut g, &bound, feat);
        let n = images.shape()[0];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let pick = |head: usize| -> usize {
                let t = g.value(logits[head]);
                let k = HEAD_SIZES[head];
                (0..k)
                    .max_by(|&a, &b| t.at2(i, a).partial_cmp(&t.at2(i, b)).unwrap())
                    .unwrap()
            };
            out.push(SceneSpec {
                shape: Shape::ALL[pick(0)],
                color: Color::ALL[pick(1)],
                position: Position::ALL[pick(2)],
                size: Size::ALL[pick(3)],
            });
        }
        Ok(out)
    }

    /// Mean per-attribute accuracy on clean renders of `scenes`.
    pub fn attribute_accuracy(&self, scenes: &[SceneSpec]) -> Result<f64, ModelError> {
        let images = render_batch::<T>(scenes, self.resolution);
        let predictions = self.predict(&images)?;
        let mut correct = 0usize;
        for (pred, truth) in predictions.iter().zip(scenes) {
            correct += usize::from(pred.shape == truth.shape)
                + usize::from(pred.color == truth.color)
                + usize::from(pred.position == truth.position)
                + usize::from(pred.size == truth.size);
        }
        Ok(correct as f64 / (4 * scenes.len()) as f64)
    }
}

pub(crate) fn render_batch<T: Elem>(scenes: &[SceneSpec], resolution: usize) -> Tensor<T> {
    let per = 3 * resolution * resolution;
    let rendered: Vec<Tensor<f32>> = fagan_tensor::par::map_collect(scenes.len(), |i| {
        render(&scenes[i], resolution).expect("resolution checked by caller")
    });
    let mut out = Tensor::zeros(&[scenes.len(), 3, resolution, resolution]);
    for (i, img) in rendered.iter().enumerate() {
        for (j, &v) in img.data().iter().enumerate() {
            out.data_mut()[i * per + j] = T::from_f64(v as f64);
        }
    }
    out
}

/// Row-wise negative log-likelihood with integer targets, numerically
/// stabilized by a constant row max.
pub(crate) fn nll_rows<T: Elem>(g: &mut Graph<T>, logits: NodeId, targets: &[usize]) -> NodeId {
    let (n, k) = {
        let s = g.value(logits).shape();
        (s[0], s[1])
    };
    assert_eq!(targets.len(), n);
    let rowmax = Tensor::from_fn(&[n], |i| {
        let t = g.value(logits);
        (0..k).fold(T::neg_infinity(), |acc, j| acc.max(t.at2(i, j)))
    });
    let rm = g.constant(rowmax);
    let rm_full = g.broadcast_per_sample(rm, &[k]);
    let shifted = g.sub(logits, rm_full);
    let expv = g.exp(shifted);
    let rowsum = g.sum_per_sample(expv);
    let logz = g.ln(rowsum);
    let picker = Tensor::from_fn(&[n, k], |i| {
        if i % k == targets[i / k] {
            T::one()
        } else {
            T::zero()
        }
    });
    let pick = g.constant(picker);
    let picked = g.mul(shifted, pick);
    let target_logit = g.sum_per_sample(picked);
    let per_row = g.sub(logz, target_logit);
    g.mean_all(per_row)
}

/// Supervised training on the train split with additive pixel-noise
/// augmentation. Returns the final held-out clean accuracy.
pub fn train_classifier<T: Elem>(
    classifier: &mut AttrClassifier<T>,
    split: &SceneSplit,
    steps: u64,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<f64, ModelError> {
    let mut opt = Adam::new(
        T::from_f64(2e-3),
        T::from_f64(0.9),
        T::from_f64(0.999),
        T::from_f64(1e-8),
        classifier.params.tensors(),
    );
    for _ in 0..steps {
        let scenes: Vec<SceneSpec> = (0..batch)
            .map(|_| *split.train.choose(rng).unwrap())
            .collect();
        let mut images = render_batch::<T>(&scenes, classifier.resolution);
        // additive noise with a per-image level so clean and noisy inputs
        // both stay in distribution
        let per = 3 * classifier.resolution * classifier.resolution;
        for i in 0..batch {
            let level = rng.random_range(0.0..0.2);
            for v in &mut images.data_mut()[i * per..(i + 1) * per] {
                let noise: f64 = StandardNormal.sample(rng);
                *v = *v + T::from_f64(noise * level);
            }
        }
        let labels: Vec<[usize; 4]> = scenes.iter().map(scene_labels).collect();

        let mut g = Graph::new();
        let bound = classifier.params.bind(&mut g, true);
        let x = g.constant(images);
        let feat = classifier.features(&mut g, &bound, x)?;
        let logits = classifier.logits(&mut g, &bound, feat);
        let mut loss = None;
        for (head, node) in logits.iter().enumerate() {
            let targets: Vec<usize> = labels.iter().map(|l| l[head]).collect();
            let nll = nll_rows(&mut g, *node, &targets);
            loss = Some(match loss {
                None => nll,
                Some(acc) => g.add(acc, nll),
            });
        }
        let loss = loss.unwrap();
        let grads = g.backward(loss, bound.node_ids());
        let grad_tensors: Vec<Option<Tensor<T>>> = grads
            .iter()
            .map(|opt_id| opt_id.map(|id| g.value(id).clone()))
            .collect();
        opt.apply(classifier.params.tensors_mut(), &grad_tensors);
    }
    classifier.attribute_accuracy(&split.eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn features_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clf: AttrClassifier<f32> = AttrClassifier::init(16, &mut rng);
        let scenes: Vec<SceneSpec> = (0..4).map(|i| SceneSpec::from_index(i * 11)).collect();
        let images = render_batch::<f32>(&scenes, 16);
        let mut g = Graph::new();
        let bound = clf.params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let f = clf.features(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(f).shape(), &[4, FEAT_DIM]);
        // identical image rows give identical feature rows
        let twice = {
            let dup: Vec<SceneSpec> = vec![scenes[0], scenes[0]];
            let imgs = render_batch::<f32>(&dup, 16);
            let mut g2 = Graph::new();
            let b2 = clf.params.bind(&mut g2, false);
            let x2 = g2.constant(imgs);
            let f2 = clf.features(&mut g2, &b2, x2).unwrap();
            g2.value(f2).clone()
        };
        for j in 0..FEAT_DIM {
            assert_eq!(twice.at2(0, j), twice.at2(1, j));
        }
    }

    #[test]
    fn short_training_learns_colors_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut clf: AttrClassifier<f32> = AttrClassifier::init(16, &mut rng);
        let split = SceneSplit::new(5, 0.2);
        let acc = train_classifier(&mut clf, &split, 60, 32, &mut rng).unwrap();
        assert!(acc > 0.5, "accuracy after short training: {acc}");
    }
}
