//! Contrastive pretraining of the sentence encoder against a small image
//! tower. After pretraining the encoder is frozen; GAN training never
//! updates it.

use super::classifier::{nll_rows, render_batch};
use super::{Bound, Conv2dLayer, DenseLayer, ModelError, ParamSet, SentenceEncoder};
use crate::scenes::{caption, mismatch_caption, Caption, SceneSpec, SceneSplit};
use fagan_tensor::{Adam, Elem, Graph, NodeId, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

const LEAK: f64 = 0.2;
const TEMPERATURE: f64 = 0.1;

/// Image-attribute embedding network used as the contrastive counterpart.
pub struct ImageTower<T: Elem> {
    pub params: ParamSet<T>,
    convs: Vec<Conv2dLayer>,
    proj: DenseLayer,
    resolution: usize,
}

impl<T: Elem> ImageTower<T> {
    pub fn init(resolution: usize, d_s: usize, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let mut c = 3;
        for (i, width) in [16usize, 32, 64].into_iter().enumerate() {
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
        let proj = DenseLayer::orthogonal(&mut ps, rng, "proj", c, d_s);
        Self {
            params: ps,
            convs,
            proj,
            resolution,
        }
    }

    pub fn embed(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        images: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(images).shape().first().copied().unwrap_or(0);
        super::expect_shape(
            g.value(images),
            &[n, 3, self.resolution, self.resolution],
            "image tower input",
        )?;
        let mut x = images;
        for conv in &self.convs {
            x = conv.forward(g, bound, x);
            x = g.leaky_relu(x, T::from_f64(LEAK));
        }
        let s = g.value(x).shape();
        let spatial = s[2] * s[3];
        let pooled = g.sum_spatial(x);
        let pooled = g.scale(pooled, T::one() / T::from_usize(spatial));
        Ok(self.proj.forward(g, bound, pooled))
    }
}

fn l2_normalize_rows<T: Elem>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let d = g.value(x).shape()[1];
    let sq = g.mul(x, x);
    let rowsq = g.sum_per_sample(sq);
    let safe = g.add_scalar(rowsq, T::from_f64(1e-8));
    let inv = g.powf(safe, T::from_f64(-0.5));
    let inv_full = g.broadcast_per_sample(inv, &[d]);
    g.mul(x, inv_full)
}

#[derive(Clone, Copy, Debug)]
pub struct PretrainReport {
    pub steps: u64,
    pub final_loss: f64,
    pub retrieval_accuracy: f64,
}

/// Symmetric contrastive matching on synthetic (image, caption) pairs drawn
/// from the training split. Returns the held-out retrieval accuracy.
pub fn pretrain_encoder<T: Elem>(
    encoder: &mut SentenceEncoder<T>,
    tower: &mut ImageTower<T>,
    split: &SceneSplit,
    steps: u64,
    rng: &mut impl Rng,
) -> Result<PretrainReport, ModelError> {
    if steps == 0 {
        return Err(ModelError::InvalidArgument(
            "pretraining needs at least one step".into(),
        ));
    }
    let mut opt_enc = Adam::new(
        T::from_f64(2e-3),
        T::from_f64(0.9),
        T::from_f64(0.999),
        T::from_f64(1e-8),
        encoder.params.tensors(),
    );
    let mut opt_tower = Adam::new(
        T::from_f64(2e-3),
        T::from_f64(0.9),
        T::from_f64(0.999),
        T::from_f64(1e-8),
        tower.params.tensors(),
    );
    let batch = split.train.len().min(48);
    let mut final_loss = f64::NAN;
    for _ in 0..steps {
        // distinct scenes per batch keep in-batch negatives honest
        let mut pool = split.train.clone();
        pool.shuffle(rng);
        let scenes = &pool[..batch];
        let captions: Vec<Caption> = scenes.iter().map(|s| caption(s, rng)).collect();
        let images = render_batch::<T>(scenes, tower.resolution);

        let mut g = Graph::new();
        let enc_bound = encoder.params.bind(&mut g, true);
        let tower_bound = tower.params.bind(&mut g, true);
        let img_node = g.constant(images);
        let s_emb = encoder.encode_batch(&mut g, &enc_bound, &captions)?;
        let v_emb = tower.embed(&mut g, &tower_bound, img_node)?;
        let sn = l2_normalize_rows(&mut g, s_emb);
        let vn = l2_normalize_rows(&mut g, v_emb);
        let sims = g.matmul_t(sn, vn, false, true);
        let logits = g.scale(sims, T::from_f64(1.0 / TEMPERATURE));
        let diagonal: Vec<usize> = (0..batch).collect();
        let loss_rows = nll_rows(&mut g, logits, &diagonal);
        let logits_t = g.transpose(logits);
        let loss_cols = nll_rows(&mut g, logits_t, &diagonal);
        let total = g.add(loss_rows, loss_cols);
        let loss = g.scale(total, T::from_f64(0.5));
        final_loss = Elem::to_f64(g.value(loss).item());

        let all_ids: Vec<NodeId> = enc_bound
            .node_ids()
            .iter()
            .chain(tower_bound.node_ids())
            .copied()
            .collect();
        let grads = g.backward(loss, &all_ids);
        let tensors: Vec<Option<Tensor<T>>> = grads
            .iter()
            .map(|o| o.map(|id| g.value(id).clone()))
            .collect();
        let (enc_tensors, tower_tensors) = tensors.split_at(enc_bound.node_ids().len());
        opt_enc.apply(encoder.params.tensors_mut(), enc_tensors);
        opt_tower.apply(tower.params.tensors_mut(), tower_tensors);
    }
    let retrieval = retrieval_accuracy(encoder, tower, &split.eval, 512, rng)?;
    Ok(PretrainReport {
        steps,
        final_loss,
        retrieval_accuracy: retrieval,
    })
}

/// Fraction of (image, matched caption, mismatched caption) triples where
/// the matched caption wins by cosine similarity.
pub fn retrieval_accuracy<T: Elem>(
    encoder: &SentenceEncoder<T>,
    tower: &ImageTower<T>,
    scenes: &[SceneSpec],
    pairs: usize,
    rng: &mut impl Rng,
) -> Result<f64, ModelError> {
    use rand::seq::IndexedRandom;
    let picks: Vec<SceneSpec> = (0..pairs).map(|_| *scenes.choose(rng).unwrap()).collect();
    let matched: Vec<Caption> = picks.iter().map(|s| caption(s, rng)).collect();
    let mismatched: Vec<Caption> = picks.iter().map(|s| mismatch_caption(s, rng)).collect();
    let images = render_batch::<T>(&picks, tower.resolution);

    let mut g = Graph::new();
    let enc_bound = encoder.params.bind(&mut g, false);
    let tower_bound = tower.params.bind(&mut g, false);
    let img_node = g.constant(images);
    let v = tower.embed(&mut g, &tower_bound, img_node)?;
    let s_match = encoder.encode_batch(&mut g, &enc_bound, &matched)?;
    let s_mis = encoder.encode_batch(&mut g, &enc_bound, &mismatched)?;
    let vn = l2_normalize_rows(&mut g, v);
    let mn = l2_normalize_rows(&mut g, s_match);
    let xn = l2_normalize_rows(&mut g, s_mis);
    let sim_match = {
        let prod = g.mul(vn, mn);
        g.sum_per_sample(prod)
    };
    let sim_mis = {
        let prod = g.mul(vn, xn);
        g.sum_per_sample(prod)
    };
    let (a, b) = (g.value(sim_match), g.value(sim_mis));
    let correct = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(m, x)| m > x)
        .count();
    Ok(correct as f64 / pairs as f64)
}

/// Mean cosine similarity of matched and mismatched pairs, for diagnostics.
pub fn mean_pair_similarity<T: Elem>(
    encoder: &SentenceEncoder<T>,
    tower: &ImageTower<T>,
    scenes: &[SceneSpec],
    pairs: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64), ModelError> {
    use rand::seq::IndexedRandom;
    let picks: Vec<SceneSpec> = (0..pairs).map(|_| *scenes.choose(rng).unwrap()).collect();
    let matched: Vec<Caption> = picks.iter().map(|s| caption(s, rng)).collect();
    let mismatched: Vec<Caption> = picks.iter().map(|s| mismatch_caption(s, rng)).collect();
    let images = render_batch::<T>(&picks, tower.resolution);
    let mut g = Graph::new();
    let enc_bound = encoder.params.bind(&mut g, false);
    let tower_bound = tower.params.bind(&mut g, false);
    let img_node = g.constant(images);
    let v = tower.embed(&mut g, &tower_bound, img_node)?;
    let s_match = encoder.encode_batch(&mut g, &enc_bound, &matched)?;
    let s_mis = encoder.encode_batch(&mut g, &enc_bound, &mismatched)?;
    let vn = l2_normalize_rows(&mut g, v);
    let mn = l2_normalize_rows(&mut g, s_match);
    let xn = l2_normalize_rows(&mut g, s_mis);
    let mean_of = |g: &mut Graph<T>, a: NodeId, b: NodeId| {
        let prod = g.mul(a, b);
        let per = g.sum_per_sample(prod);
        let m = g.mean_all(per);
        Elem::to_f64(g.value(m).item())
    };
    let matched_sim = mean_of(&mut g, vn, mn);
    let mismatched_sim = mean_of(&mut g, vn, xn);
    Ok((matched_sim, mismatched_sim))
}
