//! Bidirectional recurrent sentence encoder. Pretrained once by contrastive
//! matching against an image tower, then frozen for GAN training; the
//! concatenated final hidden states of both directions are projected to the
//! sentence vector.

use super::{Bound, DenseLayer, ModelError, ParamId, ParamSet};
use crate::scenes::{tokenize, vocabulary, Caption};
use fagan_tensor::{Elem, Graph, NodeId, Tensor};
use rand::Rng;

pub(crate) struct RnnCell {
    wx: ParamId, // [emb, hidden]
    wh: ParamId, // [hidden, hidden]
    b: ParamId,  // [hidden]
}

impl RnnCell {
    fn init<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        emb: usize,
        hidden: usize,
    ) -> Self {
        Self {
            wx: ps.add(
                format!("{name}.wx"),
                fagan_tensor::init::orthogonal(&[emb, hidden], 1.0, rng),
            ),
            wh: ps.add(
                format!("{name}.wh"),
                fagan_tensor::init::orthogonal(&[hidden, hidden], 1.0, rng),
            ),
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[hidden])),
        }
    }

    /// One masked step: `h' = mask * tanh(x Wx + h Wh + b) + (1-mask) * h`.
    fn step<T: Elem>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: NodeId,
        h: NodeId,
        mask: NodeId,
        inv_mask: NodeId,
    ) -> NodeId {
        let xw = g.matmul(x, bound.id(self.wx));
        let hw = g.matmul(h, bound.id(self.wh));
        let pre = g.add(xw, hw);
        let pre = g.add_row_broadcast(pre, bound.id(self.b));
        let new = g.tanh(pre);
        let keep_new = g.mul_per_sample(new, mask);
        let keep_old = g.mul_per_sample(h, inv_mask);
        g.add(keep_new, keep_old)
    }
}

pub struct SentenceEncoder<T: Elem> {
    pub params: ParamSet<T>,
    vocab: Vec<String>,
    emb_dim: usize,
    hidden: usize,
    d_s: usize,
    max_tokens: usize,
    emb: ParamId, // [vocab, emb_dim]
    fwd: RnnCell,
    bwd: RnnCell,
    proj: DenseLayer, // [2*hidden, d_s]
}

impl<T: Elem> SentenceEncoder<T> {
    pub fn init(
        emb_dim: usize,
        hidden: usize,
        d_s: usize,
        max_tokens: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let vocab = vocabulary();
        let mut params = ParamSet::new();
        let emb = params.add(
            "emb.weight",
            fagan_tensor::init::normal(&[vocab.len(), emb_dim], 0.2, rng),
        );
        let fwd = RnnCell::init(&mut params, rng, "rnn_fwd", emb_dim, hidden);
        let bwd = RnnCell::init(&mut params, rng, "rnn_bwd", emb_dim, hidden);
        let proj = DenseLayer::orthogonal(&mut params, rng, "proj", 2 * hidden, d_s);
        Self {
            params,
            vocab,
            emb_dim,
            hidden,
            d_s,
            max_tokens,
            emb,
            fwd,
            bwd,
            proj,
        }
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn token_ids(&self, caption: &Caption) -> Result<Vec<usize>, ModelError> {
        let tokens = tokenize(&caption.text);
        if tokens.is_empty() {
            return Err(ModelError::EmptyCaption);
        }
        if tokens.len() > self.max_tokens {
            return Err(ModelError::InvalidArgument(format!(
                "caption has {} tokens, maximum is {}",
                tokens.len(),
                self.max_tokens
            )));
        }
        tokens
            .iter()
            .map(|t| {
                self.vocab
                    .iter()
                    .position(|v| v == t)
                    .ok_or_else(|| ModelError::UnknownToken(t.clone()))
            })
            .collect()
    }

    /// Encode a batch of captions to `[N, d_s]` sentence vectors.
    pub fn encode_batch(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        captions: &[Caption],
    ) -> Result<NodeId, ModelError> {
        if captions.is_empty() {
            return Err(ModelError::InvalidArgument("empty caption batch".into()));
        }
        let n = captions.len();
        let ids: Vec<Vec<usize>> = captions
            .iter()
            .map(|c| self.token_ids(c))
            .collect::<Result<_, _>>()?;
        let steps = self.max_tokens;
        let vocab = self.vocab.len();

        // one-hot lookups and validity masks per timestep, as constants
        let embed_at = |g: &mut Graph<T>, pos: &dyn Fn(usize) -> Option<usize>| {
            let onehot = Tensor::from_fn(&[n, vocab], |i| {
                let (row, col) = (i / vocab, i % vocab);
                match pos(row) {
                    Some(tok) if tok == col => T::one(),
                    _ => T::zero(),
                }
            });
            let oh = g.constant(onehot);
            g.matmul(oh, bound.id(self.emb))
        };

        let mut h_fwd = g.constant(Tensor::zeros(&[n, self.hidden]));
        let mut h_bwd = g.constant(Tensor::zeros(&[n, self.hidden]));
        for t in 0..steps {
            // both directions consume a token at step t iff t < len; the
            // mask freezes hidden states past each caption's end
            let mask = Tensor::from_fn(&[n], |row| {
                if t < ids[row].len() {
                    T::one()
                } else {
                    T::zero()
                }
            });
            let inv = mask.map(|v| T::one() - v);
            let (m, i) = (g.constant(mask), g.constant(inv));

            // forward direction reads position t
            let x_f = embed_at(g, &|row| ids[row].get(t).copied());
            h_fwd = self.fwd.step(g, bound, x_f, h_fwd, m, i);

            // backward direction reads position len-1-t
            let x_b = embed_at(g, &|row| {
                let len = ids[row].len();
                if t < len {
                    Some(ids[row][len - 1 - t])
                } else {
                    None
                }
            });
            h_bwd = self.bwd.step(g, bound, x_b, h_bwd, m, i);
        }
        let both = g.concat_axis1(h_fwd, h_bwd);
        Ok(self.proj.forward(g, bound, both))
    }

    /// Convenience single-shot encoding outside any training graph.
    pub fn encode_values(&self, captions: &[Caption]) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let s = self.encode_batch(&mut g, &bound, captions)?;
        Ok(g.value(s).clone())
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }
}
