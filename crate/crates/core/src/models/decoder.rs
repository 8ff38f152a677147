//! Auxiliary reconstruction decoder: exactly four convolutions interleaved
//! with nearest-neighbour upsampling, mapping the joint feature back to an
//! image in `[-1, 1]`.

use super::{expect_shape, Bound, Conv2dLayer, ModelError, NetDims, ParamSet};
use fagan_tensor::{Elem, Graph, NodeId};
use rand::Rng;

const LEAK: f64 = 0.2;

pub struct Decoder<T: Elem> {
    pub params: ParamSet<T>,
    dims: NetDims,
    convs: Vec<Conv2dLayer>,
    upsamples: usize,
}

impl<T: Elem> Decoder<T> {
    pub fn init(dims: NetDims, rng: &mut impl Rng) -> Self {
        let upsamples = dims.stages();
        assert!(upsamples <= 4, "decoder supports at most 4 upsampling steps");
        let mut ps = ParamSet::new();
        let c_f = dims.c_f();
        let mut convs = Vec::new();
        let mut c = c_f;
        for i in 0..4 {
            let c_out = if i == 3 { 3 } else { (c / 2).max(8) };
            convs.push(Conv2dLayer::orthogonal(
                &mut ps,
                rng,
                &format!("conv{i}"),
                c,
                c_out,
                3,
                1,
                1,
            ));
            c = c_out;
        }
        Self {
            params: ps,
            dims,
            convs,
            upsamples,
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        self.convs.len()
    }

    /// `Dec(Enc(x, s)) -> [N, 3, R, R]` in `[-1, 1]`.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        feature: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(feature).shape().first().copied().unwrap_or(0);
        expect_shape(
            g.value(feature),
            &[n, self.dims.c_f(), 4, 4],
            "decoder input feature",
        )?;
        let mut x = feature;
        for (i, conv) in self.convs.iter().enumerate() {
            if i < self.upsamples {
                x = g.upsample2x(x);
            }
            x = conv.forward(g, bound, x);
            if i + 1 < self.convs.len() {
                x = g.leaky_relu(x, T::from_f64(LEAK));
            }
        }
        Ok(g.tanh(x))
    }
}
