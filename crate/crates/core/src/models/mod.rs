//! The networks: frozen sentence encoder, generator with sentence-modulated
//! fusion blocks, joint image-text discriminator (`Enc` trunk + scoring
//! head) with its auxiliary reconstruction decoder, plus the two fixed
//! feature extractors used for perceptual distance and evaluation.

mod classifier;
mod decoder;
mod discriminator;
mod encoder;
mod generator;
mod perceptual;
mod pretrain;

pub use classifier::{train_classifier, AttrClassifier};

/// Render scenes into one `[N, 3, R, R]` batch tensor.
pub fn render_images(
    scenes: &[crate::scenes::SceneSpec],
    resolution: usize,
) -> Result<fagan_tensor::Tensor<f32>, crate::scenes::SceneError> {
    if resolution < 8 {
        return Err(crate::scenes::SceneError::ResolutionTooSmall(resolution));
    }
    Ok(classifier::render_batch::<f32>(scenes, resolution))
}
pub use decoder::Decoder;
pub use discriminator::Discriminator;
pub use encoder::SentenceEncoder;
pub use generator::{FuseBlock, Generator};
pub use perceptual::PerceptualExtractor;
pub use pretrain::{mean_pair_similarity, pretrain_encoder, retrieval_accuracy, ImageTower, PretrainReport};

use fagan_tensor::{Elem, Graph, NodeId, Tensor};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("caption is empty after tokenization")]
    EmptyCaption,
    #[error("unknown token {0:?} (closed vocabulary)")]
    UnknownToken(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

pub(crate) fn expect_shape<T: Elem>(
    t: &Tensor<T>,
    expected: &[usize],
    what: &'static str,
) -> Result<(), ModelError> {
    if t.shape() != expected {
        return Err(ModelError::ShapeMismatch {
            what,
            expected: expected.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, uniquely named parameter tensors of one network. Order is the
/// serialization order; names are stable across runs.
pub struct ParamSet<T: Elem> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Elem> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn set_all(&mut self, tensors: Vec<Tensor<T>>) {
        assert_eq!(tensors.len(), self.tensors.len(), "parameter count mismatch");
        for (old, new) in self.tensors.iter().zip(&tensors) {
            assert_eq!(old.shape(), new.shape(), "parameter shape mismatch");
        }
        self.tensors = tensors;
    }

    /// Bind every parameter into a graph, trainable or frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { ids }
    }

    /// Content hash over the serialized little-endian f32 form, matching the
    /// on-disk representation.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            hasher.update(name.as_bytes());
            for v in tensor.data() {
                hasher.update((Elem::to_f64(*v) as f32).to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Graph-node handles for one [`ParamSet`] binding.
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, p: ParamId) -> NodeId {
        self.ids[p.0]
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }
}

pub(crate) struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn orthogonal<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl rand::Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = ps.add(
            format!("{name}.weight"),
            fagan_tensor::init::orthogonal(&[c_out, c_in, k, k], 1.0, rng),
        );
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, bound: &Bound, x: NodeId) -> NodeId {
        let y = g.conv2d(x, bound.id(self.w), self.stride, self.pad);
        g.bias_add_chan(y, bound.id(self.b))
    }
}

pub(crate) struct DenseLayer {
    pub w: ParamId, // [in, out]
    pub b: ParamId,
}

impl DenseLayer {
    pub fn orthogonal<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl rand::Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = ps.add(
            format!("{name}.weight"),
            fagan_tensor::init::orthogonal(&[d_in, d_out], 1.0, rng),
        );
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    /// All-zero weights and bias; used for the modulation transforms so a
    /// fresh fusion block is exactly a plain conv block.
    pub fn zeroed<T: Elem>(
        ps: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = ps.add(format!("{name}.weight"), Tensor::zeros(&[d_in, d_out]));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, bound: &Bound, x: NodeId) -> NodeId {
        let y = g.matmul(x, bound.id(self.w));
        g.add_row_broadcast(y, bound.id(self.b))
    }
}

/// Network dimensioning shared by all models in one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetDims {
    pub resolution: usize,
    pub d_z: usize,
    pub d_s: usize,
    pub g_base: usize,
    pub d_base: usize,
    pub emb_dim: usize,
    pub rnn_hidden: usize,
    pub max_tokens: usize,
}

impl NetDims {
    /// Upsampling/downsampling stages between the 4x4 trunk and the image.
    pub fn stages(&self) -> usize {
        assert!(
            self.resolution >= 8 && self.resolution.is_power_of_two(),
            "model resolution must be a power of two >= 8, got {}",
            self.resolution
        );
        (self.resolution / 4).trailing_zeros() as usize
    }

    /// Joint-feature channel count at the 4x4 trunk.
    pub fn c_f(&self) -> usize {
        self.d_base << self.stages()
    }

    /// Generator seed channel count at 4x4.
    pub fn g_seed_channels(&self) -> usize {
        self.g_base << self.stages()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.resolution < 8 || !self.resolution.is_power_of_two() || self.resolution > 64 {
            return Err(ModelError::InvalidArgument(format!(
                "resolution must be a power of two in 8..=64, got {}",
                self.resolution
            )));
        }
        for (name, v) in [
            ("d_z", self.d_z),
            ("d_s", self.d_s),
            ("g_base", self.g_base),
            ("d_base", self.d_base),
            ("emb_dim", self.emb_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
