//! Procedural captioned-shapes dataset.
//!
//! Each scene is one shape with four closed attributes; captions are
//! templated text naming all four, and every caption parses back to its
//! scene. The match/mismatch pairing needed by the three discriminator
//! cases is machine-checkable by construction.

mod grammar;
mod render;

pub use grammar::{caption, parse_caption, tokenize, vocabulary, GrammarError, PAD_TOKEN};
pub use render::{render, shape_pixel_count};

use fagan_tensor::Tensor;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("resolution must be at least 8, got {0}")]
    ResolutionTooSmall(usize),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("noise dimension must be at least 1")]
    EmptyNoise,
    #[error("scene pool is empty")]
    EmptyPool,
}

macro_rules! attribute_enum {
    ($name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn from_word(word: &str) -> Option<Self> {
                match word {
                    $($word => Some($name::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

attribute_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
});

attribute_enum!(Color {
    Red => "red",
    Green => "green",
    Blue => "blue",
    Yellow => "yellow",
    White => "white",
});

attribute_enum!(Position {
    Left => "left",
    Right => "right",
    Top => "top",
    Bottom => "bottom",
    Center => "center",
});

attribute_enum!(Size {
    Small => "small",
    Large => "large",
});

/// Symbolic description of one renderable scene. All four attributes are
/// always set; the full domain has `3 * 5 * 5 * 2 = 150` scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub position: Position,
    pub size: Size,
}

impl SceneSpec {
    pub const COUNT: usize = Shape::ALL.len() * Color::ALL.len() * Position::ALL.len() * Size::ALL.len();

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT, "scene index {index} out of range");
        let size = Size::ALL[index % Size::ALL.len()];
        let rest = index / Size::ALL.len();
        let position = Position::ALL[rest % Position::ALL.len()];
        let rest = rest / Position::ALL.len();
        let color = Color::ALL[rest % Color::ALL.len()];
        let shape = Shape::ALL[rest / Color::ALL.len()];
        Self {
            shape,
            color,
            position,
            size,
        }
    }

    pub fn index(&self) -> usize {
        let shape = Shape::ALL.iter().position(|s| s == &self.shape).unwrap();
        let color = Color::ALL.iter().position(|c| c == &self.color).unwrap();
        let position = Position::ALL.iter().position(|p| p == &self.position).unwrap();
        let size = Size::ALL.iter().position(|s| s == &self.size).unwrap();
        ((shape * Color::ALL.len() + color) * Position::ALL.len() + position) * Size::ALL.len()
            + size
    }

    pub fn all() -> impl Iterator<Item = SceneSpec> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

/// Templated caption text plus the scene it was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    pub text: String,
    pub scene: SceneSpec,
}

/// Uniform draw over the full scene domain; deterministic given the rng.
pub fn sample_scene(rng: &mut impl Rng) -> SceneSpec {
    SceneSpec::from_index(rng.random_range(0..SceneSpec::COUNT))
}

/// Caption for a scene other than `scene`, found by rejection sampling over
/// the full domain (expected < 1.01 draws).
pub fn mismatch_caption(scene: &SceneSpec, rng: &mut impl Rng) -> Caption {
    loop {
        let other = sample_scene(rng);
        if other != *scene {
            return caption(&other, rng);
        }
    }
}

/// Aligned training arrays: real images, matched and mismatched captions,
/// and standard-normal latent noise, all of length `B`.
pub struct TrainBatch {
    pub images: Tensor<f32>,
    pub matched: Vec<Caption>,
    pub mismatched: Vec<Caption>,
    pub noise: Tensor<f32>,
    pub scenes: Vec<SceneSpec>,
}

/// Batch drawn uniformly from the full scene domain.
pub fn make_batch(
    rng: &mut impl Rng,
    batch: usize,
    noise_dim: usize,
    resolution: usize,
) -> Result<TrainBatch, SceneError> {
    let pool: Vec<SceneSpec> = SceneSpec::all().collect();
    make_batch_from(rng, &pool, batch, noise_dim, resolution)
}

/// Batch drawn from an explicit scene pool (e.g. the training split).
pub fn make_batch_from(
    rng: &mut impl Rng,
    pool: &[SceneSpec],
    batch: usize,
    noise_dim: usize,
    resolution: usize,
) -> Result<TrainBatch, SceneError> {
    if batch == 0 {
        return Err(SceneError::EmptyBatch);
    }
    if noise_dim == 0 {
        return Err(SceneError::EmptyNoise);
    }
    if pool.is_empty() {
        return Err(SceneError::EmptyPool);
    }
    if resolution < 8 {
        return Err(SceneError::ResolutionTooSmall(resolution));
    }
    let scenes: Vec<SceneSpec> = (0..batch).map(|_| *pool.choose(rng).unwrap()).collect();
    let matched: Vec<Caption> = scenes.iter().map(|s| caption(s, rng)).collect();
    let mismatched: Vec<Caption> = scenes.iter().map(|s| mismatch_caption(s, rng)).collect();
    let noise = Tensor::from_fn(&[batch, noise_dim], |_| {
        let v: f64 = StandardNormal.sample(rng);
        v as f32
    });

    // rendering is rng-free, so it can run data-parallel
    let per = 3 * resolution * resolution;
    let rendered: Vec<Tensor<f32>> = fagan_tensor::par::map_collect(batch, |i| {
        render(&scenes[i], resolution).expect("resolution validated above")
    });
    let mut images = Tensor::zeros(&[batch, 3, resolution, resolution]);
    for (i, img) in rendered.iter().enumerate() {
        images.data_mut()[i * per..(i + 1) * per].copy_from_slice(img.data());
    }

    Ok(TrainBatch {
        images,
        matched,
        mismatched,
        noise,
        scenes,
    })
}

/// Deterministic train/eval partition of the 150 scenes.
#[derive(Clone, Debug)]
pub struct SceneSplit {
    pub train: Vec<SceneSpec>,
    pub eval: Vec<SceneSpec>,
    pub seed: u64,
}

impl SceneSplit {
    pub fn new(seed: u64, eval_fraction: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&eval_fraction),
            "eval fraction must be in [0, 1)"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x53504c49); // distinct stream per purpose
        let mut indices: Vec<usize> = (0..SceneSpec::COUNT).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let n_eval = ((SceneSpec::COUNT as f64) * eval_fraction).round() as usize;
        let eval = indices[..n_eval].iter().map(|&i| SceneSpec::from_index(i)).collect();
        let train = indices[n_eval..].iter().map(|&i| SceneSpec::from_index(i)).collect();
        Self { train, eval, seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_index_roundtrip() {
        for i in 0..SceneSpec::COUNT {
            assert_eq!(SceneSpec::from_index(i).index(), i);
        }
    }

    #[test]
    fn sample_scene_deterministic_and_in_domain() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..64 {
            let sa = sample_scene(&mut a);
            let sb = sample_scene(&mut b);
            assert_eq!(sa, sb);
            assert!(sa.index() < SceneSpec::COUNT);
        }
    }

    #[test]
    fn sample_scene_frequencies_within_binomial_bound() {
        // 15k draws over 150 scenes: mean 100, bound = 4 sigma of the
        // binomial computed here rather than assumed.
        let n = 15_000usize;
        let p = 1.0 / SceneSpec::COUNT as f64;
        let bound = 4.0 * ((n as f64) * p * (1.0 - p)).sqrt();
        let mut counts = vec![0usize; SceneSpec::COUNT];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..n {
            counts[sample_scene(&mut rng).index()] += 1;
        }
        let mean = n as f64 * p;
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= bound,
                "scene {i} count {c} outside {mean} +- {bound:.1}"
            );
        }
    }

    #[test]
    fn mismatch_never_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scene = SceneSpec::from_index(77);
        for _ in 0..1000 {
            let cap = mismatch_caption(&scene, &mut rng);
            let parsed = parse_caption(&cap.text).unwrap();
            assert_ne!(parsed, scene);
            assert_eq!(parsed, cap.scene);
        }
    }

    #[test]
    fn mismatch_deterministic_under_seed() {
        let scene = SceneSpec::from_index(3);
        let a = mismatch_caption(&scene, &mut ChaCha8Rng::seed_from_u64(5));
        let b = mismatch_caption(&scene, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn batch_shapes_and_mismatch_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = make_batch(&mut rng, 4, 16, 16).unwrap();
        assert_eq!(batch.images.shape(), &[4, 3, 16, 16]);
        assert_eq!(batch.noise.shape(), &[4, 16]);
        assert_eq!(batch.matched.len(), 4);
        assert_eq!(batch.mismatched.len(), 4);
        for i in 0..4 {
            assert_eq!(batch.matched[i].scene, batch.scenes[i]);
            assert_ne!(
                parse_caption(&batch.mismatched[i].text).unwrap(),
                batch.scenes[i]
            );
        }
    }

    #[test]
    fn batch_noise_moments() {
        // 10k draws per dimension: the 0.05 mean bound sits at 5 sigma
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch = make_batch(&mut rng, 10_000, 4, 8).unwrap();
        let d = batch.noise.data();
        for dim in 0..4 {
            let vals: Vec<f64> = (0..10_000).map(|i| d[i * 4 + dim] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 0.05, "dim {dim} mean {mean}");
            assert!((0.9..1.1).contains(&var), "dim {dim} var {var}");
        }
    }

    #[test]
    fn batch_rejects_degenerate_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_batch(&mut rng, 0, 8, 16),
            Err(SceneError::EmptyBatch)
        ));
        assert!(matches!(
            make_batch(&mut rng, 2, 8, 7),
            Err(SceneError::ResolutionTooSmall(7))
        ));
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let a = SceneSplit::new(7, 0.2);
        let b = SceneSplit::new(7, 0.2);
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.train.len() + a.eval.len(), SceneSpec::COUNT);
        assert_eq!(a.eval.len(), 30);
        for s in &a.eval {
            assert!(!a.train.contains(s));
        }
    }
}
