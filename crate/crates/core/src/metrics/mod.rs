//! Evaluation: Frechet distance between real and generated feature
//! distributions in the frozen attribute-classifier space ("toy-FID"),
//! plus qualitative sample grids. Values are only comparable within one
//! extractor hash.

mod font;
mod gaussian;
mod grid;
mod linalg;

pub use gaussian::{fit_gaussian, frechet_distance, GaussianError, GaussianStats};
pub use grid::emit_grid;
pub use linalg::{sqrtm_psd, sym_eigen, LinalgError};

use crate::archive::{self, ArchiveError};
use crate::models::{AttrClassifier, Generator, ModelError, SentenceEncoder};
use crate::scenes::{caption, Caption, SceneError, SceneSpec, SceneSplit};
use fagan_tensor::{Graph, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding error: {0}")]
    Image(String),
}

/// Frechet-distance evaluation record.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FidReport {
    pub fid: f64,
    pub n_generated: usize,
    pub n_real: usize,
    /// Content hash of the frozen extractor; reports are only comparable
    /// when this matches.
    pub extractor_id: String,
    pub seed: u64,
    pub timestamp_unix: u64,
    /// Which scene split supplied the real-side statistics.
    pub real_split: String,
}

const CHUNK: usize = 64;

/// Penultimate-layer activations of the frozen extractor, one row per
/// image, evaluated in chunks.
pub fn extract_features(
    images: &Tensor<f32>,
    extractor: &AttrClassifier<f32>,
) -> Result<Tensor<f64>, MetricsError> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(MetricsError::InvalidArgument(format!(
            "images must be rank 4, got {s:?}"
        )));
    }
    let n = s[0];
    let d = extractor.feat_dim();
    let per = s[1] * s[2] * s[3];
    let mut out = Tensor::zeros(&[n, d]);
    let mut start = 0;
    while start < n {
        let stop = (start + CHUNK).min(n);
        let chunk = Tensor::new(
            &[stop - start, s[1], s[2], s[3]],
            images.data()[start * per..stop * per].to_vec(),
        );
        let mut g = Graph::new();
        let bound = extractor.params.bind(&mut g, false);
        let x = g.constant(chunk);
        let feats = extractor.features(&mut g, &bound, x)?;
        let values = g.value(feats);
        for (i, row) in (start..stop).enumerate() {
            for j in 0..d {
                out.data_mut()[row * d + j] = values.at2(i, j) as f64;
            }
        }
        start = stop;
    }
    Ok(out)
}

/// Disk-backed cache of real-side Gaussian statistics, keyed by extractor
/// hash, split, seed and sample count.
pub struct StatsCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, GaussianStats>,
}

#[derive(Serialize, Deserialize)]
struct StatsMeta {
    key: String,
}

impl StatsCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            memory: HashMap::new(),
        }
    }

    pub fn on_disk(dir: PathBuf) -> Self {
        Self {
            dir: Some(dir),
            memory: HashMap::new(),
        }
    }

    fn get_or_compute(
        &mut self,
        key: &str,
        compute: impl FnOnce() -> Result<GaussianStats, MetricsError>,
    ) -> Result<GaussianStats, MetricsError> {
        if let Some(hit) = self.memory.get(key) {
            return Ok(hit.clone());
        }
        let file = self
            .dir
            .as_ref()
            .map(|d| d.join(format!("stats-{key}.fgn")));
        if let Some(path) = &file {
            if path.exists() {
                let arch = archive::read_archive(path)?;
                arch.expect_kind("stats")?;
                let mut tensors = arch.take_tensors();
                let cov32 = tensors.pop().expect("cov entry");
                let mean32 = tensors.pop().expect("mean entry");
                let stats = GaussianStats {
                    mean: mean32.to_f64(),
                    cov: cov32.to_f64(),
                };
                self.memory.insert(key.to_string(), stats.clone());
                return Ok(stats);
            }
        }
        let stats = compute()?;
        if let Some(path) = &file {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mean32 = Tensor::from_f64_tensor(&stats.mean);
            let cov32 = Tensor::from_f64_tensor(&stats.cov);
            archive::write_archive(
                path,
                "stats",
                &StatsMeta {
                    key: key.to_string(),
                },
                &[("mean".to_string(), &mean32), ("cov".to_string(), &cov32)],
            )?;
        }
        self.memory.insert(key.to_string(), stats.clone());
        Ok(stats)
    }
}

fn eval_rng(seed: u64, lane: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&lane.to_le_bytes());
    bytes[16..24].copy_from_slice(b"fid-eval");
    ChaCha8Rng::from_seed(bytes)
}

/// Features of `n` real samples drawn with replacement from `scenes`.
/// Renders are deterministic per scene, so each distinct scene is rendered
/// and embedded once and rows are replicated by draw count.
fn real_features(
    scenes: &[SceneSpec],
    n: usize,
    extractor: &AttrClassifier<f32>,
    rng: &mut impl Rng,
) -> Result<Tensor<f64>, MetricsError> {
    let mut counts = vec![0usize; scenes.len()];
    for _ in 0..n {
        counts[rng.random_range(0..scenes.len())] += 1;
    }
    let images = crate::models::render_images(scenes, extractor.resolution())?;
    let distinct = extract_features(&images, extractor)?;
    let d = extractor.feat_dim();
    let mut out = Tensor::zeros(&[n, d]);
    let mut row = 0;
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let src = &distinct.data()[i * d..(i + 1) * d];
            out.data_mut()[row * d..(row + 1) * d].copy_from_slice(src);
            row += 1;
        }
    }
    Ok(out)
}

/// Features of `n` generated samples: captions drawn from `scenes` with
/// fresh noise per sample, generated and embedded in chunks.
pub fn generated_features(
    generator: &Generator<f32>,
    encoder: &SentenceEncoder<f32>,
    extractor: &AttrClassifier<f32>,
    scenes: &[SceneSpec],
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f64>, Vec<Caption>), MetricsError> {
    let d = extractor.feat_dim();
    let d_z = generator.dims().d_z;
    let mut out = Tensor::zeros(&[n, d]);
    let mut all_captions = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let stop = (start + CHUNK).min(n);
        let captions: Vec<Caption> = (0..stop - start)
            .map(|_| caption(scenes.choose(rng).unwrap(), rng))
            .collect();
        let noise = Tensor::from_fn(&[stop - start, d_z], |_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        });
        let s = encoder.encode_values(&captions)?;
        let images = generator.generate_values(&noise, &s)?;
        let feats = extract_features(&images, extractor)?;
        out.data_mut()[start * d..stop * d].copy_from_slice(feats.data());
        all_captions.extend(captions);
        start = stop;
    }
    Ok((out, all_captions))
}

/// Full evaluation protocol: sample held-out captions, generate one image
/// per caption with fresh noise, compare feature Gaussians against an
/// equal-size real draw from the same split.
pub fn evaluate_fid(
    generator: &Generator<f32>,
    encoder: &SentenceEncoder<f32>,
    extractor: &AttrClassifier<f32>,
    extractor_id: &str,
    split: &SceneSplit,
    n_samples: usize,
    seed: u64,
    cache: Option<&mut StatsCache>,
) -> Result<FidReport, MetricsError> {
    if n_samples < 2 {
        return Err(MetricsError::InvalidArgument(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let mut gen_rng = eval_rng(seed, 1);
    let (gen_feats, _) = generated_features(
        generator,
        encoder,
        extractor,
        &split.eval,
        n_samples,
        &mut gen_rng,
    )?;
    let gen_stats = fit_gaussian(&gen_feats)?;

    let mut real_rng = eval_rng(seed, 2);
    let key = format!(
        "{}-split{}-seed{}-n{}",
        &extractor_id[..16.min(extractor_id.len())],
        split.seed,
        seed,
        n_samples
    );
    let mut compute = || -> Result<GaussianStats, MetricsError> {
        let feats = real_features(&split.eval, n_samples, extractor, &mut real_rng)?;
        Ok(fit_gaussian(&feats)?)
    };
    let real_stats = match cache {
        Some(c) => c.get_or_compute(&key, compute)?,
        None => compute()?,
    };

    let fid = frechet_distance(&gen_stats, &real_stats)?;
    Ok(FidReport {
        fid,
        n_generated: n_samples,
        n_real: n_samples,
        extractor_id: extractor_id.to_string(),
        seed,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        real_split: "eval".to_string(),
    })
}

/// Frechet distance between two independent real draws from the same split;
/// the sampling noise floor of the metric.
pub fn real_vs_real_fid(
    extractor: &AttrClassifier<f32>,
    split: &SceneSplit,
    n_samples: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    let mut rng_a = eval_rng(seed, 3);
    let mut rng_b = eval_rng(seed, 4);
    let a = real_features(&split.eval, n_samples, extractor, &mut rng_a)?;
    let b = real_features(&split.eval, n_samples, extractor, &mut rng_b)?;
    Ok(frechet_distance(&fit_gaussian(&a)?, &fit_gaussian(&b)?)?)
}
