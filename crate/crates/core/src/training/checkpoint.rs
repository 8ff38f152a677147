//! Checkpoints: every parameter set (sentence encoder, generator, trunk +
//! scoring head, decoder) plus optimizer moments, step counter, rng
//! descriptor and the config snapshot, in the archive container.

use super::config::TrainConfig;
use super::rngs;
use super::steps::{GanModels, Optimizers};
use super::TrainError;
use crate::archive::{self, ArchiveError};
use crate::models::{Decoder, Discriminator, Generator, PerceptualExtractor, SentenceEncoder};
use fagan_tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RngState {
    pub scheme: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    step: u64,
    config: TrainConfig,
    rng: RngState,
    optimizer_steps: [u64; 3],
}

pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub models: GanModels,
    pub optimizers: Optimizers,
}

/// Fresh networks for a config; parameters come from the seed's init lanes,
/// the frozen encoder parameters are copied from `encoder_src`.
pub fn build_models(cfg: &TrainConfig, encoder_src: &SentenceEncoder<f32>) -> GanModels {
    let dims = cfg.net_dims();
    let mut encoder = SentenceEncoder::init(
        cfg.emb_dim,
        cfg.rnn_hidden,
        cfg.d_s,
        cfg.max_tokens,
        &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_ENCODER, 0),
    );
    encoder
        .params
        .set_all(encoder_src.params.tensors().to_vec());
    GanModels {
        encoder,
        generator: Generator::init(dims, &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_GEN, 0)),
        discriminator: Discriminator::init(
            dims,
            &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_DISC, 0),
        ),
        decoder: Decoder::init(dims, &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_DEC, 0)),
        perceptual: PerceptualExtractor::seeded(cfg.perceptual_seed),
    }
}

fn push_set<'a>(
    out: &mut Vec<(String, &'a Tensor<f32>)>,
    prefix: &str,
    names: &[String],
    tensors: &'a [Tensor<f32>],
) {
    for (name, tensor) in names.iter().zip(tensors) {
        out.push((format!("{prefix}.{name}"), tensor));
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    let m = &ckpt.models;
    push_set(&mut tensors, "encoder", m.encoder.params.names(), m.encoder.params.tensors());
    push_set(&mut tensors, "gen", m.generator.params.names(), m.generator.params.tensors());
    push_set(&mut tensors, "disc", m.discriminator.params.names(), m.discriminator.params.tensors());
    push_set(&mut tensors, "dec", m.decoder.params.names(), m.decoder.params.tensors());
    let opt_sets = [
        ("opt_gen", m.generator.params.names(), ckpt.optimizers.gen.state()),
        ("opt_disc", m.discriminator.params.names(), ckpt.optimizers.disc.state()),
        ("opt_dec", m.decoder.params.names(), ckpt.optimizers.dec.state()),
    ];
    for (prefix, names, (_, moments_m, moments_v)) in &opt_sets {
        push_set(&mut tensors, &format!("{prefix}.m"), names, moments_m);
        push_set(&mut tensors, &format!("{prefix}.v"), names, moments_v);
    }
    let meta = CheckpointMeta {
        step: ckpt.step,
        config: ckpt.config.clone(),
        rng: RngState {
            scheme: "per-step-derived".into(),
            seed: ckpt.config.seed,
        },
        optimizer_steps: [
            ckpt.optimizers.gen.step_count(),
            ckpt.optimizers.disc.step_count(),
            ckpt.optimizers.dec.step_count(),
        ],
    };
    archive::write_archive(path, "checkpoint", &meta, &tensors).map_err(TrainError::from)
}

fn take_prefixed(
    entries: &mut Vec<(String, Tensor<f32>)>,
    prefix: &str,
    expected_names: &[String],
) -> Result<Vec<Tensor<f32>>, ArchiveError> {
    let mut out = Vec::with_capacity(expected_names.len());
    for name in expected_names {
        let full = format!("{prefix}.{name}");
        let idx = entries
            .iter()
            .position(|(n, _)| n == &full)
            .ok_or_else(|| ArchiveError::Manifest(format!("missing tensor {full}")))?;
        out.push(entries.remove(idx).1);
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let arch = archive::read_archive(path)?;
    arch.expect_kind("checkpoint")?;
    let meta: CheckpointMeta = arch.meta_as()?;
    meta.config
        .validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;

    // rebuild the nets at the right shapes, then overwrite every parameter
    let seed_encoder = SentenceEncoder::init(
        meta.config.emb_dim,
        meta.config.rnn_hidden,
        meta.config.d_s,
        meta.config.max_tokens,
        &mut rngs::lane_rng(meta.config.seed, rngs::LANE_INIT_ENCODER, 0),
    );
    let mut models = build_models(&meta.config, &seed_encoder);
    let mut entries = arch.tensors;

    let enc = take_prefixed(&mut entries, "encoder", &models.encoder.params.names().to_vec())?;
    models.encoder.params.set_all(enc);
    let gen = take_prefixed(&mut entries, "gen", &models.generator.params.names().to_vec())?;
    models.generator.params.set_all(gen);
    let disc = take_prefixed(&mut entries, "disc", &models.discriminator.params.names().to_vec())?;
    models.discriminator.params.set_all(disc);
    let dec = take_prefixed(&mut entries, "dec", &models.decoder.params.names().to_vec())?;
    models.decoder.params.set_all(dec);

    let mut optimizers = Optimizers::new(&meta.config, &models);
    let restore = |opt: &mut fagan_tensor::Adam<f32>,
                   entries: &mut Vec<(String, Tensor<f32>)>,
                   prefix: &str,
                   names: &[String],
                   step: u64|
     -> Result<(), ArchiveError> {
        let m = take_prefixed(entries, &format!("{prefix}.m"), names)?;
        let v = take_prefixed(entries, &format!("{prefix}.v"), names)?;
        opt.restore(step, m, v);
        Ok(())
    };
    restore(
        &mut optimizers.gen,
        &mut entries,
        "opt_gen",
        &models.generator.params.names().to_vec(),
        meta.optimizer_steps[0],
    )?;
    restore(
        &mut optimizers.disc,
        &mut entries,
        "opt_disc",
        &models.discriminator.params.names().to_vec(),
        meta.optimizer_steps[1],
    )?;
    restore(
        &mut optimizers.dec,
        &mut entries,
        "opt_dec",
        &models.decoder.params.names().to_vec(),
        meta.optimizer_steps[2],
    )?;
    if !entries.is_empty() {
        return Err(TrainError::from(ArchiveError::Manifest(format!(
            "{} unexpected tensors, first: {}",
            entries.len(),
            entries[0].0
        ))));
    }
    Ok(Checkpoint {
        config: meta.config,
        step: meta.step,
        models,
        optimizers,
    })
}
