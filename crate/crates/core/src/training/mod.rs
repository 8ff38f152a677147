//! Alternating optimization loop with deterministic replay: one
//! discriminator step (three scoring cases, gradient penalty, and — with
//! the self-supervised decoder — reconstruction on real samples only),
//! then one generator step (adversarial plus feature-aware), 1:1.

mod checkpoint;
mod config;
mod rngs;
mod steps;

pub use checkpoint::{build_models, load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use config::{ConfigError, TrainConfig};
pub use rngs::lane_rng;
pub use steps::{
    attribute_consistency, d_grads_with_fakes, d_step, g_grads, g_step, DStepGrads, GStepGrads,
    GanModels, Optimizers, StepStats,
};

use crate::archive::ArchiveError;
use crate::losses::{LossError, LossReport};
use crate::metrics::{self, MetricsError, StatsCache};
use crate::models::{
    pretrain_encoder, train_classifier, AttrClassifier, ImageTower, ModelError, SentenceEncoder,
};
use crate::scenes::{make_batch_from, SceneError, SceneSplit};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase} produced a non-finite loss")]
    NonFinite {
        phase: &'static str,
        report: Box<LossReport>,
    },
    #[error("run diverged at step {step} ({phase})")]
    Diverged {
        step: u64,
        phase: &'static str,
        last: Box<LossReport>,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Frozen per-suite artifacts: pretrained sentence encoder (plus its image
/// tower), the evaluation extractor, and the scene split. Shared across
/// ablation variants so their scores are comparable.
pub struct RunArtifacts {
    pub encoder: SentenceEncoder<f32>,
    pub tower: ImageTower<f32>,
    pub extractor: AttrClassifier<f32>,
    pub extractor_id: String,
    pub split: SceneSplit,
    pub encoder_retrieval: f64,
    pub extractor_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    retrieval_accuracy: f64,
    d_s: usize,
    emb_dim: usize,
    rnn_hidden: usize,
    max_tokens: usize,
    resolution: usize,
}

#[derive(Serialize, Deserialize)]
struct ExtractorMeta {
    accuracy: f64,
    resolution: usize,
}

fn artifact_key(cfg: &TrainConfig) -> String {
    // everything the frozen artifacts depend on
    let fields = serde_json::json!({
        "seed": cfg.seed,
        "resolution": cfg.resolution,
        "d_s": cfg.d_s,
        "emb_dim": cfg.emb_dim,
        "rnn_hidden": cfg.rnn_hidden,
        "max_tokens": cfg.max_tokens,
        "encoder_steps": cfg.encoder_steps,
        "extractor_steps": cfg.extractor_steps,
        "eval_fraction": cfg.eval_fraction,
    });
    use sha2::Digest;
    let digest = sha2::Sha256::digest(serde_json::to_string(&fields).expect("json").as_bytes());
    crate::models::hex_string(&digest)[..16].to_string()
}

/// Load the frozen artifacts from `cache_dir` or pretrain and store them.
pub fn prepare_artifacts(
    cfg: &TrainConfig,
    cache_dir: Option<&Path>,
    verbose: bool,
) -> Result<RunArtifacts, TrainError> {
    cfg.validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let split = SceneSplit::new(cfg.seed, cfg.eval_fraction);
    let key = artifact_key(cfg);
    let enc_path = cache_dir.map(|d| d.join(format!("encoder-{key}.fgn")));
    let ext_path = cache_dir.map(|d| d.join(format!("extractor-{key}.fgn")));

    let mut encoder = SentenceEncoder::init(
        cfg.emb_dim,
        cfg.rnn_hidden,
        cfg.d_s,
        cfg.max_tokens,
        &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_ENCODER, 0),
    );
    let mut tower = ImageTower::init(
        cfg.resolution,
        cfg.d_s,
        &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_TOWER, 0),
    );
    let encoder_retrieval;
    match enc_path.as_ref().filter(|p| p.exists()) {
        Some(path) => {
            let arch = crate::archive::read_archive(path)?;
            arch.expect_kind("encoder")?;
            let meta: EncoderMeta = arch.meta_as()?;
            encoder_retrieval = meta.retrieval_accuracy;
            let mut entries = arch.tensors;
            let split_point = encoder.params.len();
            let enc_tensors = entries.drain(..split_point).map(|(_, t)| t).collect();
            encoder.params.set_all(enc_tensors);
            tower
                .params
                .set_all(entries.into_iter().map(|(_, t)| t).collect());
            if verbose {
                println!(
                    "loaded encoder artifact (retrieval {:.1}%)",
                    encoder_retrieval * 100.0
                );
            }
        }
        None => {
            if verbose {
                println!("pretraining sentence encoder ({} steps)", cfg.encoder_steps);
            }
            let report = pretrain_encoder(
                &mut encoder,
                &mut tower,
                &split,
                cfg.encoder_steps,
                &mut rngs::lane_rng(cfg.seed, rngs::LANE_PRETRAIN_ENCODER, 0),
            )?;
            encoder_retrieval = report.retrieval_accuracy;
            if verbose {
                println!(
                    "encoder pretraining done: loss {:.4}, retrieval {:.1}%",
                    report.final_loss,
                    report.retrieval_accuracy * 100.0
                );
            }
            if let Some(path) = &enc_path {
                std::fs::create_dir_all(path.parent().unwrap())?;
                let mut tensors: Vec<(String, &fagan_tensor::Tensor<f32>)> = Vec::new();
                for (n, t) in encoder.params.names().iter().zip(encoder.params.tensors()) {
                    tensors.push((format!("encoder.{n}"), t));
                }
                for (n, t) in tower.params.names().iter().zip(tower.params.tensors()) {
                    tensors.push((format!("tower.{n}"), t));
                }
                crate::archive::write_archive(
                    path,
                    "encoder",
                    &EncoderMeta {
                        retrieval_accuracy: encoder_retrieval,
                        d_s: cfg.d_s,
                        emb_dim: cfg.emb_dim,
                        rnn_hidden: cfg.rnn_hidden,
                        max_tokens: cfg.max_tokens,
                        resolution: cfg.resolution,
                    },
                    &tensors,
                )?;
            }
        }
    }

    let mut extractor = AttrClassifier::init(
        cfg.resolution,
        &mut rngs::lane_rng(cfg.seed, rngs::LANE_INIT_EXTRACTOR, 0),
    );
    let extractor_accuracy;
    match ext_path.as_ref().filter(|p| p.exists()) {
        Some(path) => {
            let arch = crate::archive::read_archive(path)?;
            arch.expect_kind("extractor")?;
            let meta: ExtractorMeta = arch.meta_as()?;
            extractor_accuracy = meta.accuracy;
            extractor.params.set_all(arch.take_tensors());
            if verbose {
                println!(
                    "loaded extractor artifact (accuracy {:.1}%)",
                    extractor_accuracy * 100.0
                );
            }
        }
        None => {
            if verbose {
                println!("training evaluation extractor ({} steps)", cfg.extractor_steps);
            }
            extractor_accuracy = train_classifier(
                &mut extractor,
                &split,
                cfg.extractor_steps,
                32,
                &mut rngs::lane_rng(cfg.seed, rngs::LANE_PRETRAIN_EXTRACTOR, 0),
            )?;
            if verbose {
                println!("extractor accuracy on held-out scenes: {:.1}%", extractor_accuracy * 100.0);
            }
            if let Some(path) = &ext_path {
                std::fs::create_dir_all(path.parent().unwrap())?;
                let tensors: Vec<(String, &fagan_tensor::Tensor<f32>)> = extractor
                    .params
                    .names()
                    .iter()
                    .zip(extractor.params.tensors())
                    .map(|(n, t)| (n.clone(), t))
                    .collect();
                crate::archive::write_archive(
                    path,
                    "extractor",
                    &ExtractorMeta {
                        accuracy: extractor_accuracy,
                        resolution: cfg.resolution,
                    },
                    &tensors,
                )?;
            }
        }
    }

    let extractor_id = extractor.params.sha256();
    Ok(RunArtifacts {
        encoder,
        tower,
        extractor,
        extractor_id,
        split,
        encoder_retrieval,
        extractor_accuracy,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perc_reg: Option<f64>,
    pub wall_ms: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FidPoint {
    pub step: u64,
    pub fid: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
    pub initial_fid: f64,
    pub fid_trace: Vec<FidPoint>,
    pub final_fid_report: crate::metrics::FidReport,
}

pub struct TrainContext<'a> {
    pub artifacts: &'a RunArtifacts,
    /// Log/checkpoint destination; in-memory only when absent.
    pub run_dir: Option<PathBuf>,
    pub stats_cache: StatsCache,
    pub verbose: bool,
}

impl<'a> TrainContext<'a> {
    pub fn new(artifacts: &'a RunArtifacts) -> Self {
        Self {
            artifacts,
            run_dir: None,
            stats_cache: StatsCache::in_memory(),
            verbose: false,
        }
    }
}

/// Train from scratch.
pub fn train(cfg: &TrainConfig, ctx: &mut TrainContext) -> Result<TrainOutcome, TrainError> {
    cfg.validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let models = build_models(cfg, &ctx.artifacts.encoder);
    let optimizers = Optimizers::new(cfg, &models);
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        step: 0,
        models,
        optimizers,
    };
    run_loop(checkpoint, ctx)
}

/// Continue a loaded checkpoint to its configured step count.
pub fn resume(checkpoint: Checkpoint, ctx: &mut TrainContext) -> Result<TrainOutcome, TrainError> {
    run_loop(checkpoint, ctx)
}

fn run_loop(mut state: Checkpoint, ctx: &mut TrainContext) -> Result<TrainOutcome, TrainError> {
    let cfg = state.config.clone();
    let arts = ctx.artifacts;
    let mut log_file = match &ctx.run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints"))?;
            Some(std::fs::File::options().create(true).append(true).open(dir.join("log.jsonl"))?)
        }
        None => None,
    };

    let eval = |models: &GanModels,
                cache: &mut StatsCache|
     -> Result<crate::metrics::FidReport, TrainError> {
        Ok(metrics::evaluate_fid(
            &models.generator,
            &models.encoder,
            &arts.extractor,
            &arts.extractor_id,
            &arts.split,
            cfg.eval_samples,
            cfg.seed,
            Some(cache),
        )?)
    };

    let mut last_report = eval(&state.models, &mut ctx.stats_cache)?;
    let initial_fid = last_report.fid;
    if ctx.verbose {
        println!("step {}: toy-FID {initial_fid:.3}", state.step);
    }
    let mut fid_trace = vec![FidPoint {
        step: state.step,
        fid: initial_fid,
    }];
    let mut history = Vec::new();

    for k in state.step..cfg.steps {
        let step = k + 1;
        let mut data_rng = rngs::lane_rng(cfg.seed, rngs::LANE_DATA, step);
        let batch = make_batch_from(
            &mut data_rng,
            &arts.split.train,
            cfg.batch_size,
            cfg.d_z,
            cfg.resolution,
        )?;

        let wrap = |e: TrainError, step: u64| match e {
            TrainError::NonFinite { phase, report } => TrainError::Diverged {
                step,
                phase,
                last: report,
            },
            other => other,
        };
        let d_stats = d_step(&mut state.models, &mut state.optimizers, &batch, &cfg)
            .map_err(|e| wrap(e, step))?;
        let g_stats = g_step(&mut state.models, &mut state.optimizers, &batch, &cfg)
            .map_err(|e| wrap(e, step))?;

        let record = StepRecord {
            step,
            losses: d_stats.report.clone().merge(g_stats.report.clone()),
            perc_reg: g_stats.perc_reg,
            wall_ms: d_stats.wall_ms + g_stats.wall_ms,
            grad_norm_d: d_stats.grad_norm,
            grad_norm_g: g_stats.grad_norm,
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &record).map_err(|e| {
                TrainError::Io(std::io::Error::other(e))
            })?;
            f.write_all(b"\n")?;
        }
        history.push(record);
        state.step = step;

        if step % cfg.eval_interval == 0 || step == cfg.steps {
            last_report = eval(&state.models, &mut ctx.stats_cache)?;
            fid_trace.push(FidPoint {
                step,
                fid: last_report.fid,
            });
            if ctx.verbose {
                let last = history.last().unwrap();
                println!(
                    "step {step}: toy-FID {:.3} | total_d {:.3} total_g {:.3}",
                    last_report.fid,
                    last.losses.total_d.unwrap_or(f64::NAN),
                    last.losses.total_g.unwrap_or(f64::NAN)
                );
            }
        } else if ctx.verbose && step % 100 == 0 {
            let last = history.last().unwrap();
            println!(
                "step {step}: total_d {:.3} total_g {:.3} ({:.0} ms/step)",
                last.losses.total_d.unwrap_or(f64::NAN),
                last.losses.total_g.unwrap_or(f64::NAN),
                last.wall_ms
            );
        }

        if step % cfg.checkpoint_interval == 0 || step == cfg.steps {
            if let Some(dir) = &ctx.run_dir {
                let path = dir.join("checkpoints").join(format!("step_{step:06}.fgn"));
                save_checkpoint(&state, &path)?;
            }
        }
    }

    Ok(TrainOutcome {
        checkpoint: state,
        history,
        initial_fid,
        fid_trace,
        final_fid_report: last_report,
    })
}
