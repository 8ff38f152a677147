//! The alternating optimization steps. Each step builds a fresh graph,
//! binds only its own side's parameters as trainable, and applies one
//! optimizer update — the other side's parameters cannot move by
//! construction, which the parameter-hash tests pin down.

use super::config::TrainConfig;
use super::TrainError;
use crate::losses::{
    adv_loss_d_node, adv_loss_g_node, feature_aware_loss_node, ma_gp_node,
    perceptual_distance_node, reconstruction_loss_node, LossReport,
};
use crate::models::{
    AttrClassifier, Decoder, Discriminator, Generator, PerceptualExtractor, SentenceEncoder,
};
use crate::scenes::TrainBatch;
use fagan_tensor::{Adam, Graph, NodeId, Tensor};
use std::time::Instant;

/// All networks of one run. The encoder (and its pretraining image tower)
/// stay frozen during GAN training.
pub struct GanModels {
    pub encoder: SentenceEncoder<f32>,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub decoder: Decoder<f32>,
    pub perceptual: PerceptualExtractor<f32>,
}

pub struct Optimizers {
    pub gen: Adam<f32>,
    pub disc: Adam<f32>,
    pub dec: Adam<f32>,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig, models: &GanModels) -> Self {
        let adam = |lr: f64, params: &[Tensor<f32>]| {
            Adam::new(
                lr as f32,
                cfg.beta1 as f32,
                cfg.beta2 as f32,
                1e-8,
                params,
            )
        };
        Self {
            gen: adam(cfg.lr_g, models.generator.params.tensors()),
            disc: adam(cfg.lr_d, models.discriminator.params.tensors()),
            dec: adam(cfg.lr_d, models.decoder.params.tensors()),
        }
    }
}

/// Per-step diagnostics: loss report plus wall time and gradient norm.
#[derive(Clone, Debug)]
pub struct StepStats {
    pub report: LossReport,
    pub wall_ms: f64,
    pub grad_norm: f64,
    /// Perceptual regularizer value when `use_perceptual` is active.
    pub perc_reg: Option<f64>,
}

pub struct DStepGrads {
    pub disc: Vec<Option<Tensor<f32>>>,
    pub dec: Vec<Option<Tensor<f32>>>,
    pub report: LossReport,
    pub match_scores: Vec<f32>,
    pub mismatch_scores: Vec<f32>,
    pub fake_scores: Vec<f32>,
}

fn grad_tensors(g: &Graph<f32>, ids: &[Option<NodeId>]) -> Vec<Option<Tensor<f32>>> {
    ids.iter().map(|o| o.map(|id| g.value(id).clone())).collect()
}

fn grads_norm(groups: &[&[Option<Tensor<f32>>]]) -> f64 {
    let mut acc = 0.0f64;
    for group in groups {
        for g in group.iter().flatten() {
            for &v in g.data() {
                acc += (v as f64) * (v as f64);
            }
        }
    }
    acc.sqrt()
}

fn grads_finite(groups: &[&[Option<Tensor<f32>>]]) -> bool {
    groups
        .iter()
        .all(|group| group.iter().flatten().all(|t| t.all_finite()))
}

/// Discriminator-side gradients for one batch. `fake_override` substitutes
/// the generated images (diagnostics and tests); by default fakes come from
/// the generator without gradient tracking.
pub fn d_grads_with_fakes(
    models: &GanModels,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    fake_override: Option<&Tensor<f32>>,
) -> Result<DStepGrads, TrainError> {
    let mut g: Graph<f32> = Graph::new();
    let enc_b = models.encoder.params.bind(&mut g, false);
    let gen_b = models.generator.params.bind(&mut g, false);
    let disc_b = models.discriminator.params.bind(&mut g, true);
    let dec_b = models.decoder.params.bind(&mut g, true);
    let perc_b = models.perceptual.params.bind(&mut g, false);

    let s_match = models.encoder.encode_batch(&mut g, &enc_b, &batch.matched)?;
    let s_mismatch = models
        .encoder
        .encode_batch(&mut g, &enc_b, &batch.mismatched)?;

    let fakes = match fake_override {
        Some(t) => g.constant(t.clone()),
        None => {
            let z = g.constant(batch.noise.clone());
            models.generator.generate(&mut g, &gen_b, z, s_match)?
        }
    };
    debug_assert!(!g.requires_grad(fakes), "fakes must carry no generator gradient");

    // gradient-tracked copies of the real matched pair for the penalty
    let x_real = g.variable(batch.images.clone());
    let s_real = {
        let v = g.value(s_match).clone();
        g.variable(v)
    };
    let enc_real = models
        .discriminator
        .encode_joint(&mut g, &disc_b, x_real, s_real)?;
    let match_scores = models.discriminator.score(&mut g, &disc_b, enc_real)?;

    let x_const = g.constant(batch.images.clone());
    let mismatch_scores = models
        .discriminator
        .score_pair(&mut g, &disc_b, x_const, s_mismatch)?;
    let fake_scores = models
        .discriminator
        .score_pair(&mut g, &disc_b, fakes, s_match)?;

    let adv = adv_loss_d_node(&mut g, match_scores, mismatch_scores, fake_scores);
    let magp = ma_gp_node(
        &mut g,
        x_real,
        s_real,
        match_scores,
        cfg.magp_k as f32,
        cfg.magp_p as f32,
    )?;
    let mut total = g.add(adv, magp);

    let mut rec_value = None;
    if cfg.use_ssd {
        // reconstruction on the real samples only; fakes never reach the
        // decoder
        let recon = models.decoder.decode(&mut g, &dec_b, enc_real)?;
        let rec = reconstruction_loss_node(&mut g, &models.perceptual, &perc_b, recon, x_const)?;
        rec_value = Some(g.value(rec).item() as f64);
        let scaled = g.scale(rec, cfg.coef_rec as f32);
        total = g.add(total, scaled);
    }

    let wrt: Vec<NodeId> = disc_b
        .node_ids()
        .iter()
        .chain(dec_b.node_ids())
        .copied()
        .collect();
    let grads = g.backward(total, &wrt);
    let (disc_grads, dec_grads) = grads.split_at(disc_b.node_ids().len());

    let report = LossReport {
        adv_d: Some(g.value(adv).item() as f64),
        magp: Some(g.value(magp).item() as f64),
        rec: rec_value,
        total_d: Some(g.value(total).item() as f64),
        ..LossReport::default()
    };
    Ok(DStepGrads {
        disc: grad_tensors(&g, disc_grads),
        dec: grad_tensors(&g, dec_grads),
        report,
        match_scores: g.value(match_scores).data().to_vec(),
        mismatch_scores: g.value(mismatch_scores).data().to_vec(),
        fake_scores: g.value(fake_scores).data().to_vec(),
    })
}

/// One discriminator update over the three cases plus the penalty, and —
/// with the self-supervised decoder enabled — reconstruction on real
/// samples. Generator and encoder parameters are untouched.
pub fn d_step(
    models: &mut GanModels,
    opts: &mut Optimizers,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<StepStats, TrainError> {
    let start = Instant::now();
    let out = d_grads_with_fakes(models, batch, cfg, None)?;
    let norm = grads_norm(&[&out.disc, &out.dec]);
    if !out.report.all_finite() || !grads_finite(&[&out.disc, &out.dec]) {
        return Err(TrainError::NonFinite {
            phase: "d_step",
            report: Box::new(out.report),
        });
    }
    opts.disc
        .apply(models.discriminator.params.tensors_mut(), &out.disc);
    if cfg.use_ssd {
        opts.dec.apply(models.decoder.params.tensors_mut(), &out.dec);
    }
    Ok(StepStats {
        report: out.report,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        grad_norm: norm,
        perc_reg: None,
    })
}

pub struct GStepGrads {
    pub gen: Vec<Option<Tensor<f32>>>,
    pub report: LossReport,
    pub perc_reg: Option<f64>,
}

/// Generator-side gradients: adversarial score on tracked fakes, plus the
/// feature-aware term against the constant real feature when enabled.
pub fn g_grads(
    models: &GanModels,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<GStepGrads, TrainError> {
    let mut g: Graph<f32> = Graph::new();
    let enc_b = models.encoder.params.bind(&mut g, false);
    let gen_b = models.generator.params.bind(&mut g, true);
    let disc_b = models.discriminator.params.bind(&mut g, false);
    let perc_b = models.perceptual.params.bind(&mut g, false);

    let s = models.encoder.encode_batch(&mut g, &enc_b, &batch.matched)?;
    let z = g.constant(batch.noise.clone());
    let fakes = models.generator.generate(&mut g, &gen_b, z, s)?;
    let enc_fake = models
        .discriminator
        .encode_joint(&mut g, &disc_b, fakes, s)?;
    let fake_scores = models.discriminator.score(&mut g, &disc_b, enc_fake)?;
    let adv = adv_loss_g_node(&mut g, fake_scores);
    let mut total = adv;

    let mut fa_value = None;
    if cfg.use_fa {
        let x_const = g.constant(batch.images.clone());
        let enc_real = models
            .discriminator
            .encode_joint(&mut g, &disc_b, x_const, s)?;
        debug_assert!(!g.requires_grad(enc_real), "real feature must be constant");
        let fa = feature_aware_loss_node(&mut g, enc_real, enc_fake)?;
        fa_value = Some(g.value(fa).item() as f64);
        let scaled = g.scale(fa, cfg.coef_fa as f32);
        total = g.add(total, scaled);
    }

    let mut perc_value = None;
    if cfg.use_perceptual {
        let x_const = g.constant(batch.images.clone());
        let pl = perceptual_distance_node(&mut g, &models.perceptual, &perc_b, fakes, x_const)?;
        perc_value = Some(g.value(pl).item() as f64);
        let scaled = g.scale(pl, cfg.coef_perceptual as f32);
        total = g.add(total, scaled);
    }

    let grads = g.backward(total, gen_b.node_ids());
    let report = LossReport {
        adv_g: Some(g.value(adv).item() as f64),
        fa: fa_value,
        total_g: Some(g.value(total).item() as f64),
        ..LossReport::default()
    };
    Ok(GStepGrads {
        gen: grad_tensors(&g, &grads),
        report,
        perc_reg: perc_value,
    })
}

/// One generator update; discriminator-side parameters are untouched.
pub fn g_step(
    models: &mut GanModels,
    opts: &mut Optimizers,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<StepStats, TrainError> {
    let start = Instant::now();
    let out = g_grads(models, batch, cfg)?;
    let norm = grads_norm(&[&out.gen]);
    if !out.report.all_finite() || !grads_finite(&[&out.gen]) {
        return Err(TrainError::NonFinite {
            phase: "g_step",
            report: Box::new(out.report),
        });
    }
    opts.gen.apply(models.generator.params.tensors_mut(), &out.gen);
    Ok(StepStats {
        report: out.report,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        grad_norm: norm,
        perc_reg: out.perc_reg,
    })
}

/// Attribute-consistency of generated samples: the fraction whose predicted
/// scene matches the conditioning caption on all four attributes.
pub fn attribute_consistency(
    generator: &Generator<f32>,
    encoder: &SentenceEncoder<f32>,
    classifier: &AttrClassifier<f32>,
    scenes: &[crate::scenes::SceneSpec],
    samples: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    use crate::scenes::caption;
    use rand::seq::IndexedRandom;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = super::rngs::lane_rng(seed, 40, 0);
    let chunk = 64usize;
    let mut matched = 0usize;
    let mut done = 0usize;
    while done < samples {
        let n = chunk.min(samples - done);
        let picks: Vec<_> = (0..n).map(|_| *scenes.choose(&mut rng).unwrap()).collect();
        let caps: Vec<_> = picks.iter().map(|s| caption(s, &mut rng)).collect();
        let s = encoder.encode_values(&caps)?;
        let z = Tensor::from_fn(&[n, generator.dims().d_z], |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        });
        let images = generator.generate_values(&z, &s)?;
        let preds = classifier.predict(&images)?;
        matched += preds.iter().zip(&picks).filter(|(p, t)| p == t).count();
        done += n;
    }
    Ok(matched as f64 / samples as f64)
}

