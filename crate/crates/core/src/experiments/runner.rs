//! Run execution: directory layout, the variant matrices, sampling and
//! dataset dumps.
//!
//! Layout under an output root:
//!   artifacts/            shared frozen nets + cached eval statistics
//!   <run-id>/config.json  exact config of the run
//!   <run-id>/log.jsonl    one record per step
//!   <run-id>/checkpoints/step_*.fgn
//!   <run-id>/fid.json     final evaluation report
//!   <run-id>/grid.png     demo captions x noise seeds

use super::report::{AblationReport, LossCurveSummary, VariantOutcome};
use super::{ExperimentSpec, RunError};
use crate::metrics::{emit_grid, FidReport, StatsCache};
use crate::models::hex_string;
use crate::scenes::{caption, parse_caption, render, sample_scene, Caption, SceneSpec};
use crate::training::{
    self, load_checkpoint, train, Checkpoint, RunArtifacts, TrainConfig, TrainContext, TrainError,
};
use sha2::Digest;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serialization");
    hex_string(&sha2::Sha256::digest(json.as_bytes()))[..8].to_string()
}

/// Days-since-epoch to (year, month, day), Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

fn timestamp_utc() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (y, m, d) = civil_from_days((secs / 86_400) as i64);
    let rem = secs % 86_400;
    format!(
        "{y:04}{m:02}{d:02}-{:02}{:02}{:02}",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

fn run_id(cfg: &TrainConfig) -> String {
    format!("{}-{}", timestamp_utc(), config_hash(cfg))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub dir: PathBuf,
    pub seed: u64,
    pub extractor_id: String,
    pub initial_fid: f64,
    pub final_fid: Option<f64>,
    pub diverged_at_step: Option<u64>,
    pub losses: LossCurveSummary,
    #[serde(skip)]
    pub final_report: Option<FidReport>,
}

/// Demo captions for the qualitative grid: first eval-split scenes,
/// deterministic wording.
fn demo_captions(artifacts: &RunArtifacts, count: usize) -> Vec<Caption> {
    let mut rng = training::lane_rng(artifacts.split.seed, 41, 0);
    artifacts
        .split
        .eval
        .iter()
        .take(count)
        .map(|s| caption(s, &mut rng))
        .collect()
}

fn execute(
    name: Option<&str>,
    cfg: &TrainConfig,
    artifacts: &RunArtifacts,
    out_root: &Path,
    verbose: bool,
) -> Result<RunSummary, RunError> {
    let id = match name {
        Some(n) => format!("{}-{}", sanitize(n), run_id(cfg)),
        None => run_id(cfg),
    };
    let dir = out_root.join(&id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(cfg).expect("config serialization"),
    )?;

    let mut ctx = TrainContext {
        artifacts,
        run_dir: Some(dir.clone()),
        stats_cache: StatsCache::on_disk(out_root.join("artifacts")),
        verbose,
    };
    match train(cfg, &mut ctx) {
        Ok(outcome) => {
            std::fs::write(
                dir.join("fid.json"),
                serde_json::to_string_pretty(&outcome.final_fid_report)
                    .expect("report serialization"),
            )?;
            let captions = demo_captions(artifacts, 4);
            emit_grid(
                &outcome.checkpoint.models.generator,
                &outcome.checkpoint.models.encoder,
                &captions,
                &[cfg.seed, cfg.seed + 1],
                &dir.join("grid.png"),
            )?;
            let summary = RunSummary {
                run_id: id,
                dir: dir.clone(),
                seed: cfg.seed,
                extractor_id: artifacts.extractor_id.clone(),
                initial_fid: outcome.initial_fid,
                final_fid: Some(outcome.final_fid_report.fid),
                diverged_at_step: None,
                losses: LossCurveSummary::from_history(&outcome.history),
                final_report: Some(outcome.final_fid_report.clone()),
            };
            std::fs::write(
                dir.join("summary.json"),
                serde_json::to_string_pretty(&summary).expect("summary serialization"),
            )?;
            Ok(summary)
        }
        Err(TrainError::Diverged { step, phase, last }) => {
            let summary = RunSummary {
                run_id: id,
                dir: dir.clone(),
                seed: cfg.seed,
                extractor_id: artifacts.extractor_id.clone(),
                initial_fid: f64::NAN,
                final_fid: None,
                diverged_at_step: Some(step),
                losses: LossCurveSummary {
                    steps_completed: step,
                    last_total_d: last.total_d,
                    last_total_g: last.total_g,
                    ..LossCurveSummary::default()
                },
                final_report: None,
            };
            if verbose {
                println!("run {} diverged at step {step} in {phase}", summary.run_id);
            }
            std::fs::write(
                dir.join("summary.json"),
                serde_json::to_string_pretty(&summary).expect("summary serialization"),
            )?;
            Ok(summary)
        }
        Err(other) => Err(other.into()),
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Train one config end to end; training errors other than divergence
/// propagate, divergence is an error for a single run.
pub fn run_single(cfg: &TrainConfig, out_root: &Path, verbose: bool) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let artifacts = training::prepare_artifacts(cfg, Some(&out_root.join("artifacts")), verbose)?;
    let summary = execute(None, cfg, &artifacts, out_root, verbose)?;
    if let Some(step) = summary.diverged_at_step {
        return Err(RunError::Train(TrainError::Diverged {
            step,
            phase: "training",
            last: Box::new(Default::default()),
        }));
    }
    Ok(summary)
}

/// Variants must differ from the base only in ablation flags and seed.
fn assert_flag_only_diff(base: &TrainConfig, variant: &TrainConfig) -> Result<(), RunError> {
    let strip = |cfg: &TrainConfig| {
        let mut v = serde_json::to_value(cfg).expect("config serialization");
        let map = v.as_object_mut().unwrap();
        for key in ["use_ssd", "use_fa", "use_perceptual", "seed"] {
            map.remove(key);
        }
        v
    };
    if strip(base) != strip(variant) {
        return Err(RunError::Other(
            "variant config diverges from the base beyond ablation flags".into(),
        ));
    }
    Ok(())
}

fn run_variants(
    spec: &ExperimentSpec,
    title: &str,
    variants: &[(&str, bool, bool, bool)],
    verbose: bool,
) -> Result<AblationReport, RunError> {
    spec.validate()?;
    let artifacts = training::prepare_artifacts(
        &spec.base,
        Some(&spec.out_dir.join("artifacts")),
        verbose,
    )?;
    let mut rows = Vec::new();
    for (i, (name, use_ssd, use_fa, use_perceptual)) in variants.iter().enumerate() {
        let mut cfg = spec.base.clone();
        cfg.use_ssd = *use_ssd;
        cfg.use_fa = *use_fa;
        cfg.use_perceptual = *use_perceptual;
        cfg.seed = spec.seed_for(i);
        assert_flag_only_diff(&spec.base, &cfg)?;
        if verbose {
            println!("=== variant {name} (ssd={use_ssd}, fa={use_fa}, perceptual={use_perceptual})");
        }
        let summary = execute(Some(name), &cfg, &artifacts, &spec.out_dir, verbose)?;
        rows.push(VariantOutcome {
            name: name.to_string(),
            run_id: summary.run_id,
            seed: cfg.seed,
            extractor_id: summary.extractor_id,
            initial_fid: summary.initial_fid,
            final_fid: summary.final_fid,
            diverged_at_step: summary.diverged_at_step,
            losses: summary.losses,
        });
    }
    let report = AblationReport {
        title: title.to_string(),
        extractor_id: artifacts.extractor_id.clone(),
        rows,
    };
    report.write(&spec.out_dir)?;
    Ok(report)
}

/// The four-way `{use_ssd, use_fa}` matrix.
pub fn run_ablation(spec: &ExperimentSpec, verbose: bool) -> Result<AblationReport, RunError> {
    run_variants(
        spec,
        "ablation",
        &[
            ("baseline", false, false, false),
            ("baseline+SSD", true, false, false),
            ("baseline+FA⁻", false, true, false),
            ("baseline+SSD+FA", true, true, false),
        ],
        verbose,
    )
}

/// Regularizer comparison: none, perceptual on pixels-features, the
/// feature-aware term without reconstruction training, and the full pair.
pub fn run_regularizer_comparison(
    spec: &ExperimentSpec,
    verbose: bool,
) -> Result<AblationReport, RunError> {
    run_variants(
        spec,
        "regularizer-comparison",
        &[
            ("baseline", false, false, false),
            ("baseline+perceptual", false, false, true),
            ("baseline+FA⁻", false, true, false),
            ("baseline+FA", true, true, false),
        ],
        verbose,
    )
}

/// Generate `count` samples for one caption from a checkpoint, plus a
/// combined grid.
pub fn sample_from_checkpoint(
    ckpt_path: &Path,
    caption_text: &str,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    if count == 0 {
        return Err(RunError::Other("count must be at least 1".into()));
    }
    let scene = parse_caption(caption_text)?;
    let ckpt: Checkpoint = load_checkpoint(ckpt_path)?;
    let cap = Caption {
        text: caption_text.to_lowercase(),
        scene,
    };
    std::fs::create_dir_all(out_dir)?;

    let encoder = &ckpt.models.encoder;
    let generator = &ckpt.models.generator;
    let s = encoder.encode_values(std::slice::from_ref(&cap))
        .map_err(TrainError::from)?;
    let mut paths = Vec::new();
    let seeds: Vec<u64> = (0..count).map(|i| seed.wrapping_add(i as u64)).collect();
    for (i, &col_seed) in seeds.iter().enumerate() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(col_seed);
        let z = fagan_tensor::Tensor::from_fn(&[1, generator.dims().d_z], |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        });
        let image = generator.generate_values(&z, &s).map_err(TrainError::from)?;
        let path = out_dir.join(format!("sample_{i:02}.png"));
        crate::imgio::save_image(image.data(), generator.dims().resolution, &path)?;
        paths.push(path);
    }
    let grid_path = out_dir.join("grid.png");
    emit_grid(generator, encoder, std::slice::from_ref(&cap), &seeds, &grid_path)?;
    paths.push(grid_path);
    Ok(paths)
}

#[derive(serde::Serialize)]
struct DumpRecord<'a> {
    image_file: String,
    caption_text: &'a str,
    scene: SceneSpec,
}

/// Write `n` rendered scenes as PNGs plus a JSON-lines index.
pub fn dump_dataset(
    dir: &Path,
    n: usize,
    seed: u64,
    resolution: usize,
) -> Result<PathBuf, RunError> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    let mut rng = training::lane_rng(seed, 42, 0);
    let index_path = dir.join("dataset.jsonl");
    let mut index = std::fs::File::create(&index_path)?;
    for i in 0..n {
        let scene = sample_scene(&mut rng);
        let image = render(&scene, resolution)?;
        let cap = caption(&scene, &mut rng);
        let image_file = format!("img_{i:05}.png");
        crate::imgio::save_image(image.data(), resolution, &dir.join(&image_file))?;
        let record = DumpRecord {
            image_file,
            caption_text: &cap.text,
            scene,
        };
        serde_json::to_writer(&mut index, &record)
            .map_err(|e| RunError::Io(std::io::Error::other(e)))?;
        index.write_all(b"\n")?;
    }
    Ok(index_path)
}
