//! Command-line front end: training runs, the ablation matrices,
//! evaluation, sampling, and dataset dumps.
//!
//! Exit codes: 0 success, 2 config error, 3 run divergence, 4 i/o error,
//! 1 anything else.

use clap::{Args, Parser, Subcommand};
use fagan::experiments::{
    dump_dataset, run_ablation, run_regularizer_comparison, run_single, sample_from_checkpoint,
    ExperimentSpec, RunError,
};
use fagan::metrics::{evaluate_fid, StatsCache};
use fagan::training::{self, load_checkpoint, TrainConfig, TrainError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fagan", version, about = "Text-conditioned GAN on captioned shapes")]
struct Cli {
    /// Force sequential execution of all data-parallel loops.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration end to end.
    Train {
        /// JSON config file; defaults apply for absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output root for runs and shared artifacts.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run the four-way {SSD, FA} ablation matrix and emit a report.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output root when no spec file is given.
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Compare generator regularizers (none/perceptual/FA-/FA).
    CompareReg {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "runs/compare-reg")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's toy-FID.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of generated/real samples.
        #[arg(long, short = 'n', default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Generate samples for a caption from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write rendered scenes as PNGs plus a JSON-lines index.
    Dump(DumpArgs),
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, short = 'n')]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
}

fn exit_code_for(err: &RunError) -> u8 {
    match err {
        RunError::Config(_) => 2,
        RunError::Train(TrainError::InvalidConfig(_)) => 2,
        RunError::Train(TrainError::Diverged { .. }) => 3,
        RunError::Io(_) => 4,
        RunError::Train(TrainError::Io(_)) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            let summary = run_single(&cfg, &out, true)?;
            println!(
                "run {} finished: toy-FID {:.4} (step 0: {:.4})",
                summary.run_id,
                summary.final_fid.unwrap_or(f64::NAN),
                summary.initial_fid
            );
            println!("outputs in {}", summary.dir.display());
        }
        Command::Ablate { spec, out } => {
            let spec = load_spec(spec, out)?;
            let report = run_ablation(&spec, true)?;
            print!("{}", report.to_markdown());
            println!("report written to {}", spec.out_dir.display());
        }
        Command::CompareReg { spec, out } => {
            let spec = load_spec(spec, out)?;
            let report = run_regularizer_comparison(&spec, true)?;
            print!("{}", report.to_markdown());
            println!("report written to {}", spec.out_dir.display());
        }
        Command::Eval { ckpt, n, seed } => {
            let checkpoint = load_checkpoint(&ckpt)?;
            let artifacts = training::prepare_artifacts(
                &checkpoint.config,
                ckpt.parent()
                    .and_then(|p| p.parent())
                    .and_then(|p| p.parent())
                    .map(|root| root.join("artifacts"))
                    .as_deref(),
                true,
            )?;
            let mut cache = StatsCache::in_memory();
            let report = evaluate_fid(
                &checkpoint.models.generator,
                &checkpoint.models.encoder,
                &artifacts.extractor,
                &artifacts.extractor_id,
                &artifacts.split,
                n,
                seed,
                Some(&mut cache),
            )
            .map_err(TrainError::from)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report"));
        }
        Command::Sample {
            ckpt,
            caption,
            count,
            seed,
            out,
        } => {
            let paths = sample_from_checkpoint(&ckpt, &caption, count, seed, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Dataset {
            command: DatasetCommand::Dump(args),
        } => {
            let index = dump_dataset(&args.out, args.n, args.seed, args.resolution)?;
            println!("wrote {} records to {}", args.n, index.display());
        }
    }
    Ok(())
}

fn load_spec(path: Option<PathBuf>, out: PathBuf) -> Result<ExperimentSpec, RunError> {
    Ok(match path {
        Some(p) => ExperimentSpec::load(&p)?,
        None => ExperimentSpec {
            out_dir: out,
            ..ExperimentSpec::default()
        },
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.deterministic {
        fagan_tensor::par::set_sequential(true);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
