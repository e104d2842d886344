//! `scenefuse`: extract, train, predict, fuse, eval, early, synth.

mod commands;
mod manifest;
mod snapshot;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use scenefuse_core::audio::FilterKind;
use scenefuse_core::fusion::Strategy;
use scenefuse_core::nn::TrainingConfig;
use scenefuse_core::zoo::Family;

use commands::Outcome;
use manifest::Split;
use snapshot::Snapshot;

#[derive(Parser)]
#[command(name = "scenefuse", version, about = "Desk-scale audio-visual scene classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute 128x704x6 spectrogram tensors for every manifest clip.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "mel")]
        kind: FilterKind,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to the available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train a VGG14 on spectrogram patches or an MLP on embeddings.
    Train(TrainFlags),
    /// Write per-clip (and optionally per-patch) class probabilities.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value = "mel")]
        kind: FilterKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_patch: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Late fusion of probability files.
    Fuse {
        #[arg(long = "inputs", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "prod")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
        /// Also report indoor/outdoor/transportation accuracy.
        #[arg(long)]
        meta: bool,
    },
    /// Accuracy and confusion matrix of one probability file.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long)]
        meta: bool,
    },
    /// Accuracy using only the first k patches, k = 1..10.
    Early {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset (WAVs, embeddings, manifest).
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        train_per_class: usize,
        #[arg(long, default_value_t = 25)]
        eval_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value = "cnn14")]
        emb_source: String,
        #[arg(long, default_value_t = 2048)]
        emb_dim: usize,
        #[arg(long, default_value_t = 2.0)]
        emb_spread: f64,
        /// Only write the manifest and embeddings.
        #[arg(long)]
        no_audio: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "mel")]
    kind: FilterKind,
    #[arg(long, default_value = "vgg14")]
    arch: Family,
    /// Width scale: 1, 1/2, 1/4, 1/8 for vgg14; any (0, 1] for mlp.
    #[arg(long, default_value = "1")]
    scale: String,
    /// Side of the pooled square input (vgg14 only).
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0.4)]
    mixup_alpha: f64,
    #[arg(long)]
    no_mixup: bool,
    #[arg(long)]
    no_dropout: bool,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Extract { manifest, kind, out, jobs } => commands::cmd_extract(&commands::ExtractArgs {
            manifest,
            kind,
            out,
            jobs: jobs.unwrap_or_else(default_jobs),
        }),
        Command::Train(f) => commands::cmd_train(&commands::TrainArgs {
            manifest: f.manifest,
            features: f.features,
            embeddings: f.embeddings,
            kind: f.kind,
            arch: f.arch,
            scale: f.scale,
            input_size: f.input_size,
            config: TrainingConfig {
                l2: f.l2,
                lr: f.lr,
                epochs: f.epochs,
                batch_size: f.batch,
                mixup_alpha: (!f.no_mixup).then_some(f.mixup_alpha),
                seed: f.seed,
                dropout: !f.no_dropout,
            },
            out: f.out,
        }),
        Command::Predict {
            checkpoint,
            manifest,
            split,
            features,
            embeddings,
            kind,
            out,
            per_patch,
            batch,
        } => commands::cmd_predict(&commands::PredictArgs {
            checkpoint,
            manifest,
            split,
            features,
            embeddings,
            kind,
            out,
            per_patch,
            batch,
        }),
        Command::Fuse {
            inputs,
            strategy,
            out,
            confusion,
            meta,
        } => commands::cmd_fuse(&commands::FuseArgs {
            inputs,
            strategy,
            out,
            confusion,
            meta,
        }),
        Command::Eval { input, confusion, meta } => commands::cmd_eval(&commands::EvalArgs { input, confusion, meta }),
        Command::Early { input, out } => commands::cmd_early(&commands::EarlyArgs { input, out }),
        Command::Synth {
            classes,
            train_per_class,
            eval_per_class,
            seed,
            sample_rate,
            duration,
            emb_source,
            emb_dim,
            emb_spread,
            no_audio,
            out,
        } => {
            let opts = synth::SynthOptions {
                classes,
                train_per_class,
                eval_per_class,
                seed,
                sample_rate,
                duration,
                emb_source,
                emb_dim,
                emb_spread,
                audio: !no_audio,
            };
            let done = synth::synthesize(&out, &opts)?;
            let mut snap = Snapshot::new("synth");
            snap.set("classes", classes)
                .set("train_per_class", train_per_class)
                .set("eval_per_class", eval_per_class)
                .set("seed", seed)
                .set("sample_rate", sample_rate)
                .set("duration", duration)
                .set("emb_source", &opts.emb_source)
                .set("emb_dim", emb_dim)
                .set("emb_spread", emb_spread)
                .set("audio", opts.audio)
                .set("out", out.display());
            snap.write(&out.join("synth_config.txt"))?;
            println!(
                "clips={} manifest={} embeddings={}",
                done.clips,
                done.manifest.display(),
                done.embeddings.display()
            );
            Ok(Outcome::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
