//! Command line front end for the wake word toolkit.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use avwws::pipeline::{
    cmd_eval, cmd_fuse_hma, cmd_fuse_scores, cmd_report, cmd_synth, cmd_train, FuseStrategy,
};

#[derive(Parser)]
#[command(name = "avwws", about = "Audio-visual wake word spotting toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Override the config/checkpoint seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Fail instead of falling back on any source of nondeterminism.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic audio-visual wake word dataset.
    Synth {
        /// Flat `key = value` generator config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a wake word model and average the best checkpoints.
    Train {
        /// Flat `key = value` training config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root containing train.jsonl and dev.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a manifest with a trained checkpoint.
    Eval {
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of samples to score (paths resolve relative to it).
        #[arg(long)]
        manifest: PathBuf,
        /// Decision threshold on the wake probability.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Combine audio and video systems (score, cascade or hma).
    Fuse {
        #[arg(long)]
        strategy: String,
        /// Audio score CSV (score/cascade strategies).
        #[arg(long)]
        audio_scores: Option<PathBuf>,
        /// Video score CSV (score/cascade strategies).
        #[arg(long)]
        video_scores: Option<PathBuf>,
        /// Audio checkpoint (hma strategy).
        #[arg(long)]
        audio_ckpt: Option<PathBuf>,
        /// Video checkpoint (hma strategy).
        #[arg(long)]
        video_ckpt: Option<PathBuf>,
        /// Dataset root with train.jsonl and eval.jsonl (hma strategy).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate FRR/FAR/WWS for one or more score CSVs.
    Report {
        /// Score CSVs, one system each.
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> avwws::Result<()> {
    match cli.command {
        Command::Synth { config, common } => {
            cmd_synth(config.as_deref(), common.seed, &common.out, common.deterministic)
        }
        Command::Train { config, data, common } => cmd_train(
            config.as_deref(),
            common.seed,
            &data,
            &common.out,
            common.deterministic,
        ),
        Command::Eval {
            checkpoint,
            manifest,
            threshold,
            common,
        } => cmd_eval(
            &checkpoint,
            &manifest,
            threshold,
            &common.out,
            common.seed,
            common.deterministic,
        ),
        Command::Fuse {
            strategy,
            audio_scores,
            video_scores,
            audio_ckpt,
            video_ckpt,
            data,
            threshold,
            common,
        } => {
            let strategy = FuseStrategy::from_str(&strategy)?;
            match strategy {
                FuseStrategy::Score | FuseStrategy::Cascade => {
                    let (a, v) = match (audio_scores, video_scores) {
                        (Some(a), Some(v)) => (a, v),
                        _ => {
                            return Err(avwws::Error::validation(format!(
                                "--strategy {} needs --audio-scores and --video-scores",
                                strategy.as_str()
                            )))
                        }
                    };
                    cmd_fuse_scores(strategy, &a, &v, threshold, &common.out, common.deterministic)
                }
                FuseStrategy::Hma => {
                    let (a, v, d) = match (audio_ckpt, video_ckpt, data) {
                        (Some(a), Some(v), Some(d)) => (a, v, d),
                        _ => {
                            return Err(avwws::Error::validation(
                                "--strategy hma needs --audio-ckpt, --video-ckpt and --data",
                            ))
                        }
                    };
                    cmd_fuse_hma(
                        &a,
                        &v,
                        &d,
                        threshold,
                        &common.out,
                        common.seed,
                        common.deterministic,
                    )
                }
            }
        }
        Command::Report { scores, out } => cmd_report(&scores, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
