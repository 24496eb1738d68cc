use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icon::config::{parse_overrides, Settings};
use icon::error::{write, CliError, Result};
use icon::evaluate::{evaluate_dirs, percent, worker_count};
use icon::{infer, synth, train};

#[derive(Parser)]
#[command(name = "icon", version, about = "Salient object detection: synthetic data, training, inference, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key/value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let o = parse_overrides(&self.overrides)?;
        match &self.config {
            Some(p) => Settings::load(p, &o),
            None => Settings::from_key_values(&o),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (`images/` and `masks/`).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes loss.csv, best.ckpt and last.ckpt to train.out_dir.
    Train(ConfigArgs),
    /// Write 8-bit saliency PNGs for every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against masks; writes report.json and per_image.csv.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write curves.csv.
        #[arg(long)]
        curves: bool,
        /// Worker threads (default: ICON_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write the mean precision/recall/F curves of a prediction set as CSV.
    Curves {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, size, seed } => {
            if count == 0 || size == 0 {
                return Err(CliError::Validation("count and size must be positive".into()));
            }
            let index = synth::synth_dataset(count, size, seed, &out)?;
            println!("wrote {} pairs to {}", index.pairs.len(), out.display());
        }
        Command::Train(args) => {
            let settings = args.settings()?;
            let outcome = train::train(&settings, &mut |r| {
                let fnr = r.val_fnr.map_or_else(|| "n/a".into(), percent);
                println!(
                    "epoch {:>3}  lr {:.5}  loss {:.5}  val_mae {:.5}  val_fnr {}",
                    r.epoch, r.lr, r.train_loss, r.val_mae, fnr
                );
            })?;
            println!(
                "best epoch {} (val_mae {:.5}); checkpoints in {}",
                outcome.best_epoch,
                outcome.best_val_mae,
                settings.train.out_dir.display()
            );
        }
        Command::Infer { checkpoint, images, out } => {
            let written = infer::infer_dir(&checkpoint, &images, &out)?;
            println!("wrote {} maps to {}", written.len(), out.display());
        }
        Command::Eval { pred, gt, out, curves, workers, config } => {
            let settings = config.settings()?;
            let workers = worker_count(workers.or(settings.eval.workers))?;
            let outcome = evaluate_dirs(&pred, &gt, &settings.eval.metrics, workers)?;
            outcome.write(&out, curves)?;
            let a = &outcome.report.aggregate;
            println!(
                "{} images  mae {:.4}  wfm {:.4}  sm {:.4}  em {:.4}  fnr {}",
                a.images,
                a.mae,
                a.wfm,
                a.sm,
                a.em,
                a.fnr.map_or_else(|| "n/a".into(), percent)
            );
            if !outcome.unmatched.is_empty() {
                return Err(CliError::Validation(format!("unmatched stems skipped: {}", outcome.unmatched.join(", "))));
            }
        }
        Command::Curves { pred, gt, out, workers, config } => {
            let settings = config.settings()?;
            let workers = worker_count(workers.or(settings.eval.workers))?;
            let outcome = evaluate_dirs(&pred, &gt, &settings.eval.metrics, workers)?;
            write(&out, outcome.curves_csv().as_bytes())?;
            if !outcome.unmatched.is_empty() {
                return Err(CliError::Validation(format!("unmatched stems skipped: {}", outcome.unmatched.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
