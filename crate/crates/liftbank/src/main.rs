use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use liftbank::checks::{CheckKind, CheckReport};
use liftbank::commands::{self, CheckOptions, EvalOptions, ModelSource};
use liftbank::CliError;

/// Learned invertible filterbanks for speech enhancement.
#[derive(Parser)]
#[command(name = "liftbank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Model {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run config; with a checkpoint its model settings must match.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use an all-ones mask, which reduces enhancement to a round trip.
    #[arg(long)]
    ones_mask: bool,
}

impl Model {
    fn source(&self) -> ModelSource {
        ModelSource {
            checkpoint: self.checkpoint.clone(),
            config: self.config.clone(),
            ones_mask: self.ones_mask,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Pr,
    StftPr,
    Gradcheck,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train { config: PathBuf },
    /// Enhance one WAV file.
    Enhance {
        #[command(flatten)]
        model: Model,
        input: PathBuf,
        output: PathBuf,
    },
    /// Run a property suite; exit 1 when the tolerance is exceeded.
    Check {
        kind: Kind,
        #[command(flatten)]
        model: Model,
        /// Number of random trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Break the system under test on purpose (negative control).
        #[arg(long)]
        corrupt: bool,
    },
    /// Score a manifest of clean/noisy pairs.
    Eval {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        manifest: PathBuf,
        /// Per-utterance metric CSV.
        #[arg(long)]
        out: PathBuf,
        /// Score the clean reference instead of the enhanced signal.
        #[arg(long)]
        oracle: bool,
        /// Write magnitude and mask CSVs per utterance into this directory.
        #[arg(long)]
        export_spectrogram: Option<PathBuf>,
    },
}

fn print_check(r: &CheckReport) {
    println!("{}", r.summary());
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let s = commands::train(&config)?;
            println!("initial loss {:.6}", s.initial_loss);
            for r in &s.history {
                println!(
                    "epoch {:>3}  steps {:>6}  train {:.6}  val {:.6}  val SI-SDR imp. {:.3} dB",
                    r.epoch, r.steps, r.train_loss, r.val_loss, r.val_si_sdr_imp
                );
            }
            println!("best epoch {} -> {}", s.best_epoch, s.best.display());
            println!("last -> {}", s.last.display());
            println!("log -> {}", s.log.display());
        }
        Command::Enhance {
            model,
            input,
            output,
        } => {
            let n = commands::enhance(&model.source(), &input, &output)?;
            println!("wrote {} samples to {}", n, output.display());
        }
        Command::Check {
            kind,
            model,
            trials,
            corrupt,
        } => {
            let kind = match kind {
                Kind::Pr => CheckKind::Pr,
                Kind::StftPr => CheckKind::StftPr,
                Kind::Gradcheck => CheckKind::Gradcheck,
            };
            let r = commands::check(kind, &model.source(), CheckOptions { trials, corrupt })?;
            print_check(&r);
        }
        Command::Eval {
            model,
            manifest,
            out,
            oracle,
            export_spectrogram,
        } => {
            let opts = EvalOptions {
                oracle,
                export_dir: export_spectrogram,
            };
            let s = commands::eval(&model.source(), &manifest, &out, &opts)?;
            let r = &s.report;
            println!("utterances       {}", r.rows.len());
            println!("mean SI-SDR in   {:.2} dB", r.mean_si_sdr_in());
            println!("mean SI-SDR out  {:.2} dB", r.mean_si_sdr_out());
            println!("mean SI-SDR imp. {:.2} dB", r.mean_improvement());
            if !s.skipped.is_empty() {
                return Err(CliError::Failure(format!(
                    "{} pairs skipped for length mismatch: {}",
                    s.skipped.len(),
                    s.skipped.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
