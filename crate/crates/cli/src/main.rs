//! `sicrn`: train, run and inspect the speech-enhancement model.
//!
//! Exit codes: 0 success, 2 usage or format error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sicrn::autodiff::OP_FD_TOL;
use sicrn::model::SicrnModel;
use sicrn::Error;

use commands::{EvalSource, GradcheckArgs, KernelArgs, KernelAxis, TrainArgs};
use config::{parse_overrides, RunConfig};

#[derive(Parser)]
#[command(name = "sicrn", version, about = "Causal speech enhancement with state-space and inplace-convolution blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on dynamically mixed synthetic or on-disk audio.
    Train {
        /// `key = value` config file; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints, metrics and the resolved config.
        #[arg(long)]
        out: PathBuf,
        /// Overrides both the model and the data seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Folder with `clean/` and `noise/` WAV subfolders.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Continue from `<out>/last.ckpt` when present.
        #[arg(long)]
        resume: bool,
        /// Extra `KEY=VALUE` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Enhance one 16 kHz mono WAV file.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Clean reference; prints SI-SDR of input and output against it.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Score SI-SDR of noisy and enhanced audio.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Folder with `noisy/` and `clean/` WAVs of matching names.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        data_dir: Option<PathBuf>,
        /// Number of synthetic mixtures to score instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Config for the synthetic mixtures (clip length, SNR range, ...).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV report path; printed to stdout otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive and of the full loss.
    Gradcheck {
        /// Model for the end-to-end check; a tiny model when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Relative tolerance of the end-to-end check.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Relative tolerance of the per-primitive checks.
        #[arg(long, default_value_t = OP_FD_TOL)]
        op_tol: f64,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Frames in the end-to-end input.
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write materialized S4ND kernels as CSV.
    Kernel {
        #[arg(long, conflicts_with = "ckpt")]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
        /// Layer name such as `enc_sic1.global.0`; the first layer by default.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Time taps; one second of frames by default.
        #[arg(long)]
        len_t: Option<usize>,
        /// Frequency taps; the number of bins by default.
        #[arg(long)]
        len_f: Option<usize>,
    },
    /// Parameter count and analytic MACs per second.
    Info {
        #[arg(long, conflicts_with = "ckpt")]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Time,
    Freq,
    #[value(name = "2d")]
    Grid,
}

fn model_from(config: Option<PathBuf>, ckpt: Option<PathBuf>) -> Result<SicrnModel, Error> {
    match ckpt {
        Some(p) => SicrnModel::load(&p).map_err(|e| match e {
            Error::Io(io) => Error::Format(format!("{}: {io}", p.display())),
            other => other,
        }),
        None => SicrnModel::new(RunConfig::load(config.as_deref(), &[])?.model),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, out, seed, data_dir, resume, overrides } => {
            let mut overrides = parse_overrides(&overrides)?;
            if let Some(s) = seed {
                overrides.push(("seed".into(), s.to_string()));
                overrides.push(("train_seed".into(), s.to_string()));
            }
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            commands::train(TrainArgs { config: &cfg, out: &out, data_dir: data_dir.as_deref(), resume })
        }
        Command::Enhance { ckpt, input, output, reference } => {
            commands::enhance(&ckpt, &input, &output, reference.as_deref())
        }
        Command::Eval { ckpt, data_dir, synthetic, config, seed, report } => {
            let overrides: Vec<_> = seed.map(|s| ("train_seed".to_string(), s.to_string())).into_iter().collect();
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let source = match (data_dir.as_deref(), synthetic) {
                (Some(d), _) => EvalSource::Dir(d),
                (None, Some(clips)) => EvalSource::Synthetic { clips, config: &cfg },
                (None, None) => return Err(Error::Argument("need --data-dir or --synthetic".into())),
            };
            commands::eval(&ckpt, source, report.as_deref())
        }
        Command::Gradcheck { config, tol, op_tol, instances, frames, seed } => {
            let model = match config {
                Some(p) => RunConfig::load(Some(&p), &[])?.model,
                None => commands::gradcheck_model(),
            };
            let mut stdout = std::io::stdout();
            commands::gradcheck(GradcheckArgs { model, op_tol, tol, instances, frames, seed, out: &mut stdout })
        }
        Command::Kernel { config, ckpt, axis, out, layer, channel, len_t, len_f } => {
            let model = model_from(config, ckpt)?;
            let axis = match axis {
                Axis::Time => KernelAxis::Time,
                Axis::Freq => KernelAxis::Freq,
                Axis::Grid => KernelAxis::Grid,
            };
            commands::kernel(KernelArgs { model: &model, axis, layer: layer.as_deref(), channel, len_t, len_f, out })
        }
        Command::Info { config, ckpt } => {
            let model = model_from(config, ckpt)?;
            commands::info(&model.config, &mut std::io::stdout())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numeric(_) => 3,
                _ => 2,
            })
        }
    }
}
