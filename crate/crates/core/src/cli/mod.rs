//! The `cpiri` command line: experiment configs in, checkpoints, CSV, markdown and SVG out.

mod commands;
pub mod config;
mod report;
mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, ModelKind};
pub use report::{read_digest, REQUIRED_ARTIFACTS};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "cpiri",
    version,
    about = "Channel-permutation-invariant forecasting experiments"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset as CSV and print its coupling statistic.
    GenData,
    /// Pretrain the per-channel codec on its synthetic corpus.
    PretrainCodec,
    /// Train the configured model; writes model.ckpt, loss.csv and manifest.json.
    Train,
    /// Test-split metrics for a checkpoint, unshuffled and fully shuffled.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Partial channel-shuffle audit across the configured fractions.
    Audit {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train on channel subsets and evaluate on every channel.
    SubsetProtocol,
    /// Channel features before and after the spatial stage, plus attention maps.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the test windows.
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Merge a run directory's artifacts into report.md with SVG plots.
    Report {
        /// Run directory; defaults to --out or the config's output.
        dir: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Command::Report { dir } = &cli.command {
        let dir = match (dir, &cli.out, &cli.config) {
            (Some(d), _, _) => d.clone(),
            (None, Some(o), _) => o.clone(),
            (None, None, Some(_)) => load_config(cli)?.output,
            (None, None, None) => {
                return Err(Error::arg(
                    "report needs a run directory, --out or --config",
                ))
            }
        };
        return report::cmd_report(&dir, out);
    }
    let cfg = load_config(cli)?;
    let ctx = commands::Context::new(cfg)?;
    match &cli.command {
        Command::GenData => ctx.gen_data(out),
        Command::PretrainCodec => ctx.pretrain_codec(out),
        Command::Train => ctx.train(out),
        Command::Eval { checkpoint } => ctx.eval(checkpoint.as_deref(), out),
        Command::Audit { checkpoint } => ctx.audit(checkpoint.as_deref(), out),
        Command::SubsetProtocol => ctx.subset_protocol(out),
        Command::ExportEmbeddings { checkpoint, window } => {
            ctx.export_embeddings(checkpoint.as_deref(), *window, out)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}
