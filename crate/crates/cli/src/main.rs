//! `wavesel` command-line pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or inconsistent
//! artifact, 4 numeric failure.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "wavesel", version, about = "Wavelet sub-band morph detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// key=value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Allow writing into an existing output location.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr0: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// proximal or subgradient
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    image_size: Option<String>,
    /// haar or db2
    #[arg(long)]
    family: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
        vec![
            ("lambda", self.lambda.as_ref()),
            ("epochs", self.epochs.as_ref()),
            ("lr0", self.lr0.as_ref()),
            ("batch_size", self.batch_size.as_ref()),
            ("seed", self.seed.as_ref()),
            ("mode", self.mode.as_ref()),
            ("threshold", self.threshold.as_ref()),
            ("image_size", self.image_size.as_ref()),
            ("family", self.family.as_ref()),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic bona fide / morph dataset.
    Synth {
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        image_size: Option<String>,
        #[arg(long)]
        blob_count: Option<String>,
        #[arg(long)]
        artifact_amplitude: Option<String>,
        #[arg(long)]
        artifact_period: Option<String>,
        #[arg(long)]
        alpha: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Decompose every manifest image into a 48-channel SBS1 stack.
    Decompose {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        image_size: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Phase-1 group-sparse training at one lambda.
    Train {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Phase-1 training over a lambda grid; keeps the best validation AUC.
    Sweep {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Comma-separated lambdas.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Threshold the phase-1 group norms of a run directory.
    Select {
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        threshold: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Phase-2 retraining on the selected sub-bands.
    Retrain {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        selection: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Score a split with a checkpoint and write metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        split: Option<String>,
        /// Also write penultimate embeddings as embeddings.csv.
        #[arg(long)]
        embeddings: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Grad-CAM overlay for one image.
    Gradcam {
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// morph or bonafide
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the DET curve of a split as CSV.
    ExportDet {
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Builds the run configuration: defaults, then the config file, then
/// flags.
fn resolve(common: &Common, flags: &[(&str, Option<&String>)]) -> wavesel::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    use commands::*;
    match cli.command {
        Command::Synth {
            out,
            pairs,
            seed,
            image_size,
            blob_count,
            artifact_amplitude,
            artifact_period,
            alpha,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("out", out.as_ref()),
                    ("pairs", pairs.as_ref()),
                    ("seed", seed.as_ref()),
                    ("image_size", image_size.as_ref()),
                    ("blob_count", blob_count.as_ref()),
                    ("artifact_amplitude", artifact_amplitude.as_ref()),
                    ("artifact_period", artifact_period.as_ref()),
                    ("alpha", alpha.as_ref()),
                ],
            )?;
            cmd_synth(&cfg, common.force)
        }
        Command::Decompose {
            manifest,
            out,
            family,
            image_size,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("manifest", manifest.as_ref()),
                    ("out", out.as_ref()),
                    ("family", family.as_ref()),
                    ("image_size", image_size.as_ref()),
                ],
            )?;
            cmd_decompose(&cfg, common.force)
        }
        Command::Train {
            manifest,
            out,
            train,
            common,
        } => {
            let mut flags = vec![("manifest", manifest.as_ref()), ("out", out.as_ref())];
            flags.extend(train.pairs());
            cmd_train(&resolve(&common, &flags)?, common.force)
        }
        Command::Sweep {
            manifest,
            out,
            grid,
            train,
            common,
        } => {
            let mut flags = vec![
                ("manifest", manifest.as_ref()),
                ("out", out.as_ref()),
                ("grid", grid.as_ref()),
            ];
            flags.extend(train.pairs());
            cmd_sweep(&resolve(&common, &flags)?, common.force)
        }
        Command::Select { run, threshold, common } => {
            let cfg = resolve(&common, &[("run", run.as_ref()), ("threshold", threshold.as_ref())])?;
            cmd_select(&cfg, common.force)
        }
        Command::Retrain {
            manifest,
            selection,
            out,
            train,
            common,
        } => {
            if train.lambda.is_some() {
                return Err(wavesel::Error::Config("retrain always trains without a penalty; drop --lambda".into()).into());
            }
            let mut flags = vec![
                ("manifest", manifest.as_ref()),
                ("selection", selection.as_ref()),
                ("out", out.as_ref()),
            ];
            flags.extend(train.pairs());
            cmd_retrain(&resolve(&common, &flags)?, common.force)
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            split,
            embeddings,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("checkpoint", checkpoint.as_ref()),
                    ("manifest", manifest.as_ref()),
                    ("out", out.as_ref()),
                    ("split", split.as_ref()),
                ],
            )?;
            cmd_eval(&cfg, embeddings, common.force)
        }
        Command::Gradcam {
            checkpoint,
            image,
            out,
            target,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("checkpoint", checkpoint.as_ref()),
                    ("image", image.as_ref()),
                    ("out", out.as_ref()),
                    ("target", target.as_ref()),
                ],
            )?;
            cmd_gradcam(&cfg, common.force)
        }
        Command::ExportDet {
            checkpoint,
            manifest,
            out,
            split,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("checkpoint", checkpoint.as_ref()),
                    ("manifest", manifest.as_ref()),
                    ("out", out.as_ref()),
                    ("split", split.as_ref()),
                ],
            )?;
            cmd_export_det(&cfg, common.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
