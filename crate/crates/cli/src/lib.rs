//! Command-line front end driven by declarative TOML configs.

pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, GeneratorSpec, MatrixConfig, Preset, SplitConfig, SynthConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mimic", version, about = "Learn ultrasound post-processing from raw and processed frames")]
pub struct Cli {
    /// Seed override; for `train` it replaces `training.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Require reproducible execution; recorded in the resolved config.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output location; for `train` it replaces the config's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic speckle corpus.
    Synth {
        /// TOML template for each cineloop; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train per an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Run every loss by generator cell, using the config's matrix or the default grid.
        #[arg(long)]
        matrix: bool,
    },
    /// Score a checkpoint on held-out loops.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Split written by `train`; defaults to `split.json` beside the checkpoint.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Number of lowest-SSIM frames in the gallery.
        #[arg(long, default_value_t = 4)]
        worst: usize,
    },
    /// Time single-frame inference.
    Bench {
        #[arg(long, conflicts_with = "model")]
        checkpoint: Option<PathBuf>,
        /// Untrained preset to time when no checkpoint is given.
        #[arg(long, value_enum, default_value = "mimic")]
        model: Preset,
        /// `HEIGHTxWIDTH`.
        #[arg(long, default_value = "512x512", value_parser = parse_extent)]
        extent: (usize, usize),
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
    /// Apply a checkpoint to a graymap or a directory of graymaps.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

pub fn parse_extent(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("extent must be non-zero".into());
    }
    Ok((h, w))
}

fn require_out(out: &Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    out.clone()
        .ok_or_else(|| CliError::Config(vec![format!("{command} needs --out")]))
}

/// Executes one parsed command line; progress goes to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { spec, count } => {
            let out = require_out(&cli.out, "synth")?;
            let s = match spec {
                Some(p) => SynthConfig::load(p)?,
                None => SynthConfig::default(),
            };
            let m = commands::synth(&s, *count, cli.seed.unwrap_or(0), &out)?;
            println!("wrote {} cineloops to {}", m.entries.len(), out.display());
        }
        Command::Train { config, resume, matrix } => {
            let mut c = ExperimentConfig::load(config)?;
            if let Some(seed) = cli.seed {
                c.training.seed = seed;
            }
            if let Some(out) = &cli.out {
                c.out = out.clone();
            }
            c.deterministic |= cli.deterministic;
            if *matrix && c.matrix.is_none() {
                c.matrix = Some(MatrixConfig::default());
            } else if !*matrix {
                c.matrix = None;
            }
            for o in commands::train(&c, *resume)? {
                let loss = o.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}"));
                println!("{}: {} steps, final loss {loss}", o.out.display(), o.steps);
            }
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            worst,
        } => {
            let out = require_out(&cli.out, "eval")?;
            let split = split.clone().unwrap_or_else(|| {
                let dir = checkpoint.parent().unwrap_or(std::path::Path::new(""));
                let beside = dir.join(commands::SPLIT_FILE);
                if !beside.exists() && dir.file_name().is_some_and(|n| n == commands::CHECKPOINT_DIR) {
                    dir.parent().unwrap_or(dir).join(commands::SPLIT_FILE)
                } else {
                    beside
                }
            });
            let r = commands::eval(checkpoint, corpus, &split, *worst, &out)?;
            for (h, v) in r.table_row() {
                println!("{h}: {v}");
            }
            println!("{}", r.component_summary());
        }
        Command::Bench {
            checkpoint,
            model,
            extent,
            reps,
        } => {
            let g = match checkpoint {
                Some(p) => commands::load_mimic(p)?,
                None => commands::fresh_model(model.config(), cli.seed.unwrap_or(0))?,
            };
            let r = commands::bench(&g, *extent, *reps, cli.out.as_deref())?;
            let json = serde_json::to_string_pretty(&r).map_err(mimic_core::Error::from)?;
            println!("{json}");
        }
        Command::Infer { checkpoint, input } => {
            let out = require_out(&cli.out, "infer")?;
            let g = commands::load_mimic(checkpoint)?;
            let written = commands::infer(&g, input, &out)?;
            println!("wrote {} frames", written.len());
        }
    }
    Ok(())
}
