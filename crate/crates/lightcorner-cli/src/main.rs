//! `lightcorner`: generate synthetic data, train the four per-light-type
//! corner regressors, evaluate them, export predictions, and render
//! overlays. All behavior comes from a flat key=value config file plus the
//! per-command overrides below; every command is reproducible from
//! (config, seed).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lightcorner::commands::{
    cmd_eval, cmd_gen_synth, cmd_predict, cmd_render, cmd_train, PREDICTIONS_FILE,
    RENDERS_DIR, REPORT_JSON_FILE,
};
use lightcorner::config::ExperimentConfig;
use lightcorner::geometry::CropMode;
use lightcorner::{Error, Result};

#[derive(Parser)]
#[command(name = "lightcorner", version, about = "Vehicle light corner detection pipeline")]
struct Cli {
    /// Experiment config file (flat key=value); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images, annotations, split manifest).
    GenSynth {
        /// Override synth.seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Write the dataset here instead of data.dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Overwrite an existing dataset in the target directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one model per light type present in the training split.
    Train {
        /// Override train.seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Crop context mode: scene or vehicle.
        #[arg(long, value_name = "MODE")]
        context: Option<String>,
        /// Add horizontally mirrored training examples.
        #[arg(long)]
        augment: bool,
        /// Draw fresh center noise every epoch.
        #[arg(long)]
        train_noise: bool,
        /// Write checkpoints here instead of run.dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate the checkpoints on the clean and frozen-noise test split.
    Eval {
        /// Crop context mode: scene or vehicle.
        #[arg(long, value_name = "MODE")]
        context: Option<String>,
        /// Read checkpoints from and write reports here instead of run.dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Export test-split predictions as JSON lines (scene coordinates).
    Predict {
        /// Crop context mode: scene or vehicle.
        #[arg(long, value_name = "MODE")]
        context: Option<String>,
        /// Read checkpoints from and write predictions here instead of run.dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Render overlay images (center dot, truth in green, prediction in red).
    Render {
        /// Crop context mode: scene or vehicle.
        #[arg(long, value_name = "MODE")]
        context: Option<String>,
        /// Read checkpoints from and write renders here instead of run.dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Maximum number of overlays to write.
        #[arg(long, value_name = "N", default_value_t = 16)]
        limit: usize,
    },
}

fn parse_context(code: &str) -> Result<CropMode> {
    CropMode::from_code(code)
        .ok_or_else(|| Error::Config(format!("unknown context `{code}`; use scene or vehicle")))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };

    match cli.command {
        Command::GenSynth { seed, out, force } => {
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            if let Some(out) = out {
                cfg.data_dir = out;
            }
            let s = cmd_gen_synth(&cfg, force)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "generated {} scenes with {} lights (FL {}, FR {}, RL {}, RR {}) in {}",
                s.n_scenes,
                s.per_type.iter().sum::<usize>(),
                s.per_type[0],
                s.per_type[1],
                s.per_type[2],
                s.per_type[3],
                cfg.data_dir.display()
            );
            println!("split: {} train / {} test", s.n_train, s.n_test);
        }
        Command::Train { seed, context, augment, train_noise, out } => {
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(code) = context {
                cfg.crop_mode = parse_context(&code)?;
            }
            cfg.augment |= augment;
            cfg.train_noise |= train_noise;
            if let Some(out) = out {
                cfg.run_dir = out;
            }
            let s = cmd_train(&cfg)?;
            for light in &s.skipped {
                eprintln!("warning: no training data for {light}; model skipped");
            }
            for t in &s.trained {
                println!(
                    "trained {}: loss {:.6} -> {:.6} over {} epochs",
                    t.light, t.first_loss, t.final_loss, t.epochs
                );
            }
            println!("checkpoints in {}", cfg.run_dir.display());
        }
        Command::Eval { context, out } => {
            if let Some(code) = context {
                cfg.crop_mode = parse_context(&code)?;
            }
            if let Some(out) = out {
                cfg.run_dir = out;
            }
            let report = cmd_eval(&cfg)?;
            print!("{}", report.to_text());
            println!("report written to {}", cfg.run_dir.join(REPORT_JSON_FILE).display());
        }
        Command::Predict { context, out } => {
            if let Some(code) = context {
                cfg.crop_mode = parse_context(&code)?;
            }
            if let Some(out) = out {
                cfg.run_dir = out;
            }
            let n = cmd_predict(&cfg)?;
            println!("wrote {n} predictions to {}", cfg.run_dir.join(PREDICTIONS_FILE).display());
        }
        Command::Render { context, out, limit } => {
            if let Some(code) = context {
                cfg.crop_mode = parse_context(&code)?;
            }
            if let Some(out) = out {
                cfg.run_dir = out;
            }
            let n = cmd_render(&cfg, Some(limit))?;
            println!("wrote {n} overlays to {}", cfg.run_dir.join(RENDERS_DIR).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
