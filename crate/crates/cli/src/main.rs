//! One-class PAD pipeline: generate data, train autoencoders, score, fit
//! benchmark classifiers and evaluate with ISO 30107-3 metrics.
//!
//! Exit codes: 0 success, 2 usage error, 3 data-contract violation,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocpad::Error;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ocpad", version, about = "One-class fingerprint PAD pipeline")]
struct Cli {
    /// Experiment configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file and the OC_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread cap for scoring and feature extraction.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration in canonical form.
    Config,
    /// Generate synthetic data and write train/val/test containers.
    Gen {
        /// Output directory (defaults to the config's data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an autoencoder on the bona fide training split.
    Train {
        /// Architecture: conv, pooling or dense.
        #[arg(long)]
        arch: Option<String>,
        /// Loss: mse, ishii or wmse.
        #[arg(long)]
        loss: Option<String>,
        /// Threshold multiplier of the pixel-weighted loss.
        #[arg(long)]
        c: Option<f32>,
        /// Quantile level of the sample-weighted loss.
        #[arg(long)]
        alpha: Option<f32>,
        /// Directory holding train.ocpd and val.ocpd.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Score a container with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        /// Container file to score.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract latent features from a container.
    Latent {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a one-class benchmark classifier on bona fide features and score.
    FitOc {
        /// Classifier: gmm or svm.
        kind: String,
        /// Training feature CSV (bona fide rows are used).
        #[arg(long)]
        features: PathBuf,
        /// Feature CSV to score (defaults to the training features).
        #[arg(long)]
        score: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Labeled feature CSV for a D-EER hyperparameter sweep.
        #[arg(long)]
        tune: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        nu: Option<f64>,
        /// RBF bandwidth; 0 selects 1/dimension on standardized features.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Evaluate score files: D-EER, pAUC@20%, fixed-BPCER points, DET export.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Second score file; triggers the fusion sweep.
        #[arg(long)]
        fuse: Option<PathBuf>,
        /// Fusion weight for the detailed fused report.
        #[arg(long)]
        w: Option<f64>,
        /// Reference score files for fusion normalization statistics.
        #[arg(long)]
        norm_ref_a: Option<PathBuf>,
        #[arg(long)]
        norm_ref_b: Option<PathBuf>,
        /// Output directory for report.txt, det.csv and friends.
        #[arg(long)]
        out: PathBuf,
        /// Also render det.svg.
        #[arg(long)]
        svg: bool,
    },
}

fn resolve_seed(flag: Option<u64>, cfg: &ExperimentConfig) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(env) = std::env::var("OC_SEED") {
        return env
            .trim()
            .parse()
            .map_err(|_| format!("OC_SEED must be an unsigned integer, got '{env}'"));
    }
    Ok(cfg.seed)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = match resolve_seed(cli.seed, &cfg) {
        Ok(s) => s,
        Err(msg) => {
            // malformed environment fallback is a usage error
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    };
    let jobs = cli.jobs.max(1);

    match cli.command {
        Command::Config => {
            print!("{}", cfg.serialize());
            Ok(())
        }
        Command::Gen { out } => commands::gen(&cfg, out.as_deref()),
        Command::Train { arch, loss, c, alpha, data, out, epochs, batch, lr } => {
            let mut cfg = cfg;
            if let Some(v) = arch {
                cfg.arch = v;
            }
            if let Some(v) = loss {
                cfg.loss = v;
            }
            if let Some(v) = c {
                cfg.c = v;
            }
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch {
                cfg.batch = v;
            }
            if let Some(v) = lr {
                cfg.lr = v;
            }
            commands::train(&cfg, data.as_deref(), &out)
        }
        Command::Score { model, data, out } => commands::score(&model, &data, &out, jobs),
        Command::Latent { model, data, out } => commands::latent(&model, &data, &out),
        Command::FitOc { kind, features, score, out, tune, k, nu, gamma } => {
            let mut cfg = cfg;
            if let Some(v) = k {
                cfg.gmm_k = v;
            }
            if let Some(v) = nu {
                cfg.svm_nu = v;
            }
            if let Some(v) = gamma {
                cfg.svm_gamma = v;
            }
            commands::fit_oc(
                &cfg,
                &kind,
                &features,
                score.as_deref(),
                tune.as_deref(),
                &out,
            )
        }
        Command::Eval { scores, fuse, w, norm_ref_a, norm_ref_b, out, svg } => commands::eval(
            &scores,
            fuse.as_deref(),
            w,
            norm_ref_a.as_deref(),
            norm_ref_b.as_deref(),
            &out,
            svg,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
