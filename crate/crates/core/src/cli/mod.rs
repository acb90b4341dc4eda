//! Command-line driver: TOML run configuration, experiment dispatch and
//! CSV/manifest output.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    Experiment, FeedbackSection, ManifestInfo, RunConfig, SweepSection, SweepSystem, Theorem1Section,
    VarianceSection,
};

use crate::baseline::load_constellation;
use crate::error::{Error, Result};
use crate::eval::{
    dump_constellation, feedback_csv, feedback_sweep, snr_sweep, sweep_csv, theorem1_check,
    theorem1_csv, variance_csv, variance_experiment, Link, MlLink, QpskLink, Theorem1Config, VarianceConfig,
};
use crate::train::{alternating_train, model_aware_train, spsa_train, TrainLog};
use crate::transceiver::System;

#[derive(Debug, Parser)]
#[command(name = "modelfree", version, about = "Model-free training of autoencoder communication links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration (a previous run's manifest.toml works too).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for Monte-Carlo evaluation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Comma-separated SNR points in dB, e.g. `0,4,8`.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Model-free alternating training.
    TrainAlt,
    /// Model-aware end-to-end training.
    TrainAware,
    /// Alternating training with an SPSA transmitter.
    TrainSpsa,
    /// Error rate versus SNR of a trained or classical system.
    Sweep,
    /// SPSA versus score-function estimator variance.
    Variance,
    /// Score-function estimate versus exact gradient.
    Theorem1,
    /// Final error rate versus feedback-link SNR.
    Feedback,
    /// Train, then write the learned constellation.
    Dump,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::TrainAlt => Experiment::TrainAlt,
            Command::TrainAware => Experiment::TrainAware,
            Command::TrainSpsa => Experiment::TrainSpsa,
            Command::Sweep => Experiment::Sweep,
            Command::Variance => Experiment::Variance,
            Command::Theorem1 => Experiment::Theorem1,
            Command::Feedback => Experiment::Feedback,
            Command::Dump => Experiment::Dump,
        }
    }
}

/// Reads the config file (if any) and applies the command-line overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    let experiment = Experiment::from(cli.command);
    match cfg.experiment {
        Some(e) if e != experiment => {
            return Err(Error::config(
                "experiment",
                format!("config is for `{}` but `{}` was requested", e.as_str(), experiment.as_str()),
            ))
        }
        _ => cfg.experiment = Some(experiment),
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(list) = &cli.snr_list {
        cfg.sweep.snr_db = list.clone();
    }
    cfg.finalize()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn train(cfg: &RunConfig, method: SweepSystem) -> Result<(System, TrainLog)> {
    let (train, arch, channel) = (&cfg.train, cfg.arch, &cfg.channel);
    match method {
        SweepSystem::TrainAware => model_aware_train(train, arch, channel),
        SweepSystem::TrainSpsa => spsa_train(train, arch, channel),
        _ => alternating_train(train, arch, channel),
    }
}

/// Evaluates at the SNR list, or at the training SNR when the list is empty.
fn sweep_csv_for(cfg: &RunConfig, link: &dyn Link) -> Result<String> {
    let snrs = if cfg.sweep.snr_db.is_empty() {
        vec![cfg.train.train_snr_db]
    } else {
        cfg.sweep.snr_db.clone()
    };
    Ok(sweep_csv(&snr_sweep(link, &cfg.channel, &snrs, &cfg.eval, cfg.eval_seed())?))
}

/// Runs the configured experiment and writes its outputs. Returns the
/// paths written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let experiment = cfg
        .experiment
        .ok_or_else(|| Error::config("experiment", "no experiment selected"))?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![
        write(dir, "resolved.toml", &cfg.to_toml()?)?,
        write(dir, "manifest.toml", &cfg.manifest_toml()?)?,
    ];
    match experiment {
        Experiment::TrainAlt | Experiment::TrainAware | Experiment::TrainSpsa | Experiment::Dump => {
            let method = match experiment {
                Experiment::TrainAware => SweepSystem::TrainAware,
                Experiment::TrainSpsa => SweepSystem::TrainSpsa,
                _ => SweepSystem::TrainAlt,
            };
            let (system, log) = train(cfg, method)?;
            let path = dir.join("constellation.csv");
            dump_constellation(&system, &path)?;
            written.push(path);
            if experiment != Experiment::Dump {
                written.push(write(dir, "train_log.csv", &log.to_csv())?);
                written.push(write(dir, "bler.csv", &sweep_csv_for(cfg, &system)?)?);
            }
        }
        Experiment::Sweep => {
            let body = match cfg.sweep.system {
                SweepSystem::Qpsk => sweep_csv_for(cfg, &QpskLink { n_uses: cfg.arch.n_uses })?,
                SweepSystem::Constellation => {
                    let path = cfg.sweep.constellation.as_ref().expect("checked in finalize");
                    sweep_csv_for(cfg, &MlLink(load_constellation(path)?))?
                }
                _ => {
                    let (system, log) = train(cfg, cfg.sweep.system)?;
                    written.push(write(dir, "train_log.csv", &log.to_csv())?);
                    sweep_csv_for(cfg, &system)?
                }
            };
            written.push(write(dir, "sweep.csv", &body)?);
        }
        Experiment::Variance => {
            let v = &cfg.variance;
            let vc = VarianceConfig {
                batch: v.batch,
                inits: v.inits,
                sigma: v.sigma,
                spsa_c: cfg.train.spsa.c,
            };
            let rows = variance_experiment(&v.m, &vc, cfg.seed)?;
            written.push(write(dir, "variance.csv", &variance_csv(&rows))?);
        }
        Experiment::Theorem1 => {
            let t = &cfg.theorem1;
            let channel = cfg.channel.with_snr_db(cfg.train.train_snr_db);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let system = System::new(cfg.arch, &channel, &mut rng)?;
            let tc = Theorem1Config {
                batch: t.batch,
                chunks: t.chunks,
                perturbation: cfg.train.perturbation,
                baseline_subtract: cfg.train.baseline_subtract,
            };
            let rows = theorem1_check(&system, &channel, &t.sigmas, &tc, cfg.eval_seed())?;
            written.push(write(dir, "theorem1.csv", &theorem1_csv(&rows))?);
        }
        Experiment::Feedback => {
            let rows = feedback_sweep(
                &cfg.train,
                cfg.arch,
                &cfg.channel,
                &cfg.feedback.snr_fb_db,
                &cfg.eval,
                cfg.eval_seed(),
            )?;
            written.push(write(dir, "feedback.csv", &feedback_csv(&rows))?);
        }
    }
    Ok(written)
}

/// Parses `args`, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = resolve(&cli).and_then(|cfg| {
        if let Some(w) = cfg.workers {
            // Fails only if a pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        run(&cfg)
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
