use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::train::TrainConfig;
use crate::transceiver::Arch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TrainAlt,
    TrainAware,
    TrainSpsa,
    Sweep,
    Variance,
    Theorem1,
    Feedback,
    Dump,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::TrainAlt => "train-alt",
            Experiment::TrainAware => "train-aware",
            Experiment::TrainSpsa => "train-spsa",
            Experiment::Sweep => "sweep",
            Experiment::Variance => "variance",
            Experiment::Theorem1 => "theorem1",
            Experiment::Feedback => "feedback",
            Experiment::Dump => "dump",
        }
    }
}

/// What a `sweep` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSystem {
    #[default]
    TrainAlt,
    TrainAware,
    TrainSpsa,
    Qpsk,
    /// Minimum-distance detection over a constellation file.
    Constellation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub system: SweepSystem,
    /// Evaluation SNRs in dB. Empty means the training SNR only.
    pub snr_db: Vec<f64>,
    pub constellation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub m: Vec<usize>,
    pub batch: usize,
    pub inits: usize,
    pub sigma: f64,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            m: vec![5, 25, 50, 100],
            batch: 1000,
            inits: 1000,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Section {
    pub sigmas: Vec<f64>,
    pub batch: usize,
    pub chunks: usize,
}

impl Default for Theorem1Section {
    fn default() -> Self {
        Theorem1Section {
            sigmas: vec![0.3, 0.15, 0.05],
            batch: 100_000,
            chunks: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    /// Feedback SNRs in dB; `inf` is a noiseless link.
    pub snr_fb_db: Vec<f64>,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        FeedbackSection {
            snr_fb_db: vec![f64::INFINITY, 10.0, -4.0],
        }
    }
}

/// Provenance written into `manifest.toml`; ignored when read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub package: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    /// Master seed. Training uses it directly; evaluation uses `seed + 1`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub channel: ChannelSpec,
    pub arch: Arch,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepSection,
    pub variance: VarianceSection,
    pub theorem1: Theorem1Section,
    pub feedback: FeedbackSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: None,
            channel: ChannelSpec::awgn_at(10.0),
            arch: Arch::dense(16, 1),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepSection::default(),
            variance: VarianceSection::default(),
            theorem1: Theorem1Section::default(),
            feedback: FeedbackSection::default(),
            manifest: None,
        }
    }
}

fn toml_err(path: &Path, e: toml::de::Error) -> Error {
    // Schema problems name the offending key; syntax problems carry a line.
    let msg = e.message().to_string();
    match e.span() {
        Some(span) if !msg.starts_with("unknown field") && !msg.starts_with("missing field") => {
            let text = std::fs::read_to_string(path).unwrap_or_default();
            let line = text[..span.start.min(text.len())].lines().count().max(1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            }
        }
        _ => Error::config(key_of(&msg), msg),
    }
}

fn key_of(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| toml_err(path, e))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::config(key_of(&msg), msg)
        })
    }

    /// Applies derived settings and validates the whole document.
    pub fn finalize(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.manifest = None;
        self.channel.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("sweep.snr_db", "SNR points must be finite"));
        }
        let experiment = self.experiment;
        let sweeping = experiment == Some(Experiment::Sweep);
        if sweeping && self.sweep.system == SweepSystem::Qpsk {
            let n = self.arch.n_uses;
            if 2 * n >= usize::BITS as usize || self.arch.num_messages != 1usize << (2 * n) {
                return Err(Error::config(
                    "arch.num_messages",
                    format!("QPSK over {n} uses needs num_messages = 4^{n}"),
                ));
            }
        }
        if sweeping && self.sweep.system == SweepSystem::Constellation && self.sweep.constellation.is_none() {
            return Err(Error::config("sweep.constellation", "path required for system = \"constellation\""));
        }
        let aware = experiment == Some(Experiment::TrainAware)
            || (sweeping && self.sweep.system == SweepSystem::TrainAware)
            || experiment == Some(Experiment::Theorem1);
        if aware && !self.channel.is_differentiable() {
            return Err(Error::config(
                "channel",
                format!("{} channel is sample-only; model-aware runs need a Jacobian", self.channel.name()),
            ));
        }
        Ok(())
    }

    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("cannot serialize config: {e}")))
    }

    /// The resolved config plus a provenance section. Feeding it back through
    /// `--config` reproduces the run.
    pub fn manifest_toml(&self) -> Result<String> {
        let mut m = self.clone();
        m.manifest = Some(ManifestInfo {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: self.experiment.map_or("", |e| e.as_str()).into(),
            seed: self.seed,
        });
        m.to_toml()
    }
}
