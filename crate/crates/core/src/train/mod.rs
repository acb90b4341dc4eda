//! Training procedures: the model-free alternating scheme (receiver by true
//! gradient, transmitter by the score-function estimator), model-aware
//! end-to-end backpropagation, and an SPSA transmitter baseline.

mod estimate;
mod spsa;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use estimate::{aware_grad_estimate, mean_aware_tx_grad, rx_grad_estimate, tx_grad_estimate, AwareGrads};
pub use spsa::{spsa_grad, spsa_train, SpsaConfig};

use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::numkit::{adam_update, AdamState};
use crate::transceiver::{Arch, Perturbation, Policy, RxGrads, System};

/// Hyperparameters shared by all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Receiver (and model-aware) batch size.
    pub batch_rx: usize,
    /// Transmitter batch size.
    pub batch_tx: usize,
    pub outer_iters: usize,
    pub rx_steps_per_iter: usize,
    pub tx_steps_per_iter: usize,
    /// Joint steps per outer iteration of model-aware training.
    pub aware_steps_per_iter: usize,
    pub sigma: f64,
    pub perturbation: Perturbation,
    pub train_snr_db: f64,
    /// Feedback-link SNR for the per-example losses; `None` is noiseless.
    pub snr_fb_db: Option<f64>,
    pub lr: f64,
    pub seed: u64,
    /// Subtract the batch-mean loss before weighting the score.
    pub baseline_subtract: bool,
    pub spsa: SpsaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_rx: 1000,
            batch_tx: 1000,
            outer_iters: 100,
            rx_steps_per_iter: 10,
            tx_steps_per_iter: 10,
            aware_steps_per_iter: 10,
            sigma: 0.15,
            perturbation: Perturbation::Conserving,
            train_snr_db: 10.0,
            snr_fb_db: None,
            lr: 1e-3,
            seed: 0,
            baseline_subtract: false,
            spsa: SpsaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rx == 0 || self.batch_tx == 0 {
            return Err(Error::config("train.batch_rx/batch_tx", "batch sizes must be >= 1"));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config("train.sigma", format!("must lie in (0, 1), got {}", self.sigma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !self.train_snr_db.is_finite() {
            return Err(Error::config("train.train_snr_db", "must be finite"));
        }
        if self.snr_fb_db.is_some_and(f64::is_nan) {
            return Err(Error::config("train.snr_fb_db", "must not be NaN"));
        }
        self.spsa.validate()
    }

    /// Exploration policy for a transmitter at `energy` per symbol.
    pub fn policy(&self, energy: f64) -> Result<Policy> {
        Policy::with_energy(self.sigma, energy, self.perturbation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Rx,
    Tx,
    /// Joint model-aware step.
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Rx => "rx",
            Phase::Tx => "tx",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Global step counter, strictly increasing.
    pub step: usize,
    /// Mean cross-entropy of the batch used for the step.
    pub loss: f64,
    pub wall_secs: f64,
}

/// Per-step loss history.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    started: Option<Instant>,
}

impl PartialEq for TrainLog {
    // Wall time is not part of a run's identity.
    fn eq(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                (a.iteration, a.phase, a.step) == (b.iteration, b.phase, b.step)
                    && a.loss.to_bits() == b.loss.to_bits()
            })
    }
}

impl TrainLog {
    pub fn push(&mut self, iteration: usize, phase: Phase, loss: f64) {
        let started = *self.started.get_or_insert_with(Instant::now);
        let step = self.records.last().map_or(0, |r| r.step + 1);
        self.records.push(LogRecord {
            iteration,
            phase,
            step,
            loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }

    pub fn last_loss(&self, phase: Phase) -> Option<f64> {
        self.records.iter().rev().find(|r| r.phase == phase).map(|r| r.loss)
    }

    /// CSV with header `iteration,phase,loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,phase,loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{:e}", r.iteration, r.phase.as_str(), r.loss);
        }
        out
    }
}

/// Adam states for the receiver's sub-networks.
#[derive(Debug, Clone)]
pub struct RxOptimizer {
    transformer: Option<AdamState>,
    discriminative: AdamState,
}

impl RxOptimizer {
    pub fn new(system: &System, lr: f64) -> Self {
        RxOptimizer {
            transformer: system.rx.transformer.as_ref().map(|n| AdamState::new(n, lr)),
            discriminative: AdamState::new(&system.rx.discriminative, lr),
        }
    }

    pub fn step(&mut self, system: &mut System, grads: &RxGrads) -> Result<()> {
        match (&mut system.rx.transformer, &mut self.transformer, &grads.transformer) {
            (Some(net), Some(state), Some(g)) => adam_update(net, g, state)?,
            (None, None, None) => {}
            _ => return Err(Error::Invalid("receiver gradient layout mismatch".into())),
        }
        adam_update(&mut system.rx.discriminative, &grads.discriminative, &mut self.discriminative)
    }
}

/// Everything a training run mutates: the system, optimizer states, the
/// shared random stream and the loss log.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub system: System,
    pub rx_opt: RxOptimizer,
    pub tx_opt: AdamState,
    pub rng: ChaCha8Rng,
    pub log: TrainLog,
    pub iteration: usize,
}

impl TrainState {
    /// Fresh system initialized from `cfg.seed`. The same stream then drives
    /// message selection, exploration and the channel.
    pub fn new(cfg: &TrainConfig, arch: Arch, channel: &ChannelSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let system = System::new(arch, channel, &mut rng)?;
        Ok(TrainState::from_system(cfg, system, rng))
    }

    pub fn from_system(cfg: &TrainConfig, system: System, rng: ChaCha8Rng) -> Self {
        TrainState {
            rx_opt: RxOptimizer::new(&system, cfg.lr),
            tx_opt: AdamState::new(&system.tx.net, cfg.lr),
            system,
            rng,
            log: TrainLog::default(),
            iteration: 0,
        }
    }
}

/// `count` messages drawn uniformly from `0..m`.
pub fn random_messages<R: Rng + ?Sized>(rng: &mut R, m: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..m)).collect()
}

fn training_channel(cfg: &TrainConfig, channel: &ChannelSpec) -> Result<ChannelSpec> {
    cfg.validate()?;
    channel.validate()?;
    Ok(channel.with_snr_db(cfg.train_snr_db))
}

/// `rx_steps_per_iter` Adam steps on the receiver with the transmitter
/// frozen and unrelaxed.
pub fn train_receiver_phase(state: &mut TrainState, cfg: &TrainConfig, channel: &ChannelSpec) -> Result<()> {
    for _ in 0..cfg.rx_steps_per_iter {
        let msgs = random_messages(&mut state.rng, state.system.arch.num_messages, cfg.batch_rx);
        let (grads, loss) = rx_grad_estimate(&state.system, channel, &msgs, &mut state.rng)?;
        state.rx_opt.step(&mut state.system, &grads)?;
        state.log.push(state.iteration, Phase::Rx, loss);
    }
    Ok(())
}

/// `tx_steps_per_iter` Adam steps on the transmitter using the
/// score-function estimator, with the receiver frozen.
pub fn train_transmitter_phase(
    state: &mut TrainState,
    cfg: &TrainConfig,
    channel: &ChannelSpec,
) -> Result<()> {
    let policy = cfg.policy(state.system.tx.norm_target)?;
    for _ in 0..cfg.tx_steps_per_iter {
        let msgs = random_messages(&mut state.rng, state.system.arch.num_messages, cfg.batch_tx);
        let (grads, loss) = tx_grad_estimate(
            &state.system,
            channel,
            &policy,
            &msgs,
            &mut state.rng,
            cfg.snr_fb_db,
            cfg.baseline_subtract,
        )?;
        adam_update(&mut state.system.tx.net, &grads, &mut state.tx_opt)?;
        state.log.push(state.iteration, Phase::Tx, loss);
    }
    Ok(())
}

/// Model-free training: alternates receiver and transmitter phases for
/// `outer_iters` iterations. The channel is only ever sampled.
pub fn alternating_train(cfg: &TrainConfig, arch: Arch, channel: &ChannelSpec) -> Result<(System, TrainLog)> {
    let channel = training_channel(cfg, channel)?;
    let mut state = TrainState::new(cfg, arch, &channel)?;
    for it in 0..cfg.outer_iters {
        state.iteration = it;
        train_receiver_phase(&mut state, cfg, &channel)?;
        train_transmitter_phase(&mut state, cfg, &channel)?;
    }
    Ok((state.system, state.log))
}

/// One joint Adam step on both ends through the channel Jacobian.
pub fn model_aware_step(state: &mut TrainState, cfg: &TrainConfig, channel: &ChannelSpec) -> Result<()> {
    let msgs = random_messages(&mut state.rng, state.system.arch.num_messages, cfg.batch_rx);
    let g = aware_grad_estimate(&state.system, channel, &msgs, &mut state.rng)?;
    state.rx_opt.step(&mut state.system, &g.rx)?;
    adam_update(&mut state.system.tx.net, &g.tx, &mut state.tx_opt)?;
    state.log.push(state.iteration, Phase::Joint, g.loss);
    Ok(())
}

/// End-to-end backpropagation through a differentiable channel model,
/// `aware_steps_per_iter` joint steps per outer iteration.
pub fn model_aware_train(cfg: &TrainConfig, arch: Arch, channel: &ChannelSpec) -> Result<(System, TrainLog)> {
    if !channel.is_differentiable() {
        return Err(Error::MissingJacobian(channel.name()));
    }
    let channel = training_channel(cfg, channel)?;
    let mut state = TrainState::new(cfg, arch, &channel)?;
    for it in 0..cfg.outer_iters {
        state.iteration = it;
        for _ in 0..cfg.aware_steps_per_iter {
            model_aware_step(&mut state, cfg, &channel)?;
        }
    }
    Ok((state.system, state.log))
}
