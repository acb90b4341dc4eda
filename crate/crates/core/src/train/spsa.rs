use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_messages, train_receiver_phase, training_channel, Phase, TrainConfig, TrainLog, TrainState};
use crate::channel::{noisy_feedback, ChannelSpec};
use crate::error::{Error, Result};
use crate::numkit::{cross_entropy_rows, Mlp, CE_EPS};
use crate::transceiver::{Arch, System};

/// Gain sequences `a_k = a/(k+1+A)^α` and `c_k = c/(k+1)^γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Stability offset `A` of the step-size sequence.
    pub stability: f64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            a: 0.01,
            c: 0.1,
            alpha: 0.602,
            gamma: 0.101,
            stability: 0.0,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.c > 0.0) {
            return Err(Error::config("train.spsa", "a and c must be positive"));
        }
        if !(self.alpha >= 0.0 && self.gamma >= 0.0 && self.stability >= 0.0) {
            return Err(Error::config("train.spsa", "exponents and offset must be >= 0"));
        }
        Ok(())
    }

    pub fn a_k(&self, k: usize) -> f64 {
        self.a / (k as f64 + 1.0 + self.stability).powf(self.alpha)
    }

    pub fn c_k(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(self.gamma)
    }
}

/// Two-point gradient substitute along a Rademacher direction `Δ`:
/// `[L(θ + cΔ) − L(θ − cΔ)] / (2c) · Δ`.
pub fn spsa_grad<R, F>(mut objective: F, theta: &[f64], c_k: f64, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    if c_k.is_nan() || c_k <= 0.0 {
        return Err(Error::Invalid(format!("SPSA perturbation must be > 0, got {c_k}")));
    }
    let delta: Vec<f64> = (0..theta.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&delta).map(|(t, d)| t + s * c_k * d).collect() };
    let diff = objective(&shifted(1.0))? - objective(&shifted(-1.0))?;
    Ok(delta.iter().map(|d| diff / (2.0 * c_k) * d).collect())
}

fn sampled_loss<R: Rng + ?Sized>(
    system: &System,
    net: &Mlp,
    channel: &ChannelSpec,
    messages: &[usize],
    snr_fb_db: Option<f64>,
    rng: &mut R,
) -> Result<f64> {
    let mut tx = system.tx.clone();
    tx.net = net.clone();
    let (x, _) = tx.forward(messages)?;
    let draw = channel.sample(&system.frame(&x)?, rng, false)?;
    let prepared = system.prepare(&draw.y, false)?;
    let p = system.rx.predict(&prepared.y)?;
    let mut losses = cross_entropy_rows(&p, messages, CE_EPS)?;
    if let Some(snr) = snr_fb_db {
        losses = noisy_feedback(&losses, snr, rng)?;
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Alternating training with the transmitter updated by plain SPSA steps on
/// the sampled loss. The receiver phase is the usual true-gradient phase.
pub fn spsa_train(cfg: &TrainConfig, arch: Arch, channel: &ChannelSpec) -> Result<(System, TrainLog)> {
    let channel = training_channel(cfg, channel)?;
    let mut state = TrainState::new(cfg, arch, &channel)?;
    let mut k = 0;
    for it in 0..cfg.outer_iters {
        state.iteration = it;
        train_receiver_phase(&mut state, cfg, &channel)?;
        for _ in 0..cfg.tx_steps_per_iter {
            let msgs = random_messages(&mut state.rng, arch.num_messages, cfg.batch_tx);
            let theta = state.system.tx.net.params_flat();
            let mut probe = state.system.tx.net.clone();
            let mut losses = Vec::with_capacity(2);
            // The objective needs the shared stream for channel draws, so the
            // perturbation direction comes from a stream forked off it.
            let mut dir_rng = ChaCha8Rng::seed_from_u64(state.rng.random());
            let TrainState { system, rng, .. } = &mut state;
            let g = spsa_grad(
                |t: &[f64]| {
                    probe.set_params_flat(t)?;
                    let l = sampled_loss(system, &probe, &channel, &msgs, cfg.snr_fb_db, rng)?;
                    losses.push(l);
                    Ok(l)
                },
                &theta,
                cfg.spsa.c_k(k),
                &mut dir_rng,
            )?;
            let a = cfg.spsa.a_k(k);
            let next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - a * gi).collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: 0 });
            }
            state.system.tx.net.set_params_flat(&next)?;
            state.log.push(it, Phase::Tx, 0.5 * (losses[0] + losses[1]));
            k += 1;
        }
    }
    Ok((state.system, state.log))
}
