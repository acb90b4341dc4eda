use rand::Rng;

use crate::channel::{noisy_feedback, ChannelSpec, SymbolBatch};
use crate::error::{Error, Result};
use crate::numkit::{cross_entropy_grad, cross_entropy_rows, Grads, CE_EPS};
use crate::transceiver::{Policy, RxGrads, System};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Receiver gradient of the batch-mean cross-entropy. The transmitter is
/// used without relaxation and the channel only as a sampler.
/// Returns the gradient and the batch-mean loss.
pub fn rx_grad_estimate<R: Rng + ?Sized>(
    system: &System,
    channel: &ChannelSpec,
    messages: &[usize],
    rng: &mut R,
) -> Result<(RxGrads, f64)> {
    if messages.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (x, _) = system.tx.forward(messages)?;
    let draw = channel.sample(&system.frame(&x)?, rng, false)?;
    let prepared = system.prepare(&draw.y, false)?;
    let (p, tape) = system.rx.forward(&prepared.y)?;
    let losses = cross_entropy_rows(&p, messages, CE_EPS)?;
    let w = vec![1.0 / messages.len() as f64; messages.len()];
    let dl_dp = cross_entropy_grad(&p, messages, &w, CE_EPS)?;
    let (grads, _) = system.rx.backward(&tape, &dl_dp, false)?;
    Ok((grads, mean(&losses)))
}

/// Score-function estimate of the transmitter gradient:
/// `(1/S)·Σ lᵢ·J_f(mᵢ)ᵀ·∇_x̄ ln π(xᵢ | x̄ᵢ)`.
///
/// The per-example losses are the only information that flows back from the
/// receiver; they pass through a noisy feedback link when `snr_fb_db` is set.
/// Returns the gradient and the batch-mean loss as observed at the receiver.
pub fn tx_grad_estimate<R: Rng + ?Sized>(
    system: &System,
    channel: &ChannelSpec,
    policy: &Policy,
    messages: &[usize],
    rng: &mut R,
    snr_fb_db: Option<f64>,
    baseline_subtract: bool,
) -> Result<(Grads, f64)> {
    if messages.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (x_bar, tape) = system.tx.forward(messages)?;
    let (x, _) = policy.sample(&x_bar, rng);
    let draw = channel.sample(&system.frame(&x)?, rng, false)?;
    let prepared = system.prepare(&draw.y, false)?;
    let p = system.rx.predict(&prepared.y)?;
    let losses = cross_entropy_rows(&p, messages, CE_EPS)?;
    let observed = mean(&losses);
    let mut fed_back = match snr_fb_db {
        Some(snr) => noisy_feedback(&losses, snr, rng)?,
        None => losses,
    };
    if baseline_subtract {
        let b = mean(&fed_back);
        fed_back.iter_mut().for_each(|l| *l -= b);
    }
    let mut dl_dx = policy.score(&x_bar, &x)?;
    let s = messages.len() as f64;
    for (row, &l) in fed_back.iter().enumerate() {
        dl_dx.row_mut(row).iter_mut().for_each(|v| *v *= l / s);
    }
    Ok((system.tx.backward(&tape, &dl_dx)?, observed))
}

/// Joint gradient of one model-aware step.
#[derive(Debug, Clone)]
pub struct AwareGrads {
    pub tx: Grads,
    pub rx: RxGrads,
    pub loss: f64,
}

/// Exact gradient of the batch-mean cross-entropy with respect to both
/// ends, backpropagated through the channel Jacobian of the draw.
pub fn aware_grad_estimate<R: Rng + ?Sized>(
    system: &System,
    channel: &ChannelSpec,
    messages: &[usize],
    rng: &mut R,
) -> Result<AwareGrads> {
    if messages.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (x, tx_tape) = system.tx.forward(messages)?;
    let draw = channel.sample(&system.frame(&x)?, rng, true)?;
    let jac = draw.jacobian.as_ref().ok_or(Error::MissingJacobian(channel.name()))?;
    let prepared = system.prepare(&draw.y, true)?;
    let (p, rx_tape) = system.rx.forward(&prepared.y)?;
    let losses = cross_entropy_rows(&p, messages, CE_EPS)?;
    let w = vec![1.0 / messages.len() as f64; messages.len()];
    let dl_dp = cross_entropy_grad(&p, messages, &w, CE_EPS)?;
    let (rx, dy) = system.rx.backward(&rx_tape, &dl_dp, true)?;
    let dy: SymbolBatch = dy.expect("input gradient requested");
    let dx = system.input_gradient(jac, &prepared, &dy)?;
    let tx = system.tx.backward(&tx_tape, dx.as_mat())?;
    Ok(AwareGrads {
        tx,
        rx,
        loss: mean(&losses),
    })
}

/// Model-aware transmitter gradient averaged over `draws` independent
/// batches of `messages`, used as the reference direction when checking
/// the score-function estimator.
pub fn mean_aware_tx_grad<R: Rng + ?Sized>(
    system: &System,
    channel: &ChannelSpec,
    messages: &[usize],
    draws: usize,
    rng: &mut R,
) -> Result<Grads> {
    let mut acc = Grads::zeros_like(&system.tx.net);
    for _ in 0..draws.max(1) {
        let g = aware_grad_estimate(system, channel, messages, rng)?;
        acc.add_scaled(&g.tx, 1.0 / draws.max(1) as f64)?;
    }
    Ok(acc)
}
