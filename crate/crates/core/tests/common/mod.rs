#![allow(dead_code)]

use modelfree::channel::ChannelSpec;
use modelfree::numkit::{cross_entropy_rows, Activation, Mat, Mlp, CE_EPS};
use modelfree::transceiver::System;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / na.max(nb).max(1e-300)
}

/// Central differences of `f` at `theta`.
pub fn finite_diff(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Random small network ending in `last`.
pub fn random_net(rng: &mut ChaCha8Rng, last: Activation) -> Mlp {
    let hidden = [Activation::Elu, Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Linear];
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=5)];
    let mut acts = Vec::new();
    for l in 0..depth {
        sizes.push(rng.random_range(1..=6));
        acts.push(if l + 1 == depth { last } else { hidden[rng.random_range(0..hidden.len())] });
    }
    if last == Activation::Softmax && *sizes.last().unwrap() < 2 {
        *sizes.last_mut().unwrap() = 3;
    }
    let mut net = Mlp::new(&sizes, &acts, rng).unwrap();
    // Nonzero biases keep ReLU inputs off the kink even when a previous
    // layer is dead, so central differences stay valid.
    for layer in net.layers_mut() {
        layer.b.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    net
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

/// Batch-mean cross-entropy of the full chain with every random draw
/// replayed from `seed`: the channel noise is frozen.
pub fn frozen_loss(system: &System, channel: &ChannelSpec, messages: &[usize], seed: u64) -> f64 {
    let mut r = rng(seed);
    let (x, _) = system.tx.forward(messages).unwrap();
    let draw = channel.sample(&system.frame(&x).unwrap(), &mut r, false).unwrap();
    let prepared = system.prepare(&draw.y, false).unwrap();
    let p = system.rx.predict(&prepared.y).unwrap();
    let l = cross_entropy_rows(&p, messages, CE_EPS).unwrap();
    l.iter().sum::<f64>() / l.len() as f64
}
