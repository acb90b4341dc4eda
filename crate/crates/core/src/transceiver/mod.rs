//! Transmitter and receiver networks, the Gaussian exploration policy and
//! the end-to-end block chain that ties them to a channel.

mod policy;
mod receiver;
mod system;
mod transmitter;

pub use policy::{Perturbation, Policy};
pub use receiver::{equalize, equalize_backward, Receiver, RxArch, RxGrads, RxTape};
pub use system::{Arch, PreparedBlocks, System};
pub use transmitter::{Transmitter, TxArch, TxTape};

use crate::channel::SymbolBatch;
use crate::error::{Error, Result};
use crate::numkit::Mat;

/// One-hot row for message `m` out of `size`.
pub fn one_hot(m: usize, size: usize) -> Result<Mat> {
    one_hot_batch(&[m], size)
}

pub fn one_hot_batch(messages: &[usize], size: usize) -> Result<Mat> {
    let mut out = Mat::zeros(messages.len(), size);
    for (i, &m) in messages.iter().enumerate() {
        if m >= size {
            return Err(Error::OutOfRange {
                what: "message",
                value: m,
                limit: size,
            });
        }
        out[(i, m)] = 1.0;
    }
    Ok(out)
}

/// Scales the whole batch by one factor so that its mean energy per complex
/// symbol equals `target`.
pub fn normalize_batch(x: &SymbolBatch, target: f64) -> Result<SymbolBatch> {
    let energy = x.mean_symbol_energy();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let mut out = x.clone();
    out.as_mat_mut().scale((target / energy).sqrt());
    Ok(out)
}

/// Hard decisions: row-wise argmax, ties resolved toward the lowest index.
pub fn decide(p: &Mat) -> Vec<usize> {
    p.rows_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
