use rand::Rng;
use serde::{Deserialize, Serialize};

use super::one_hot_batch;
use crate::channel::SymbolBatch;
use crate::error::{Error, Result};
use crate::numkit::{Activation, Grads, Mlp, Tape};

/// Transmitter network layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxArch {
    /// One-hot `M` → dense `M` (ELU) → dense `2N` (linear).
    #[default]
    Dense,
    /// One-hot `M` → 64 (ReLU) → 64 (ReLU) → `2N` (linear).
    Fiber,
}

/// Maps messages to normalized channel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter {
    pub num_messages: usize,
    pub n_uses: usize,
    pub net: Mlp,
    /// Average energy per complex symbol after normalization.
    pub norm_target: f64,
}

/// Forward state of the transmitter, including the batch normalization.
#[derive(Debug, Clone)]
pub struct TxTape {
    net: Tape,
    raw: crate::numkit::Mat,
    scale: f64,
    sum_sq: f64,
}

impl Transmitter {
    pub fn new<R: Rng + ?Sized>(
        arch: TxArch,
        num_messages: usize,
        n_uses: usize,
        norm_target: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(norm_target > 0.0 && norm_target.is_finite()) {
            return Err(Error::Invalid(format!("norm_target must be > 0, got {norm_target}")));
        }
        let (m, out) = (num_messages, 2 * n_uses);
        let net = match arch {
            TxArch::Dense => Mlp::new(&[m, m, out], &[Activation::Elu, Activation::Linear], rng)?,
            TxArch::Fiber => Mlp::new(
                &[m, 64, 64, out],
                &[Activation::Relu, Activation::Relu, Activation::Linear],
                rng,
            )?,
        };
        Ok(Transmitter {
            num_messages,
            n_uses,
            net,
            norm_target,
        })
    }

    /// Encodes a batch of messages and normalizes the batch to `norm_target`.
    pub fn forward(&self, messages: &[usize]) -> Result<(SymbolBatch, TxTape)> {
        if messages.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let input = one_hot_batch(messages, self.num_messages)?;
        let (raw, net) = self.net.forward(&input)?;
        let sum_sq = raw.sum_sq();
        if sum_sq == 0.0 {
            return Err(Error::ZeroEnergy);
        }
        let scale = (self.norm_target * (messages.len() * self.n_uses) as f64 / sum_sq).sqrt();
        let x = SymbolBatch::new(raw.scaled(scale))?;
        Ok((
            x,
            TxTape {
                net,
                raw,
                scale,
                sum_sq,
            },
        ))
    }

    /// Parameter gradient given `dL/dx̄` for the normalized output of
    /// [`Transmitter::forward`]. The normalization couples the batch:
    /// `dL/dz = c·(g − (⟨g, z⟩ / ‖z‖²)·z)`.
    pub fn backward(&self, tape: &TxTape, dl_dx: &crate::numkit::Mat) -> Result<Grads> {
        let proj = dl_dx.dot(&tape.raw)? / tape.sum_sq;
        let mut dz = dl_dx.clone();
        dz.add_scaled(&tape.raw, -proj)?;
        dz.scale(tape.scale);
        self.net.backward_params(&tape.net, &dz)
    }

    /// Symbols of all `M` messages, normalized over the full (equiprobable)
    /// message set. Row `m` is the symbol block for message `m`.
    pub fn constellation(&self) -> Result<SymbolBatch> {
        let all: Vec<usize> = (0..self.num_messages).collect();
        Ok(self.forward(&all)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_energy_matches_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (arch, target) in [(TxArch::Dense, 1.0), (TxArch::Fiber, 3e-4)] {
            let tx = Transmitter::new(arch, 16, 2, target, &mut rng).unwrap();
            let msgs = [0, 3, 3, 7, 15, 1];
            let (x, _) = tx.forward(&msgs).unwrap();
            assert_eq!(x.as_mat().shape(), (6, 4));
            assert!((x.mean_symbol_energy() - target).abs() < 1e-9 * target);
            assert_eq!(tx.forward(&msgs).unwrap().0, x);
        }
    }

    #[test]
    fn reference_sized_transmitter() {
        let tx = Transmitter::new(TxArch::Dense, 256, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(tx.net.input_width(), 256);
        assert_eq!(tx.net.output_width(), 8);
        assert_eq!(tx.net.layers()[0].activation, Activation::Elu);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(Transmitter::new(TxArch::Dense, 4, 1, 0.0, &mut rng).is_err());
        let tx = Transmitter::new(TxArch::Dense, 4, 1, 1.0, &mut rng).unwrap();
        assert!(matches!(tx.forward(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(tx.forward(&[4]), Err(Error::OutOfRange { .. })));
    }
}
