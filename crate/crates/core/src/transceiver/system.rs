use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Receiver, RxArch, Transmitter, TxArch};
use crate::baseline::{pilot_equalize, pilot_estimates, PILOT};
use crate::channel::{ChannelSpec, Jacobian, SymbolBatch};
use crate::error::{Error, Result};
use crate::numkit::Mat;

/// System layout: message-set size, channel uses and network styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub num_messages: usize,
    /// Data-carrying complex channel uses per message.
    pub n_uses: usize,
    #[serde(default)]
    pub tx: TxArch,
    #[serde(default)]
    pub rx: RxArch,
    /// Prepend a known pilot use and equalize with it before the receiver.
    #[serde(default)]
    pub pilot: bool,
}

impl Arch {
    pub fn dense(num_messages: usize, n_uses: usize) -> Self {
        Arch {
            num_messages,
            n_uses,
            tx: TxArch::Dense,
            rx: RxArch::Discriminative,
            pilot: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_messages < 2 {
            return Err(Error::config("arch.num_messages", "need at least 2 messages"));
        }
        if self.n_uses < 1 {
            return Err(Error::config("arch.n_uses", "need at least 1 channel use"));
        }
        if self.pilot && self.rx == RxArch::Transformer {
            return Err(Error::config(
                "arch.pilot",
                "pilot equalization and the transformer receiver are exclusive",
            ));
        }
        Ok(())
    }

    /// Complex channel uses per transmitted block, pilot included.
    pub fn block_length(&self) -> usize {
        self.n_uses + usize::from(self.pilot)
    }
}

/// Receiver input after pilot processing, with the Jacobian of that
/// processing when requested.
#[derive(Debug, Clone)]
pub struct PreparedBlocks {
    pub y: SymbolBatch,
    pub jacobian: Option<Jacobian>,
}

/// A transmitter/receiver pair plus the framing between them.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub arch: Arch,
    pub tx: Transmitter,
    pub rx: Receiver,
}

impl System {
    /// Fresh random system whose transmitter meets the channel's power level.
    pub fn new<R: Rng + ?Sized>(arch: Arch, channel: &ChannelSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let energy = channel.symbol_energy();
        let tx = Transmitter::new(arch.tx, arch.num_messages, arch.n_uses, energy, rng)?;
        let rx = Receiver::new(arch.rx, arch.num_messages, arch.n_uses, 1.0 / energy.sqrt(), rng)?;
        Ok(System { arch, tx, rx })
    }

    /// Builds the transmitted blocks from data symbols (adds the pilot).
    pub fn frame(&self, data: &SymbolBatch) -> Result<SymbolBatch> {
        if !self.arch.pilot {
            return Ok(data.clone());
        }
        let p = self.tx.norm_target.sqrt();
        let mut head = SymbolBatch::zeros(data.batch(), 1);
        for b in 0..data.batch() {
            head.set(b, 0, p * PILOT.0, p * PILOT.1);
        }
        data.prepend_uses(&head)
    }

    /// Turns channel output into receiver input (pilot equalization).
    pub fn prepare(&self, y: &SymbolBatch, want_jacobian: bool) -> Result<PreparedBlocks> {
        if !self.arch.pilot {
            return Ok(PreparedBlocks {
                y: y.clone(),
                jacobian: None,
            });
        }
        let p = self.tx.norm_target.sqrt();
        let pilot = (p * PILOT.0, p * PILOT.1);
        let data = pilot_equalize(y, pilot)?;
        let jacobian = if want_jacobian {
            // d(y_d / ĥ)/d y_d is multiplication by 1/ĥ.
            let inv: Vec<[f64; 2]> = pilot_estimates(y, pilot)?
                .into_iter()
                .map(|[a, b]| {
                    let s = a * a + b * b;
                    [a / s, -b / s]
                })
                .collect();
            Some(Jacobian::complex_gain(self.arch.n_uses, &inv))
        } else {
            None
        };
        Ok(PreparedBlocks { y: data, jacobian })
    }

    /// Chains `dL/d(receiver input)` back to `dL/d(data symbols)` through
    /// the pilot processing and the channel Jacobian.
    pub fn input_gradient(
        &self,
        channel_jacobian: &Jacobian,
        prepared: &PreparedBlocks,
        dl_dy: &SymbolBatch,
    ) -> Result<SymbolBatch> {
        if !self.arch.pilot {
            return Ok(channel_jacobian.apply_transpose(dl_dy));
        }
        let eq = prepared
            .jacobian
            .as_ref()
            .ok_or_else(|| Error::Invalid("pilot Jacobian was not requested".into()))?;
        let g = eq.apply_transpose(dl_dy);
        let data_jac = channel_jacobian.sub_uses(1, self.arch.n_uses);
        Ok(data_jac.apply_transpose(&g))
    }

    /// Normalized symbols of every message (row `m` for message `m`).
    pub fn constellation(&self) -> Result<SymbolBatch> {
        self.tx.constellation()
    }

    /// Sends `messages` through the channel using the fixed constellation and
    /// returns the receiver's probabilities.
    pub fn probabilities<R: Rng + ?Sized>(
        &self,
        constellation: &SymbolBatch,
        messages: &[usize],
        channel: &ChannelSpec,
        rng: &mut R,
    ) -> Result<Mat> {
        let x = SymbolBatch::new(constellation.as_mat().select_rows(messages))?;
        let framed = self.frame(&x)?;
        let draw = channel.sample(&framed, rng, false)?;
        let prepared = self.prepare(&draw.y, false)?;
        self.rx.predict(&prepared.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pilot_leads_the_block_and_keeps_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arch = Arch {
            pilot: true,
            ..Arch::dense(16, 4)
        };
        let sys = System::new(arch, &ChannelSpec::rbf_at(20.0), &mut rng).unwrap();
        let (x, _) = sys.tx.forward(&[0, 5, 9]).unwrap();
        let framed = sys.frame(&x).unwrap();
        assert_eq!(framed.n_uses(), 5);
        for b in 0..3 {
            assert_eq!((framed.re(b, 0), framed.im(b, 0)), (1.0, 0.0));
        }
        assert!((framed.mean_symbol_energy() - 1.0).abs() < 1e-9);
        let back = sys.prepare(&framed, false).unwrap().y;
        assert!(back.as_mat().max_abs_diff(x.as_mat()) < 1e-12);
    }

    #[test]
    fn transformer_and_pilot_are_exclusive() {
        let arch = Arch {
            pilot: true,
            rx: RxArch::Transformer,
            ..Arch::dense(16, 4)
        };
        assert!(matches!(arch.validate(), Err(Error::Config { .. })));
    }
}
