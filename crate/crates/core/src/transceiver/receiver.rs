use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::SymbolBatch;
use crate::error::{Error, Result};
use crate::numkit::{Activation, Grads, Mat, Mlp, Tape};

/// Receiver network layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RxArch {
    /// `2N` → `M` (ReLU) → `M` (softmax).
    #[default]
    Discriminative,
    /// Transformer network estimating `ĥ`, algebraic equalization, then the
    /// discriminative network.
    Transformer,
    /// `2N` → 64 (ReLU) → 64 (ReLU) → `M` (softmax).
    Fiber,
}

/// Squared-norm floor below which the channel estimate is regularized.
const H_NORM_SQ_FLOOR: f64 = 1e-18;
const H_REG: f64 = 1e-9;

/// Maps received symbols to probability vectors over the messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Receiver {
    pub num_messages: usize,
    pub n_uses: usize,
    /// Sub-network producing `ĥ ∈ R²` per block.
    pub transformer: Option<Mlp>,
    pub discriminative: Mlp,
    /// Fixed gain applied to the received symbols before any layer.
    pub input_scale: f64,
}

#[derive(Debug, Clone)]
pub struct RxTape {
    scaled: SymbolBatch,
    transformer: Option<(Tape, Mat)>,
    discriminative: Tape,
}

impl RxTape {
    /// Channel estimates produced by the transformer, if any.
    pub fn h_hat(&self) -> Option<&Mat> {
        self.transformer.as_ref().map(|(_, h)| h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxGrads {
    pub transformer: Option<Grads>,
    pub discriminative: Grads,
}

impl RxGrads {
    pub fn add_scaled(&mut self, other: &RxGrads, c: f64) -> Result<()> {
        self.discriminative.add_scaled(&other.discriminative, c)?;
        if let (Some(a), Some(b)) = (&mut self.transformer, &other.transformer) {
            a.add_scaled(b, c)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        self.discriminative.scale(c);
        if let Some(t) = &mut self.transformer {
            t.scale(c);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.transformer.as_ref().map(Grads::flatten).unwrap_or_default();
        v.extend(self.discriminative.flatten());
        v
    }
}

/// Per-block equalization `y / ĥ`, i.e. `(1/‖ĥ‖²)·[[ĥ₁I, ĥ₂I], [−ĥ₂I, ĥ₁I]]·y`.
pub fn equalize(y: &SymbolBatch, h: &Mat) -> Result<SymbolBatch> {
    check_h(y, h)?;
    let mut out = y.clone();
    for b in 0..y.batch() {
        let (h1, h2) = (h[(b, 0)], h[(b, 1)]);
        let s = h_norm_sq(h1, h2);
        for k in 0..y.n_uses() {
            let (re, im) = (y.re(b, k), y.im(b, k));
            out.set(b, k, (h1 * re + h2 * im) / s, (-h2 * re + h1 * im) / s);
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through [`equalize`]: returns `(dL/dy, dL/dĥ)`.
pub fn equalize_backward(y: &SymbolBatch, h: &Mat, g: &SymbolBatch) -> Result<(SymbolBatch, Mat)> {
    check_h(y, h)?;
    let mut dy = y.clone();
    let mut dh = Mat::zeros(h.rows(), 2);
    for b in 0..y.batch() {
        let (h1, h2) = (h[(b, 0)], h[(b, 1)]);
        let s = h_norm_sq(h1, h2);
        let (mut d1, mut d2) = (0.0, 0.0);
        for k in 0..y.n_uses() {
            let (a, c) = (y.re(b, k), y.im(b, k));
            let (gr, gi) = (g.re(b, k), g.im(b, k));
            dy.set(b, k, (h1 * gr - h2 * gi) / s, (h2 * gr + h1 * gi) / s);
            let p = h1 * a + h2 * c;
            let q = -h2 * a + h1 * c;
            d1 += gr * (a / s - 2.0 * h1 * p / (s * s)) + gi * (c / s - 2.0 * h1 * q / (s * s));
            d2 += gr * (c / s - 2.0 * h2 * p / (s * s)) + gi * (-a / s - 2.0 * h2 * q / (s * s));
        }
        dh[(b, 0)] = d1;
        dh[(b, 1)] = d2;
    }
    Ok((dy, dh))
}

fn h_norm_sq(h1: f64, h2: f64) -> f64 {
    let s = h1 * h1 + h2 * h2;
    if s < H_NORM_SQ_FLOOR {
        s + H_REG
    } else {
        s
    }
}

fn check_h(y: &SymbolBatch, h: &Mat) -> Result<()> {
    if h.shape() != (y.batch(), 2) {
        return Err(Error::shape(
            "equalize channel estimate",
            format!("({}, 2)", y.batch()),
            format!("{:?}", h.shape()),
        ));
    }
    Ok(())
}

impl Receiver {
    pub fn new<R: Rng + ?Sized>(
        arch: RxArch,
        num_messages: usize,
        n_uses: usize,
        input_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, w) = (num_messages, 2 * n_uses);
        let discriminative = match arch {
            RxArch::Fiber => Mlp::new(
                &[w, 64, 64, m],
                &[Activation::Relu, Activation::Relu, Activation::Softmax],
                rng,
            )?,
            _ => Mlp::new(&[w, m, m], &[Activation::Relu, Activation::Softmax], rng)?,
        };
        let transformer = match arch {
            RxArch::Transformer => {
                let mut net = Mlp::new(&[w, 2 * m, 2], &[Activation::Relu, Activation::Linear], rng)?;
                // Start near the identity transform ĥ = (1, 0).
                net.layers_mut()[1].b[(0, 0)] = 1.0;
                Some(net)
            }
            _ => None,
        };
        Ok(Receiver {
            num_messages,
            n_uses,
            transformer,
            discriminative,
            input_scale,
        })
    }

    fn scaled(&self, y: &SymbolBatch) -> Result<SymbolBatch> {
        if y.n_uses() != self.n_uses {
            return Err(Error::shape("Receiver input uses", self.n_uses, y.n_uses()));
        }
        let mut s = y.clone();
        if self.input_scale != 1.0 {
            s.as_mat_mut().scale(self.input_scale);
        }
        Ok(s)
    }

    /// Runs the transformer network and equalizes `y` with its estimate.
    pub fn transformer_equalize(&self, y: &SymbolBatch) -> Result<(SymbolBatch, Mat, Tape)> {
        let net = self
            .transformer
            .as_ref()
            .ok_or_else(|| Error::Invalid("receiver has no transformer network".into()))?;
        let (h, tape) = net.forward(y.as_mat())?;
        let eq = equalize(y, &h)?;
        Ok((eq, h, tape))
    }

    pub fn forward(&self, y: &SymbolBatch) -> Result<(Mat, RxTape)> {
        let scaled = self.scaled(y)?;
        let (disc_in, transformer) = match &self.transformer {
            Some(_) => {
                let (eq, h, tape) = self.transformer_equalize(&scaled)?;
                (eq, Some((tape, h)))
            }
            None => (scaled.clone(), None),
        };
        let (p, discriminative) = self.discriminative.forward(disc_in.as_mat())?;
        Ok((
            p,
            RxTape {
                scaled,
                transformer,
                discriminative,
            },
        ))
    }

    /// Probabilities without keeping a tape.
    pub fn predict(&self, y: &SymbolBatch) -> Result<Mat> {
        let scaled = self.scaled(y)?;
        match &self.transformer {
            Some(net) => {
                let h = net.predict(scaled.as_mat())?;
                let eq = equalize(&scaled, &h)?;
                self.discriminative.predict(eq.as_mat())
            }
            None => self.discriminative.predict(scaled.as_mat()),
        }
    }

    /// Backpropagates `dL/dP`. The input gradient `dL/dy` is only computed
    /// when `want_input_grad` is set.
    pub fn backward(
        &self,
        tape: &RxTape,
        dl_dp: &Mat,
        want_input_grad: bool,
    ) -> Result<(RxGrads, Option<SymbolBatch>)> {
        let need_disc_dx = want_input_grad || self.transformer.is_some();
        let (disc_grads, d_in) = if need_disc_dx {
            let (g, dx) = self.discriminative.backward(&tape.discriminative, dl_dp)?;
            (g, Some(dx))
        } else {
            (self.discriminative.backward_params(&tape.discriminative, dl_dp)?, None)
        };
        let (transformer, dy) = match (&self.transformer, &tape.transformer) {
            (Some(net), Some((ttape, h))) => {
                let g_eq = SymbolBatch::new(d_in.expect("computed above"))?;
                let (dy_direct, dh) = equalize_backward(&tape.scaled, h, &g_eq)?;
                if want_input_grad {
                    let (tg, dy_t) = net.backward(ttape, &dh)?;
                    let mut dy = dy_direct.into_mat();
                    dy.add_scaled(&dy_t, 1.0)?;
                    (Some(tg), Some(dy))
                } else {
                    (Some(net.backward_params(ttape, &dh)?), None)
                }
            }
            (None, None) => (None, d_in),
            _ => return Err(Error::Invalid("receiver tape does not match receiver layout".into())),
        };
        let dy = match dy {
            Some(mut d) if want_input_grad => {
                if self.input_scale != 1.0 {
                    d.scale(self.input_scale);
                }
                Some(SymbolBatch::new(d)?)
            }
            _ => None,
        };
        Ok((
            RxGrads {
                transformer,
                discriminative: disc_grads,
            },
            dy,
        ))
    }
}
