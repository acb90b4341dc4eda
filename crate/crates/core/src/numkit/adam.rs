use super::mlp::{Grads, Mlp};
use crate::error::{Error, Result};

/// Adam optimizer state for one [`Mlp`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Grads,
    v: Grads,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        AdamState {
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients before touching
/// any parameter.
pub fn adam_update(net: &mut Mlp, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers().len() || state.m.layers.len() != net.layers().len() {
        return Err(Error::shape("adam_update layers", net.layers().len(), grads.layers.len()));
    }
    for (i, ((gw, gb), l)) in grads.layers.iter().zip(net.layers()).enumerate() {
        if gw.shape() != l.w.shape() || gb.shape() != l.b.shape() {
            return Err(Error::shape(
                "adam_update gradient",
                format!("{:?}", l.w.shape()),
                format!("{:?}", gw.shape()),
            ));
        }
        if !gw.is_finite() || !gb.is_finite() {
            return Err(Error::NonFiniteGradient { layer: i });
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let step = state.lr * (1.0 - b2.powf(t)).sqrt() / (1.0 - b1.powf(t));
    let eps_hat = state.eps * (1.0 - b2.powf(t)).sqrt();
    let layers = net.layers_mut();
    for (l, layer) in layers.iter_mut().enumerate() {
        let (mw, mb) = &mut state.m.layers[l];
        let (vw, vb) = &mut state.v.layers[l];
        let (gw, gb) = &grads.layers[l];
        for (p, m, v, g) in [
            (layer.w.data_mut(), mw.data_mut(), vw.data_mut(), gw.data()),
            (layer.b.data_mut(), mb.data_mut(), vb.data_mut(), gb.data()),
        ] {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
    Ok(())
}
