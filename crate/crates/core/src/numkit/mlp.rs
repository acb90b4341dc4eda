use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::{axpy, dot, Mat};
use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    /// ELU with α = 1.
    Elu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut Mat) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Elu => z.data_mut().iter_mut().for_each(|v| {
                if *v <= 0.0 {
                    *v = v.exp_m1();
                }
            }),
            Activation::Tanh => z.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => z
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Softmax => {
                let cols = z.cols();
                for row in z.data_mut().chunks_exact_mut(cols.max(1)) {
                    softmax_in_place(row);
                }
            }
        }
    }

    /// Turns `grad` (w.r.t. the activation output `out`) into the gradient
    /// w.r.t. the pre-activation.
    fn backprop(self, out: &Mat, grad: &mut Mat) {
        let g = grad.data_mut();
        let a = out.data();
        match self {
            Activation::Linear => {}
            Activation::Relu => g.iter_mut().zip(a).for_each(|(g, &a)| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }),
            // For z <= 0, d/dz (e^z - 1) = e^z = a + 1.
            Activation::Elu => g.iter_mut().zip(a).for_each(|(g, &a)| {
                if a <= 0.0 {
                    *g *= a + 1.0;
                }
            }),
            Activation::Tanh => g.iter_mut().zip(a).for_each(|(g, &a)| *g *= 1.0 - a * a),
            Activation::Sigmoid => g.iter_mut().zip(a).for_each(|(g, &a)| *g *= a * (1.0 - a)),
            Activation::Softmax => {
                let cols = out.cols();
                for (gr, ar) in g.chunks_exact_mut(cols).zip(a.chunks_exact(cols)) {
                    let s = dot(gr, ar);
                    gr.iter_mut().zip(ar).for_each(|(g, &a)| *g = a * (*g - s));
                }
            }
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Dense layer `y = act(x·W + b)` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Mat,
    pub b: Mat,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }
}

/// Uniform Glorot initialization on ±√(6/(fan_in + fan_out)).
pub fn init_glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Mat::from_vec(fan_in, fan_out, data).expect("length matches by construction")
}

/// Feedforward network of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations cached by [`Mlp::forward`] for a later [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input of every layer; the input of layer `l + 1` is the output of layer `l`.
    inputs: Vec<Mat>,
    output: Mat,
}

impl Tape {
    pub fn output(&self) -> &Mat {
        &self.output
    }

    pub fn input(&self) -> &Mat {
        &self.inputs[0]
    }
}

/// Gradients of a scalar loss, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<(Mat, Mat)>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows(), l.w.cols()), Mat::zeros(1, l.b.cols())))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, c: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("Grads::add_scaled", self.layers.len(), other.layers.len()));
        }
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.add_scaled(ow, c)?;
            b.add_scaled(ob, c)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            w.scale(c);
            b.scale(c);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Inverse of [`Grads::flatten`] using `net` for the layout.
    pub fn from_flat(net: &Mlp, flat: &[f64]) -> Result<Self> {
        if flat.len() != net.num_params() {
            return Err(Error::shape("Grads::from_flat", net.num_params(), flat.len()));
        }
        let mut g = Grads::zeros_like(net);
        let mut at = 0;
        for (w, b) in &mut g.layers {
            let n = w.data().len();
            w.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = b.data().len();
            b.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(g)
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.data().iter().chain(b.data()).all(|&v| v == 0.0))
    }
}

impl Mlp {
    /// Builds a network with layer widths `sizes[0] → sizes[1] → …`, one
    /// activation per layer, Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Invalid(format!(
                "{} widths need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Invalid("layer widths must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                w: init_glorot(w[0], w[1], rng),
                b: Mat::zeros(1, w[1]),
                activation,
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.shape() != (1, l.w.cols()) {
                return Err(Error::shape("Mlp bias", format!("1x{}", l.w.cols()), format!("{:?}", l.b.shape())));
            }
            if i + 1 < layers.len() {
                if l.activation == Activation::Softmax {
                    return Err(Error::Invalid("softmax is only allowed as the final activation".into()));
                }
                if layers[i + 1].w.rows() != l.w.cols() {
                    return Err(Error::shape("Mlp layer chain", l.w.cols(), layers[i + 1].w.rows()));
                }
            }
            if !l.w.is_finite() || !l.b.is_finite() {
                return Err(Error::NonFiniteGradient { layer: i });
            }
        }
        Ok(Mlp {
            layers,
            version: next_version(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the parameters; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version = next_version();
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.data().len() + l.b.data().len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(l.b.data());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("Mlp::set_params_flat", self.num_params(), flat.len()));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let n = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.b.data().len();
            l.b.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(Error::shape("Mlp::forward input width", self.input_width(), x.cols()));
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, x: &Mat) -> Mat {
        let mut z = x.matmul(&layer.w).expect("widths checked");
        for row in z.data_mut().chunks_exact_mut(layer.fan_out()) {
            axpy(1.0, layer.b.data(), row);
        }
        layer.activation.apply(&mut z);
        z
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let mut cur = Mlp::layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            cur = Mlp::layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = Mlp::layer_forward(layer, &cur);
            inputs.push(cur);
            cur = next;
        }
        let tape = Tape {
            version: self.version,
            inputs,
            output: cur.clone(),
        };
        Ok((cur, tape))
    }

    /// Backpropagates `dl_dy` (gradient of a scalar loss w.r.t. the network
    /// output) and returns parameter gradients and the input gradient.
    pub fn backward(&self, tape: &Tape, dl_dy: &Mat) -> Result<(Grads, Mat)> {
        let (g, dx) = self.backward_impl(tape, dl_dy, true)?;
        Ok((g, dx.expect("requested")))
    }

    /// Like [`Mlp::backward`] but skips the input gradient.
    pub fn backward_params(&self, tape: &Tape, dl_dy: &Mat) -> Result<Grads> {
        Ok(self.backward_impl(tape, dl_dy, false)?.0)
    }

    fn backward_impl(&self, tape: &Tape, dl_dy: &Mat, want_dx: bool) -> Result<(Grads, Option<Mat>)> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape {
                tape: tape.version,
                net: self.version,
            });
        }
        if dl_dy.shape() != tape.output.shape() {
            return Err(Error::shape(
                "Mlp::backward dL/dy",
                format!("{:?}", tape.output.shape()),
                format!("{:?}", dl_dy.shape()),
            ));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut g = dl_dy.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let out = if l + 1 < n { &tape.inputs[l + 1] } else { &tape.output };
            layer.activation.backprop(out, &mut g);
            let x = &tape.inputs[l];
            let dw = x.t_matmul(&g)?;
            let db = g.col_sums();
            grads.push((dw, db));
            if l > 0 || want_dx {
                g = g.matmul_t(&layer.w)?;
            }
        }
        grads.reverse();
        Ok((Grads { layers: grads }, want_dx.then_some(g)))
    }
}
