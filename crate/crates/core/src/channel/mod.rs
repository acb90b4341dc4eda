//! Stochastic channel simulators.
//!
//! Every channel can be sampled (the model-free path). AWGN and Rayleigh block
//! fading also report the input Jacobian of the noiseless part of the draw so
//! that a model-aware trainer can backpropagate through them. The fiber model
//! reports one only when built with `differentiable = true`.

mod batch;
mod fiber;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use batch::SymbolBatch;
pub use fiber::fiber;

use crate::error::{Error, Result};
use crate::numkit::Mat;

/// Per-real-dimension noise standard deviation for a given SNR in dB, under
/// unit average energy per complex symbol: SNR = 1 / (2σ²).
pub fn snr_to_noise_std(snr_db: f64) -> f64 {
    (1.0 / (2.0 * db_to_linear(snr_db))).sqrt()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

mod fiber_defaults {
    pub fn length_km() -> f64 {
        5000.0
    }
    pub fn gamma() -> f64 {
        1.27
    }
    pub fn steps() -> usize {
        50
    }
}

/// Description of a channel and its noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelSpec {
    /// `y = x + n`, `n ~ N(0, noise_std²)` per real component.
    Awgn {
        #[serde(default)]
        noise_std: f64,
    },
    /// Rayleigh block fading: one `h ~ CN(0, 1)` per block, `y = h·x + n`.
    Rbf {
        #[serde(default)]
        noise_std: f64,
    },
    /// Dispersion-free nonlinear fiber, `steps` split-step segments.
    /// `noise_std²` is the total complex noise power per symbol.
    Fiber {
        #[serde(default = "fiber_defaults::length_km")]
        length_km: f64,
        /// Nonlinearity coefficient in 1/(W·km).
        #[serde(default = "fiber_defaults::gamma")]
        gamma: f64,
        #[serde(default = "fiber_defaults::steps")]
        steps: usize,
        #[serde(default)]
        noise_std: f64,
        /// Average launch power per complex symbol, in W.
        power_in: f64,
        #[serde(default)]
        differentiable: bool,
    },
}

impl ChannelSpec {
    pub fn awgn_at(snr_db: f64) -> Self {
        ChannelSpec::Awgn {
            noise_std: snr_to_noise_std(snr_db),
        }
    }

    pub fn rbf_at(snr_db: f64) -> Self {
        ChannelSpec::Rbf {
            noise_std: snr_to_noise_std(snr_db),
        }
    }

    /// Fiber with the reference link constants (5000 km, γ = 1.27, 50 steps).
    pub fn fiber_at(snr_db: f64, power_in: f64) -> Self {
        ChannelSpec::Fiber {
            length_km: fiber_defaults::length_km(),
            gamma: fiber_defaults::gamma(),
            steps: fiber_defaults::steps(),
            noise_std: 0.0,
            power_in,
            differentiable: false,
        }
        .with_snr_db(snr_db)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelSpec::Awgn { .. } => "awgn",
            ChannelSpec::Rbf { .. } => "rbf",
            ChannelSpec::Fiber { .. } => "fiber",
        }
    }

    pub fn noise_std(&self) -> f64 {
        match *self {
            ChannelSpec::Awgn { noise_std } | ChannelSpec::Rbf { noise_std } => noise_std,
            ChannelSpec::Fiber { noise_std, .. } => noise_std,
        }
    }

    /// Average energy per complex symbol the transmitter must produce.
    pub fn symbol_energy(&self) -> f64 {
        match *self {
            ChannelSpec::Fiber { power_in, .. } => power_in,
            _ => 1.0,
        }
    }

    /// Same channel with the noise level set for `snr_db`. For fiber the SNR
    /// is `power_in / noise_std²`.
    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ChannelSpec::Awgn { noise_std } | ChannelSpec::Rbf { noise_std } => {
                *noise_std = snr_to_noise_std(snr_db)
            }
            ChannelSpec::Fiber {
                noise_std, power_in, ..
            } => *noise_std = (*power_in / db_to_linear(snr_db)).sqrt(),
        }
        out
    }

    pub fn is_differentiable(&self) -> bool {
        match *self {
            ChannelSpec::Fiber { differentiable, .. } => differentiable,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("channel", m));
        if !(self.noise_std() >= 0.0 && self.noise_std().is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        if let ChannelSpec::Fiber {
            steps,
            power_in,
            length_km,
            gamma,
            ..
        } = *self
        {
            if steps < 1 {
                return bad("fiber needs steps >= 1");
            }
            if !(power_in > 0.0 && power_in.is_finite()) {
                return bad("fiber needs power_in > 0");
            }
            if !(length_km.is_finite() && gamma.is_finite()) {
                return bad("fiber length and gamma must be finite");
            }
        }
        Ok(())
    }

    /// Passes `x` through the channel. A Jacobian is attached when
    /// `want_jacobian` is set; asking a sample-only channel for one is an error.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        x: &SymbolBatch,
        rng: &mut R,
        want_jacobian: bool,
    ) -> Result<ChannelDraw> {
        if want_jacobian && !self.is_differentiable() {
            return Err(Error::MissingJacobian(self.name()));
        }
        Ok(match *self {
            ChannelSpec::Awgn { noise_std } => awgn(x, noise_std, rng, want_jacobian),
            ChannelSpec::Rbf { noise_std } => rbf(x, noise_std, rng, want_jacobian),
            ChannelSpec::Fiber { .. } => fiber(x, self, rng, want_jacobian)?,
        })
    }
}

/// Input Jacobian of one channel draw, stored as a real 2×2 block
/// `[[∂re/∂re, ∂re/∂im], [∂im/∂re, ∂im/∂im]]` per (block, channel use).
/// None of the supported channels couple distinct channel uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    n_uses: usize,
    blocks: Vec<[f64; 4]>,
}

impl Jacobian {
    pub fn identity(batch: usize, n_uses: usize) -> Self {
        Jacobian {
            n_uses,
            blocks: vec![[1.0, 0.0, 0.0, 1.0]; batch * n_uses],
        }
    }

    pub(crate) fn from_blocks(n_uses: usize, blocks: Vec<[f64; 4]>) -> Self {
        Jacobian { n_uses, blocks }
    }

    /// Jacobian of multiplication by a complex gain `h` per block.
    pub fn complex_gain(n_uses: usize, gains: &[[f64; 2]]) -> Self {
        let blocks = gains
            .iter()
            .flat_map(|&[h1, h2]| std::iter::repeat_n([h1, -h2, h2, h1], n_uses))
            .collect();
        Jacobian { n_uses, blocks }
    }

    /// Restriction to channel uses `from..from+len` of every block.
    pub fn sub_uses(&self, from: usize, len: usize) -> Self {
        assert!(from + len <= self.n_uses, "use range out of bounds");
        let blocks = self
            .blocks
            .chunks(self.n_uses)
            .flat_map(|b| b[from..from + len].iter().copied())
            .collect();
        Jacobian { n_uses: len, blocks }
    }

    #[inline]
    pub fn entry(&self, block: usize, k: usize) -> [f64; 4] {
        self.blocks[block * self.n_uses + k]
    }

    /// Dense `2N × 2N` Jacobian of one block in the real-then-imaginary layout.
    pub fn block_matrix(&self, block: usize) -> Mat {
        let n = self.n_uses;
        let mut m = Mat::zeros(2 * n, 2 * n);
        for k in 0..n {
            let [a, b, c, d] = self.entry(block, k);
            m[(k, k)] = a;
            m[(k, n + k)] = b;
            m[(n + k, k)] = c;
            m[(n + k, n + k)] = d;
        }
        m
    }

    /// `J · x` per block.
    pub fn apply(&self, x: &SymbolBatch) -> SymbolBatch {
        self.map(x, |[a, b, c, d], re, im| (a * re + b * im, c * re + d * im))
    }

    /// `Jᵀ · g` per block: the vector-Jacobian product used by backprop.
    pub fn apply_transpose(&self, g: &SymbolBatch) -> SymbolBatch {
        self.map(g, |[a, b, c, d], re, im| (a * re + c * im, b * re + d * im))
    }

    fn map(&self, x: &SymbolBatch, f: impl Fn([f64; 4], f64, f64) -> (f64, f64)) -> SymbolBatch {
        assert_eq!(x.n_uses(), self.n_uses, "Jacobian width mismatch");
        assert_eq!(x.batch() * self.n_uses, self.blocks.len(), "Jacobian batch mismatch");
        let mut out = x.clone();
        for b in 0..x.batch() {
            for k in 0..self.n_uses {
                let (re, im) = f(self.entry(b, k), x.re(b, k), x.im(b, k));
                out.set(b, k, re, im);
            }
        }
        out
    }
}

/// Result of one channel pass.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub y: SymbolBatch,
    /// Fading coefficient `(h₁, h₂)` per block, RBF only.
    pub fading: Option<Vec<[f64; 2]>>,
    pub jacobian: Option<Jacobian>,
}

pub fn awgn<R: Rng + ?Sized>(
    x: &SymbolBatch,
    noise_std: f64,
    rng: &mut R,
    want_jacobian: bool,
) -> ChannelDraw {
    let mut y = x.clone();
    add_noise(&mut y, noise_std, rng);
    ChannelDraw {
        y,
        fading: None,
        jacobian: want_jacobian.then(|| Jacobian::identity(x.batch(), x.n_uses())),
    }
}

pub fn rbf<R: Rng + ?Sized>(
    x: &SymbolBatch,
    noise_std: f64,
    rng: &mut R,
    want_jacobian: bool,
) -> ChannelDraw {
    let s = 0.5f64.sqrt();
    let gains: Vec<[f64; 2]> = (0..x.batch())
        .map(|_| {
            let h1: f64 = rng.sample(StandardNormal);
            let h2: f64 = rng.sample(StandardNormal);
            [s * h1, s * h2]
        })
        .collect();
    rbf_with_fading(x, &gains, noise_std, rng, want_jacobian)
}

/// RBF pass with caller-supplied fading coefficients.
pub fn rbf_with_fading<R: Rng + ?Sized>(
    x: &SymbolBatch,
    gains: &[[f64; 2]],
    noise_std: f64,
    rng: &mut R,
    want_jacobian: bool,
) -> ChannelDraw {
    assert_eq!(gains.len(), x.batch(), "one fading coefficient per block");
    let mut y = x.clone();
    for (b, &[h1, h2]) in gains.iter().enumerate() {
        for k in 0..x.n_uses() {
            let (re, im) = (x.re(b, k), x.im(b, k));
            y.set(b, k, h1 * re - h2 * im, h2 * re + h1 * im);
        }
    }
    add_noise(&mut y, noise_std, rng);
    ChannelDraw {
        y,
        jacobian: want_jacobian.then(|| Jacobian::complex_gain(x.n_uses(), gains)),
        fading: Some(gains.to_vec()),
    }
}

fn add_noise<R: Rng + ?Sized>(y: &mut SymbolBatch, noise_std: f64, rng: &mut R) {
    if noise_std == 0.0 {
        return;
    }
    for v in y.as_mat_mut().data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += noise_std * n;
    }
}

/// Perturbs per-example losses as they would arrive over a noisy feedback
/// link: `l + e`, `e ~ N(0, mean(l²) / SNR_fb)`. An infinite SNR returns the
/// losses untouched without consuming randomness.
pub fn noisy_feedback<R: Rng + ?Sized>(
    losses: &[f64],
    snr_fb_db: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if snr_fb_db == f64::INFINITY {
        return Ok(losses.to_vec());
    }
    if snr_fb_db.is_nan() {
        return Err(Error::Invalid("feedback SNR is NaN".into()));
    }
    let power = losses.iter().map(|l| l * l).sum::<f64>() / losses.len() as f64;
    let std = (power / db_to_linear(snr_fb_db)).sqrt();
    Ok(losses
        .iter()
        .map(|&l| {
            let e: f64 = rng.sample(StandardNormal);
            l + std * e
        })
        .collect())
}
