use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::SymbolBatch;
use crate::error::{Error, Result};
use crate::numkit::Mat;

/// Variance convention of the exploration noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// σ²/2 per real component, σ² per complex symbol: the relaxed symbols
    /// keep the average energy of the unrelaxed ones.
    #[default]
    Conserving,
    /// σ² per real component.
    PerComponent,
}

/// Gaussian relaxation of the transmitter output:
/// `x = √(1−σ²)·x̄ + w`, with `w` zero-mean Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    sigma: f64,
    /// Average symbol energy the exploration noise is scaled to.
    energy: f64,
    perturbation: Perturbation,
}

impl Policy {
    pub fn new(sigma: f64) -> Result<Self> {
        Policy::with_energy(sigma, 1.0, Perturbation::Conserving)
    }

    pub fn with_energy(sigma: f64, energy: f64, perturbation: Perturbation) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::DegeneratePolicy(sigma));
        }
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::Invalid(format!("policy energy must be positive, got {energy}")));
        }
        Ok(Policy {
            sigma,
            energy,
            perturbation,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean_scale(&self) -> f64 {
        (1.0 - self.sigma * self.sigma).sqrt()
    }

    pub fn var_per_component(&self) -> f64 {
        let s2 = self.sigma * self.sigma * self.energy;
        match self.perturbation {
            Perturbation::Conserving => s2 / 2.0,
            Perturbation::PerComponent => s2,
        }
    }

    /// Draws relaxed symbols around `x_bar`. Returns the symbols and the
    /// perturbation that was added.
    pub fn sample<R: Rng + ?Sized>(&self, x_bar: &SymbolBatch, rng: &mut R) -> (SymbolBatch, Mat) {
        let a = self.mean_scale();
        let std = self.var_per_component().sqrt();
        let mut x = x_bar.clone();
        let mut w = Mat::zeros(x_bar.batch(), 2 * x_bar.n_uses());
        for (xv, wv) in x.as_mat_mut().data_mut().iter_mut().zip(w.data_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *wv = std * z;
            *xv = a * *xv + *wv;
        }
        (x, w)
    }

    /// Gradient of `ln π(x | x̄)` with respect to `x̄`, one row per example:
    /// `a·(x − a·x̄)/v`.
    pub fn score(&self, x_bar: &SymbolBatch, x: &SymbolBatch) -> Result<Mat> {
        if x_bar.as_mat().shape() != x.as_mat().shape() {
            return Err(Error::shape(
                "Policy::score",
                format!("{:?}", x_bar.as_mat().shape()),
                format!("{:?}", x.as_mat().shape()),
            ));
        }
        let a = self.mean_scale();
        let v = self.var_per_component();
        let data = x_bar
            .as_mat()
            .data()
            .iter()
            .zip(x.as_mat().data())
            .map(|(&xb, &xv)| a * (xv - a * xb) / v)
            .collect();
        Mat::from_vec(x.batch(), 2 * x.n_uses(), data)
    }
}
