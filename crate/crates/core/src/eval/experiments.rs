use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{estimate_bler, BlerPoint, EvalConfig};
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::numkit::{dot, Activation, Grads, Mat, Mlp};
use crate::train::{aware_grad_estimate, alternating_train, random_messages, tx_grad_estimate, TrainConfig};
use crate::transceiver::{Arch, Perturbation, Policy, System};

/// Agreement between the score-function estimate and the exact transmitter
/// gradient at one exploration level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Row {
    pub sigma: f64,
    pub cosine: f64,
    /// Jackknife standard error of `cosine` over the batch chunks.
    pub cosine_se: f64,
    /// `‖estimate‖ / ‖exact‖`.
    pub norm_ratio: f64,
}

/// Settings of [`theorem1_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Config {
    /// Total examples per estimate.
    pub batch: usize,
    /// The batch is processed in this many equal chunks.
    pub chunks: usize,
    pub perturbation: Perturbation,
    pub baseline_subtract: bool,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            batch: 100_000,
            chunks: 20,
            perturbation: Perturbation::Conserving,
            baseline_subtract: false,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn mean_of(rows: &[Vec<f64>], skip: Option<usize>) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    let mut n = 0.0;
    for (i, r) in rows.iter().enumerate() {
        if Some(i) != skip {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
            n += 1.0;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// For fixed parameters, compares the exact model-aware transmitter
/// gradient with the mean score-function estimate at each `sigma`.
/// The channel must be differentiable.
pub fn theorem1_check(
    system: &System,
    channel: &ChannelSpec,
    sigmas: &[f64],
    cfg: &Theorem1Config,
    seed: u64,
) -> Result<Vec<Theorem1Row>> {
    if !channel.is_differentiable() {
        return Err(Error::MissingJacobian(channel.name()));
    }
    if cfg.chunks < 2 || cfg.batch < cfg.chunks {
        return Err(Error::Invalid("theorem1 needs at least 2 chunks of >= 1 example".into()));
    }
    let per_chunk = cfg.batch / cfg.chunks;
    let m = system.arch.num_messages;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exact = Grads::zeros_like(&system.tx.net);
    for _ in 0..cfg.chunks {
        let msgs = random_messages(&mut rng, m, per_chunk);
        let g = aware_grad_estimate(system, channel, &msgs, &mut rng)?;
        exact.add_scaled(&g.tx, 1.0 / cfg.chunks as f64)?;
    }
    let exact = exact.flatten();
    let exact_norm = dot(&exact, &exact).sqrt();
    sigmas
        .iter()
        .map(|&sigma| {
            let policy = Policy::with_energy(sigma, system.tx.norm_target, cfg.perturbation)?;
            let chunks = (0..cfg.chunks)
                .map(|_| {
                    let msgs = random_messages(&mut rng, m, per_chunk);
                    let (g, _) =
                        tx_grad_estimate(system, channel, &policy, &msgs, &mut rng, None, cfg.baseline_subtract)?;
                    Ok(g.flatten())
                })
                .collect::<Result<Vec<_>>>()?;
            let est = mean_of(&chunks, None);
            let cos = cosine(&est, &exact);
            let k = cfg.chunks as f64;
            let loo: Vec<f64> = (0..cfg.chunks).map(|i| cosine(&mean_of(&chunks, Some(i)), &exact)).collect();
            let loo_mean = loo.iter().sum::<f64>() / k;
            let se = ((k - 1.0) / k * loo.iter().map(|c| (c - loo_mean).powi(2)).sum::<f64>()).sqrt();
            Ok(Theorem1Row {
                sigma,
                cosine: cos,
                cosine_se: se,
                norm_ratio: dot(&est, &est).sqrt() / exact_norm,
            })
        })
        .collect()
}

pub fn theorem1_csv(rows: &[Theorem1Row]) -> String {
    let mut out = String::from("sigma,cosine,cosine_se,norm_ratio\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", r.sigma, r.cosine, r.cosine_se, r.norm_ratio);
    }
    out
}

/// Estimator variances for one hidden-layer width of the toy regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRecord {
    pub m: usize,
    pub params: usize,
    pub var_spsa: f64,
    pub var_score: f64,
}

/// Settings of [`variance_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceConfig {
    pub batch: usize,
    pub inits: usize,
    pub sigma: f64,
    /// SPSA perturbation size.
    pub spsa_c: f64,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            batch: 1000,
            inits: 1000,
            sigma: 0.1,
            spsa_c: 0.1,
        }
    }
}

/// Running per-coordinate mean and variance.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sum over coordinates of the unbiased sample variance.
    fn total_variance(&self) -> f64 {
        self.m2.iter().sum::<f64>() / (self.n - 1.0)
    }
}

fn regression_loss(net: &Mlp, a: &Mat, target: &[f64]) -> Result<f64> {
    let y = net.predict(a)?;
    Ok(y.data().iter().zip(target).map(|(f, t)| (f - t).powi(2)).sum::<f64>() / target.len() as f64)
}

/// Gradient-estimator variance on the regression `a ↦ a²`, `a ~ U[0, 1]`,
/// with a `1 → m (ReLU) → 1` network, measured at random initialization.
///
/// For every init, one SPSA substitute and one score-function estimate
/// (Gaussian relaxation of the network output) are drawn from the same
/// batch. The reported variance is the across-init variance summed over
/// all `3m + 1` coordinates.
pub fn variance_experiment(ms: &[usize], cfg: &VarianceConfig, seed: u64) -> Result<Vec<VarianceRecord>> {
    if ms.contains(&0) || cfg.batch == 0 || cfg.inits < 2 {
        return Err(Error::Invalid("variance experiment needs m >= 1, batch >= 1, inits >= 2".into()));
    }
    if !(cfg.sigma > 0.0 && cfg.spsa_c > 0.0) {
        return Err(Error::Invalid("sigma and spsa_c must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.batch as f64;
    ms.iter()
        .map(|&m| {
            let mut spsa = Welford::new(3 * m + 1);
            let mut score = Welford::new(3 * m + 1);
            for _ in 0..cfg.inits {
                let net = Mlp::new(&[1, m, 1], &[Activation::Relu, Activation::Linear], &mut rng)?;
                let a: Vec<f64> = (0..cfg.batch).map(|_| rng.random::<f64>()).collect();
                let target: Vec<f64> = a.iter().map(|v| v * v).collect();
                let a = Mat::from_vec(cfg.batch, 1, a)?;

                let theta = net.params_flat();
                let delta: Vec<f64> = (0..theta.len())
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let mut probe = net.clone();
                let mut eval = |sign: f64| -> Result<f64> {
                    let t: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + sign * cfg.spsa_c * d).collect();
                    probe.set_params_flat(&t)?;
                    regression_loss(&probe, &a, &target)
                };
                let q = (eval(1.0)? - eval(-1.0)?) / (2.0 * cfg.spsa_c);
                let g: Vec<f64> = delta.iter().map(|d| q * d).collect();
                spsa.push(&g);

                let (f, tape) = net.forward(&a)?;
                let mut dl_df = Mat::zeros(cfg.batch, 1);
                for i in 0..cfg.batch {
                    let z: f64 = rng.sample(StandardNormal);
                    let w = cfg.sigma * z;
                    let l = (f[(i, 0)] + w - target[i]).powi(2);
                    dl_df[(i, 0)] = l * w / (cfg.sigma * cfg.sigma) / s;
                }
                score.push(&net.backward_params(&tape, &dl_df)?.flatten());
            }
            Ok(VarianceRecord {
                m,
                params: 3 * m + 1,
                var_spsa: spsa.total_variance(),
                var_score: score.total_variance(),
            })
        })
        .collect()
}

pub fn variance_csv(rows: &[VarianceRecord]) -> String {
    let mut out = String::from("m,params,var_spsa,var_score\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e},{:e}", r.m, r.params, r.var_spsa, r.var_score);
    }
    out
}

/// Final error rate of a system trained with one feedback-link SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackRow {
    /// `f64::INFINITY` for a noiseless feedback link.
    pub snr_fb_db: f64,
    pub point: BlerPoint,
}

/// Trains one system per feedback SNR, all from the same seed, and
/// evaluates each at the training SNR.
pub fn feedback_sweep(
    cfg: &TrainConfig,
    arch: Arch,
    channel: &ChannelSpec,
    snr_fbs: &[f64],
    eval: &EvalConfig,
    eval_seed: u64,
) -> Result<Vec<FeedbackRow>> {
    if snr_fbs.is_empty() {
        return Err(Error::Invalid("empty feedback SNR list".into()));
    }
    let eval_channel = channel.with_snr_db(cfg.train_snr_db);
    snr_fbs
        .iter()
        .map(|&snr_fb| {
            let cfg = TrainConfig {
                snr_fb_db: snr_fb.is_finite().then_some(snr_fb),
                ..cfg.clone()
            };
            let (system, _) = alternating_train(&cfg, arch, channel)?;
            let point = estimate_bler(&system, &eval_channel, cfg.train_snr_db, eval, eval_seed)?;
            Ok(FeedbackRow { snr_fb_db: snr_fb, point })
        })
        .collect()
}

pub fn feedback_csv(rows: &[FeedbackRow]) -> String {
    let mut out = String::from("snr_fb_db,bler,blocks,errors,ci95\n");
    for r in rows {
        let p = r.point;
        let _ = writeln!(out, "{},{:e},{},{},{:e}", r.snr_fb_db, p.rate, p.blocks, p.errors, p.ci95);
    }
    out
}
