mod common;

use common::rng;
use modelfree::baseline::{analytic_qpsk_bler, ml_detect, Constellation};
use modelfree::channel::{ChannelSpec, SymbolBatch};
use modelfree::eval::{estimate_bler, wilson_interval, EvalConfig, Link, QpskLink};
use modelfree::numkit::Mat;
use modelfree::train::{
    random_messages, rx_grad_estimate, spsa_grad, train_receiver_phase, train_transmitter_phase,
    tx_grad_estimate, TrainConfig, TrainState,
};
use modelfree::transceiver::{Arch, Policy, System};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rbf_output_covariance_matches_closed_form() {
    // For fixed x, Cov[y] = ½(x xᵀ + J x xᵀ Jᵀ) + σ²I with J the 90° rotation,
    // since h = h₁ + j h₂ with h₁, h₂ ~ N(0, ½).
    let x = [0.8, -0.3];
    let sigma = 0.2;
    let n = 400_000;
    let xb = SymbolBatch::new(Mat::from_vec(n, 2, x.repeat(n)).unwrap()).unwrap();
    let ch = ChannelSpec::Rbf { noise_std: sigma };
    let y = ch.sample(&xb, &mut rng(1), false).unwrap().y;
    let mut c = [[0.0; 2]; 2];
    for r in y.as_mat().rows_iter() {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += r[i] * r[j] / n as f64;
            }
        }
    }
    let jx = [-x[1], x[0]];
    for i in 0..2 {
        for j in 0..2 {
            let expect = 0.5 * (x[i] * x[j] + jx[i] * jx[j]) + if i == j { sigma * sigma } else { 0.0 };
            let tol = 0.02 * (0.5 * (x[0] * x[0] + x[1] * x[1]) + sigma * sigma);
            assert!((c[i][j] - expect).abs() < tol, "({i},{j}) {} vs {expect}", c[i][j]);
        }
    }
}

#[test]
fn awgn_noise_variance_follows_snr() {
    for snr in [0.0, 10.0] {
        let ch = ChannelSpec::awgn_at(snr);
        let y = ch.sample(&SymbolBatch::zeros(100_000, 2), &mut rng(2), false).unwrap().y;
        let per_symbol = y.mean_symbol_energy();
        let expect = 10f64.powf(-snr / 10.0);
        assert!((per_symbol / expect - 1.0).abs() < 0.01, "{snr}: {per_symbol}");
    }
}

#[test]
fn score_has_zero_mean_and_policy_keeps_energy() {
    let policy = Policy::new(0.15).unwrap();
    let n = 250_000;
    let mut r = rng(3);
    let rows: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect();
    let xb = modelfree::transceiver::normalize_batch(&SymbolBatch::from_rows(&rows).unwrap(), 1.0).unwrap();
    let (x, w) = policy.sample(&xb, &mut r);
    assert!((x.mean_symbol_energy() - 1.0).abs() < 0.01);
    let wvar = w.sum_sq() / w.data().len() as f64;
    assert!((wvar / policy.var_per_component() - 1.0).abs() < 0.01);
    let s = policy.score(&xb, &x).unwrap();
    let k = s.data().len() as f64;
    let mean = s.data().iter().sum::<f64>() / k;
    let sd = (s.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / k.sqrt(), "mean {mean}, se {}", sd / k.sqrt());
}

/// Link whose receiver ignores its input and always decides message 0.
struct Blind(usize);

impl Link for Blind {
    fn num_messages(&self) -> usize {
        self.0
    }
    fn send(&self, m: &[usize], _: &ChannelSpec, _: &mut ChaCha8Rng) -> modelfree::Result<Vec<usize>> {
        Ok(vec![0; m.len()])
    }
}

/// Link that errs independently with probability `p`.
struct Flaky(f64);

impl Link for Flaky {
    fn num_messages(&self) -> usize {
        2
    }
    fn send(&self, m: &[usize], _: &ChannelSpec, r: &mut ChaCha8Rng) -> modelfree::Result<Vec<usize>> {
        Ok(m.iter().map(|&v| if r.random::<f64>() < self.0 { 1 - v } else { v }).collect())
    }
}

#[test]
fn bler_of_random_guessing() {
    let ch = ChannelSpec::awgn_at(10.0);
    let p = estimate_bler(&Blind(16), &ch, 10.0, &EvalConfig::default(), 4).unwrap();
    let (lo, hi) = p.interval();
    let expect = 1.0 - 1.0 / 16.0;
    assert!(lo <= expect && expect <= hi, "{p:?}");
}

#[test]
fn bler_estimator_is_unbiased() {
    let ch = ChannelSpec::awgn_at(0.0);
    let cfg = EvalConfig {
        min_blocks: 2000,
        min_errors: 1,
        chunk: 500,
        ..Default::default()
    };
    let runs = 200;
    let rates: Vec<f64> = (0..runs)
        .map(|s| estimate_bler(&Flaky(0.1), &ch, 0.0, &cfg, s).unwrap().rate)
        .collect();
    let mean = rates.iter().sum::<f64>() / runs as f64;
    let se = (0.1f64 * 0.9 / (2000.0 * runs as f64)).sqrt();
    assert!((mean - 0.1).abs() < 3.0 * se, "{mean}");
}

#[test]
fn bler_does_not_depend_on_worker_count() {
    let ch = ChannelSpec::awgn_at(4.0);
    let cfg = EvalConfig {
        min_blocks: 30_000,
        chunk: 3000,
        ..Default::default()
    };
    let link = QpskLink { n_uses: 2 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_bler(&link, &ch, 4.0, &cfg, 99).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn qpsk_monte_carlo_matches_analytic_and_is_monotone() {
    let cfg = EvalConfig {
        min_blocks: 100_000,
        ..Default::default()
    };
    let link = QpskLink { n_uses: 4 };
    let mut last = 1.0;
    for snr in [0.0, 4.0, 8.0, 10.0] {
        let p = estimate_bler(&link, &ChannelSpec::awgn_at(snr), snr, &cfg, 7).unwrap();
        // 99.9% interval: four points at 95% would fail one seed in five.
        let (lo, hi) = wilson_interval(p.errors, p.blocks, 3.29);
        let a = analytic_qpsk_bler(snr, 4);
        assert!(lo <= a && a <= hi, "{snr} dB: {p:?} vs {a}");
        assert!(p.rate <= last);
        last = p.rate;
    }
}

#[test]
fn ml_detect_agrees_with_brute_force() {
    let mut r = rng(8);
    let pts: Vec<Vec<f64>> = (0..64).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let c = Constellation::new("random", Mat::from_rows(&pts).unwrap()).unwrap();
    for _ in 0..10_000 {
        let y: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();
        let mut best = (0, f64::MAX);
        for (k, p) in c.points().rows_iter().enumerate() {
            let d = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            if d < best.1 {
                best = (k, d);
            }
        }
        assert_eq!(ml_detect(&c, &y).unwrap(), best.0);
    }
}

#[test]
fn wilson_interval_contains_rate() {
    let (lo, hi) = wilson_interval(5, 100, 1.96);
    assert!(lo < 0.05 && 0.05 < hi && lo > 0.0);
    assert_eq!(wilson_interval(0, 10, 1.96).0, 0.0);
}

fn toy() -> (System, ChannelSpec) {
    let ch = ChannelSpec::awgn_at(10.0);
    (System::new(Arch::dense(16, 2), &ch, &mut rng(21)).unwrap(), ch)
}

#[test]
fn tx_estimate_vanishes_without_loss_signal() {
    let (sys, ch) = toy();
    let policy = Policy::new(0.15).unwrap();
    let msgs = random_messages(&mut rng(1), 16, 64);
    // Baseline subtraction with a single example leaves an all-zero loss.
    let (g, _) = tx_grad_estimate(&sys, &ch, &policy, &msgs[..1], &mut rng(2), None, true).unwrap();
    assert!(g.is_zero());
    // Infinite-SNR feedback is the noiseless estimator, bit for bit.
    let a = tx_grad_estimate(&sys, &ch, &policy, &msgs, &mut rng(3), None, false).unwrap();
    let b = tx_grad_estimate(&sys, &ch, &policy, &msgs, &mut rng(3), Some(f64::INFINITY), false).unwrap();
    assert_eq!(a.0, b.0);
}

#[test]
fn tx_estimate_is_zero_mean_when_loss_ignores_action() {
    // Make the receiver constant: zero every weight so P is uniform for any y.
    let (mut sys, ch) = toy();
    for l in sys.rx.discriminative.layers_mut() {
        l.w.scale(0.0);
    }
    let policy = Policy::new(0.15).unwrap();
    let msgs = random_messages(&mut rng(4), 16, 100_000);
    let mut r = rng(5);
    let chunks: Vec<Vec<f64>> = msgs
        .chunks(1000)
        .map(|m| tx_grad_estimate(&sys, &ch, &policy, m, &mut r, None, false).unwrap().0.flatten())
        .collect();
    // Per-coordinate z-scores of the chunk means should look standard normal.
    let k = chunks.len() as f64;
    let z: Vec<f64> = (0..chunks[0].len())
        .filter_map(|i| {
            let mean = chunks.iter().map(|c| c[i]).sum::<f64>() / k;
            let sd = (chunks.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
            (sd > 0.0).then(|| mean / (sd / k.sqrt()))
        })
        .collect();
    let mean_sq = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    assert!(z.len() > 100);
    assert!((0.7..1.3).contains(&mean_sq), "mean z² = {mean_sq}");
    assert!(z.iter().all(|v| v.abs() < 5.0));
}

#[test]
fn receiver_estimate_variance_shrinks_with_batch() {
    let (sys, ch) = toy();
    let mut r = rng(6);
    let var_at = |s: usize, r: &mut ChaCha8Rng| {
        let draws: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let m = random_messages(r, 16, s);
                rx_grad_estimate(&sys, &ch, &m, r).unwrap().0.flatten()
            })
            .collect();
        let n = draws.len() as f64;
        (0..draws[0].len())
            .map(|i| {
                let mu = draws.iter().map(|d| d[i]).sum::<f64>() / n;
                draws.iter().map(|d| (d[i] - mu).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .sum::<f64>()
    };
    let ratio = var_at(50, &mut r) / var_at(800, &mut r);
    assert!((8.0..32.0).contains(&ratio), "variance ratio {ratio} for 16× batch");
}

#[test]
fn phases_leave_the_other_side_untouched_and_are_deterministic() {
    let ch = ChannelSpec::awgn_at(10.0);
    let cfg = TrainConfig {
        batch_rx: 64,
        batch_tx: 64,
        seed: 5,
        ..Default::default()
    };
    let mut s = TrainState::new(&cfg, Arch::dense(16, 2), &ch).unwrap();
    let tx = s.system.tx.clone();
    train_receiver_phase(&mut s, &cfg, &ch).unwrap();
    assert_eq!(s.system.tx, tx);
    let rx = s.system.rx.clone();
    train_transmitter_phase(&mut s, &cfg, &ch).unwrap();
    assert_eq!(s.system.rx, rx);
    assert_ne!(s.system.tx, tx);

    let run = || {
        let cfg = TrainConfig {
            outer_iters: 3,
            batch_rx: 64,
            batch_tx: 64,
            ..cfg.clone()
        };
        modelfree::train::alternating_train(&cfg, Arch::dense(16, 2), &ch).unwrap()
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.records.len(), 60);
    assert!(la.records.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn receiver_phase_reduces_loss_for_most_seeds() {
    let ch = ChannelSpec::awgn_at(10.0);
    let improved = (0..10)
        .filter(|&seed| {
            let cfg = TrainConfig {
                batch_rx: 500,
                seed,
                ..Default::default()
            };
            let mut s = TrainState::new(&cfg, Arch::dense(4, 1), &ch).unwrap();
            let msgs = random_messages(&mut rng(1000 + seed), 4, 5000);
            let before = common::frozen_loss(&s.system, &ch, &msgs, 1);
            train_receiver_phase(&mut s, &cfg, &ch).unwrap();
            common::frozen_loss(&s.system, &ch, &msgs, 1) <= before
        })
        .count();
    assert!(improved >= 8, "{improved}/10");
}

#[test]
fn spsa_substitute_examples() {
    // Quadratic: exact along Δ. θ = [1, 0] gives g = (θ·Δ)·2·Δ.
    let mut r = rng(9);
    let g = spsa_grad(|t| Ok(t.iter().map(|v| v * v).sum()), &[1.0, 0.0], 0.3, &mut r).unwrap();
    assert!((g[0].abs() - 2.0).abs() < 1e-12 && (g[1].abs() - 2.0).abs() < 1e-12);
    assert!(spsa_grad(|_| Ok(3.0), &[1.0, 2.0], 0.1, &mut r).unwrap().iter().all(|&v| v == 0.0));
    assert!(spsa_grad(|_| Ok(0.0), &[1.0], 0.0, &mut r).is_err());

    // 1-D cubic: E[g] = 3θ² + c², the derivative up to the O(c²) bias.
    let (theta, c) = (0.7f64, 0.01f64);
    let n = 1_000_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += spsa_grad(|t| Ok(t[0].powi(3)), &[theta], c, &mut r).unwrap()[0];
    }
    let mean = sum / n as f64;
    assert!((mean - (3.0 * theta * theta + c * c)).abs() < 1e-9, "{mean}");
}
