mod common;

use common::{finite_diff, frozen_loss, random_mat, random_net, rel_err, rng};
use modelfree::channel::ChannelSpec;
use modelfree::numkit::{Activation, Mlp};
use modelfree::train::{aware_grad_estimate, rx_grad_estimate, random_messages};
use modelfree::transceiver::{Arch, RxArch, System, TxArch};
use proptest::prelude::*;

fn check_mlp(seed: u64, last: Activation) {
    let mut r = rng(seed);
    let net = random_net(&mut r, last);
    let x = random_mat(&mut r, 4, net.input_width());
    let w = random_mat(&mut r, 4, net.output_width());
    let loss = |n: &Mlp, x: &modelfree::numkit::Mat| n.predict(x).unwrap().dot(&w).unwrap();
    let (_, tape) = net.forward(&x).unwrap();
    let (g, dx) = net.backward(&tape, &w).unwrap();
    let theta = net.params_flat();
    let mut probe = net.clone();
    let fd = finite_diff(&theta, 1e-6, |t| {
        probe.set_params_flat(t).unwrap();
        loss(&probe, &x)
    });
    let e = rel_err(&g.flatten(), &fd);
    assert!(e < 1e-4, "params rel err {e} (seed {seed}, {last:?})");
    let fdx = finite_diff(x.data(), 1e-6, |t| {
        let xm = modelfree::numkit::Mat::from_vec(x.rows(), x.cols(), t.to_vec()).unwrap();
        loss(&net, &xm)
    });
    let e = rel_err(dx.data(), &fdx);
    assert!(e < 1e-4, "input rel err {e} (seed {seed}, {last:?})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mlp_backprop_matches_finite_differences(seed in any::<u64>(), soft in any::<bool>()) {
        check_mlp(seed, if soft { Activation::Softmax } else { Activation::Linear });
    }
}

fn receiver_params(s: &System) -> Vec<f64> {
    let mut p = s.rx.transformer.as_ref().map(|n| n.params_flat()).unwrap_or_default();
    p.extend(s.rx.discriminative.params_flat());
    p
}

fn set_receiver_params(s: &mut System, flat: &[f64]) {
    let k = s.rx.transformer.as_ref().map_or(0, |n| n.num_params());
    if let Some(n) = s.rx.transformer.as_mut() {
        n.set_params_flat(&flat[..k]).unwrap();
    }
    s.rx.discriminative.set_params_flat(&flat[k..]).unwrap();
}

#[test]
fn receiver_gradient_matches_finite_differences() {
    let ch = ChannelSpec::awgn_at(5.0);
    let mut r = rng(3);
    let sys = System::new(Arch::dense(8, 2), &ch, &mut r).unwrap();
    let msgs = random_messages(&mut r, 8, 32);
    let (g, _) = rx_grad_estimate(&sys, &ch, &msgs, &mut rng(77)).unwrap();
    let mut probe = sys.clone();
    let fd = finite_diff(&receiver_params(&sys), 1e-6, |t| {
        set_receiver_params(&mut probe, t);
        frozen_loss(&probe, &ch, &msgs, 77)
    });
    let e = rel_err(&g.flatten(), &fd);
    assert!(e < 1e-4, "rel err {e}");
}

fn check_end_to_end(arch: Arch, ch: ChannelSpec, seed: u64) {
    let mut r = rng(seed);
    let sys = System::new(arch, &ch, &mut r).unwrap();
    let msgs = random_messages(&mut r, arch.num_messages, 24);
    let g = aware_grad_estimate(&sys, &ch, &msgs, &mut rng(seed + 100)).unwrap();
    let frozen = |s: &System| frozen_loss(s, &ch, &msgs, seed + 100);
    assert!((g.loss - frozen(&sys)).abs() < 1e-12);

    let mut probe = sys.clone();
    let h = 1e-6;
    let fd_tx = finite_diff(&sys.tx.net.params_flat(), h, |t| {
        probe.tx.net.set_params_flat(t).unwrap();
        frozen(&probe)
    });
    let e = rel_err(&g.tx.flatten(), &fd_tx);
    assert!(e < 1e-4, "{arch:?} {}: transmitter rel err {e}", ch.name());

    let mut probe = sys.clone();
    let fd_rx = finite_diff(&receiver_params(&sys), h, |t| {
        set_receiver_params(&mut probe, t);
        frozen(&probe)
    });
    let e = rel_err(&g.rx.flatten(), &fd_rx);
    assert!(e < 1e-4, "{arch:?} {}: receiver rel err {e}", ch.name());
}

#[test]
fn end_to_end_gradient_awgn() {
    check_end_to_end(Arch::dense(8, 2), ChannelSpec::awgn_at(8.0), 1);
}

#[test]
fn end_to_end_gradient_rbf_plain_pilot_and_transformer() {
    check_end_to_end(Arch::dense(8, 2), ChannelSpec::rbf_at(15.0), 2);
    check_end_to_end(Arch { pilot: true, ..Arch::dense(8, 2) }, ChannelSpec::rbf_at(15.0), 3);
    check_end_to_end(Arch { rx: RxArch::Transformer, ..Arch::dense(8, 3) }, ChannelSpec::rbf_at(15.0), 4);
}

#[test]
fn end_to_end_gradient_differentiable_fiber() {
    let mut ch = ChannelSpec::fiber_at(12.0, 10f64.powf(-0.3) * 1e-3);
    if let ChannelSpec::Fiber { differentiable, .. } = &mut ch {
        *differentiable = true;
    }
    let arch = Arch {
        tx: TxArch::Fiber,
        rx: RxArch::Fiber,
        ..Arch::dense(8, 1)
    };
    check_end_to_end(arch, ch, 5);
}

#[test]
fn identity_channel_chains_receiver_input_gradient() {
    // With J = I the transmitter gradient is the receiver's input gradient
    // pushed straight through the transmitter.
    let ch = ChannelSpec::awgn_at(10.0);
    let mut r = rng(11);
    let sys = System::new(Arch::dense(8, 2), &ch, &mut r).unwrap();
    let msgs = random_messages(&mut r, 8, 16);
    let g = aware_grad_estimate(&sys, &ch, &msgs, &mut rng(5)).unwrap();

    let mut r2 = rng(5);
    let (x, tape) = sys.tx.forward(&msgs).unwrap();
    let y = ch.sample(&x, &mut r2, false).unwrap().y;
    let (p, rtape) = sys.rx.forward(&y).unwrap();
    let w = vec![1.0 / msgs.len() as f64; msgs.len()];
    let dp = modelfree::numkit::cross_entropy_grad(&p, &msgs, &w, modelfree::numkit::CE_EPS).unwrap();
    let (_, dy) = sys.rx.backward(&rtape, &dp, true).unwrap();
    let direct = sys.tx.backward(&tape, dy.unwrap().as_mat()).unwrap();
    assert_eq!(direct, g.tx);
}

#[test]
fn fiber_rejected_without_jacobian() {
    let ch = ChannelSpec::fiber_at(10.0, 1e-3);
    let arch = Arch {
        tx: TxArch::Fiber,
        rx: RxArch::Fiber,
        ..Arch::dense(16, 1)
    };
    let cfg = modelfree::train::TrainConfig {
        outer_iters: 1,
        ..Default::default()
    };
    let err = modelfree::train::model_aware_train(&cfg, arch, &ch).unwrap_err();
    assert!(matches!(err, modelfree::Error::MissingJacobian("fiber")));
}
