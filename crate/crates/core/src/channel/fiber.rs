use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChannelDraw, ChannelSpec, Jacobian, SymbolBatch};
use crate::error::{Error, Result};

/// Dispersion-free fiber: each complex sample goes through `K` steps of
/// `x ← x·exp(j·Lγ|x|²/K) + n`, `n ~ CN(0, σ²/K)`.
pub fn fiber<R: Rng + ?Sized>(
    x: &SymbolBatch,
    spec: &ChannelSpec,
    rng: &mut R,
    want_jacobian: bool,
) -> Result<ChannelDraw> {
    let ChannelSpec::Fiber {
        length_km,
        gamma,
        steps,
        noise_std,
        ..
    } = *spec
    else {
        return Err(Error::Invalid(format!("fiber() called with {} spec", spec.name())));
    };
    if steps == 0 {
        return Err(Error::config("channel.steps", "fiber needs at least one step"));
    }
    let c = length_km * gamma / steps as f64;
    // Per real component: σ²/(2K).
    let step_std = noise_std / (2.0 * steps as f64).sqrt();
    let mut y = x.clone();
    let mut jac = Vec::with_capacity(if want_jacobian { x.batch() * x.n_uses() } else { 0 });
    for b in 0..x.batch() {
        for k in 0..x.n_uses() {
            let (mut re, mut im) = (x.re(b, k), x.im(b, k));
            // Accumulated 2×2 Jacobian, row-major.
            let mut j = [1.0, 0.0, 0.0, 1.0];
            for _ in 0..steps {
                let phi = c * (re * re + im * im);
                let (s, co) = phi.sin_cos();
                let u = re * co - im * s;
                let v = re * s + im * co;
                if want_jacobian {
                    let step = [
                        co - 2.0 * c * re * v,
                        -s - 2.0 * c * im * v,
                        s + 2.0 * c * re * u,
                        co + 2.0 * c * im * u,
                    ];
                    j = mul2(step, j);
                }
                re = u;
                im = v;
                if step_std > 0.0 {
                    let n1: f64 = rng.sample(StandardNormal);
                    let n2: f64 = rng.sample(StandardNormal);
                    re += step_std * n1;
                    im += step_std * n2;
                }
            }
            y.set(b, k, re, im);
            if want_jacobian {
                jac.push(j);
            }
        }
    }
    Ok(ChannelDraw {
        y,
        fading: None,
        jacobian: want_jacobian.then(|| Jacobian::from_blocks(x.n_uses(), jac)),
    })
}

fn mul2(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(gamma: f64, noise_std: f64, differentiable: bool) -> ChannelSpec {
        ChannelSpec::Fiber {
            length_km: 5000.0,
            gamma,
            steps: 50,
            noise_std,
            power_in: 1e-3,
            differentiable,
        }
    }

    #[test]
    fn noiseless_fiber_preserves_magnitude() {
        let x = SymbolBatch::from_rows(&[[0.02, -0.01], [0.05, 0.03], [-0.04, 0.0]]).unwrap();
        let d = fiber(&x, &spec(1.27, 0.0, false), &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        for b in 0..3 {
            let m0 = x.re(b, 0).hypot(x.im(b, 0));
            let m1 = d.y.re(b, 0).hypot(d.y.im(b, 0));
            assert!((m0 - m1).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_fiber_accumulates_awgn() {
        let sigma = 0.1f64;
        let x = SymbolBatch::zeros(200_000, 1);
        let d = fiber(&x, &spec(0.0, sigma, false), &mut ChaCha8Rng::seed_from_u64(2), false).unwrap();
        let p = d.y.as_mat().sum_sq() / 200_000.0;
        assert!((p / (sigma * sigma) - 1.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let x = SymbolBatch::from_rows(&[[0.031, -0.022]]).unwrap();
        let s = spec(1.27, 0.0, true);
        let d = fiber(&x, &s, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        let j = d.jacobian.unwrap().entry(0, 0);
        let h = 1e-7;
        for col in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_mat_mut()[(0, col)] += h;
            xm.as_mat_mut()[(0, col)] -= h;
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let yp = fiber(&xp, &s, &mut r, false).unwrap().y;
            let ym = fiber(&xm, &s, &mut r, false).unwrap().y;
            let dre = (yp.re(0, 0) - ym.re(0, 0)) / (2.0 * h);
            let dim = (yp.im(0, 0) - ym.im(0, 0)) / (2.0 * h);
            assert!((dre - j[col]).abs() < 1e-5 * (1.0 + j[col].abs()), "{dre} vs {}", j[col]);
            assert!((dim - j[2 + col]).abs() < 1e-5 * (1.0 + j[2 + col].abs()));
        }
    }
}
