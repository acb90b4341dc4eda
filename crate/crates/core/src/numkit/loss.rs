use super::mat::Mat;
use super::mlp::softmax_in_place;
use crate::error::{Error, Result};

/// Constant added inside the logarithm so the cross-entropy stays bounded.
pub const CE_EPS: f64 = 1e-12;

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `-ln(p_m + eps)`.
pub fn cross_entropy(p: &[f64], m: usize, eps: f64) -> Result<f64> {
    let pm = p.get(m).ok_or(Error::OutOfRange {
        what: "message",
        value: m,
        limit: p.len(),
    })?;
    Ok(-(pm + eps).ln())
}

/// Per-example cross-entropy of probability rows against message labels.
pub fn cross_entropy_rows(p: &Mat, messages: &[usize], eps: f64) -> Result<Vec<f64>> {
    if p.rows() != messages.len() {
        return Err(Error::shape("cross_entropy_rows", p.rows(), messages.len()));
    }
    p.rows_iter()
        .zip(messages)
        .map(|(row, &m)| cross_entropy(row, m, eps))
        .collect()
}

/// Gradient of `Σ_i w_i · CE(p_i, m_i)` w.r.t. the probability matrix.
pub fn cross_entropy_grad(p: &Mat, messages: &[usize], weights: &[f64], eps: f64) -> Result<Mat> {
    if p.rows() != messages.len() || weights.len() != messages.len() {
        return Err(Error::shape("cross_entropy_grad", p.rows(), messages.len()));
    }
    let mut g = Mat::zeros(p.rows(), p.cols());
    for (i, (&m, &w)) in messages.iter().zip(weights).enumerate() {
        if m >= p.cols() {
            return Err(Error::OutOfRange {
                what: "message",
                value: m,
                limit: p.cols(),
            });
        }
        g[(i, m)] = -w / (p[(i, m)] + eps);
    }
    Ok(g)
}

/// Mean of squared element differences.
pub fn mse(a: &Mat, b: &Mat) -> Result<f64> {
    let d = a.sub(b)?;
    if d.data().is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(d.sum_sq() / d.data().len() as f64)
}

/// Peak signal-to-noise ratio `1/MSE` for unit-range signals, in dB.
pub fn psnr_db(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}
