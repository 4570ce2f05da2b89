//! Estimators over a `K x K` score matrix whose entry `(i, j)` is
//! `f(x_j, z_i)`: row `i` holds one representation scored against every
//! candidate in the batch, with the positive pair on the diagonal.

use crate::diffcore::{lse, Tensor};
use crate::error::{Error, Result};

/// Scores are clamped to this magnitude inside `exp` for NWJ and JS.
pub const SCORE_CLAMP: f64 = 50.0;

fn check_square(op: &'static str, scores: &Tensor, min_k: usize) -> Result<usize> {
    let (r, c) = scores.dims();
    if r != c {
        return Err(Error::shape(op, format!("score matrix must be square, got {r}x{c}")));
    }
    if r < min_k {
        return Err(Error::invalid(format!("{op} needs K >= {min_k}, got {r}")));
    }
    if !scores.is_finite() {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(r)
}

/// `mean_i [ S_ii - log (1/K) sum_j exp S_ij ]`; never exceeds `log K`.
pub fn infonce(scores: &Tensor) -> Result<f64> {
    let k = check_square("infonce", scores, 1)?;
    let log_k = (k as f64).ln();
    let total: f64 = (0..k)
        .map(|i| {
            let row = scores.row_slice(i);
            row[i] - lse(row) + log_k
        })
        .sum();
    Ok(total / k as f64)
}

/// Mean over off-diagonal entries of `exp(clamp(S))`.
fn offdiag_mean_exp(scores: &Tensor, shift: f64) -> f64 {
    let k = scores.rows();
    let mut total = 0.0;
    for i in 0..k {
        for (j, &s) in scores.row_slice(i).iter().enumerate() {
            if i != j {
                total += (s + shift).clamp(-SCORE_CLAMP, SCORE_CLAMP).exp();
            }
        }
    }
    total / (k * (k - 1)) as f64
}

fn diag_mean(scores: &Tensor) -> f64 {
    let k = scores.rows();
    (0..k).map(|i| scores.get(i, i)).sum::<f64>() / k as f64
}

/// `mean diag S - e^{-1} mean_{i != j} exp S_ij`.
pub fn nwj(scores: &Tensor) -> Result<f64> {
    check_square("nwj", scores, 2)?;
    Ok(diag_mean(scores) - (-1.0f64).exp() * offdiag_mean_exp(scores, 0.0))
}

/// NWJ evaluated on `S + 1`. A discriminator trained with the softplus
/// objective has logits near the log density ratio, while the NWJ optimum
/// sits at one plus that ratio.
pub fn js(scores: &Tensor) -> Result<f64> {
    check_square("js", scores, 2)?;
    Ok(diag_mean(scores) + 1.0 - (-1.0f64).exp() * offdiag_mean_exp(scores, 1.0))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Discriminator loss `mean softplus(-S_ii) + mean_{i != j} softplus(S_ij)`.
pub fn js_discriminator_loss(scores: &Tensor) -> Result<f64> {
    let k = check_square("js_discriminator_loss", scores, 2)?;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..k {
        for (j, &s) in scores.row_slice(i).iter().enumerate() {
            if i == j {
                pos += softplus(-s);
            } else {
                neg += softplus(s);
            }
        }
    }
    Ok(pos / k as f64 + neg / (k * (k - 1)) as f64)
}
