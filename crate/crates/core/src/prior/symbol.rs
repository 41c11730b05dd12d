//! Annealed score of the discrete symbol prior.
//!
//! The uniform distribution over a constellation is smoothed into
//! `p_σ(x) = (1/M) Σ_s CN(x; s, σ²)`, which is differentiable for every σ > 0
//! and sharpens onto the constellation as σ → 0.

use std::f64::consts::PI;

use super::PriorError;
use crate::linalg::{CMatrix, C64};
use crate::signal::Constellation;

fn check_sigma(sigma: f64) -> Result<(), PriorError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PriorError::Parameter(format!(
            "symbol prior needs sigma > 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Score of one entry; log-sum-exp stabilized.
pub(crate) fn entry_score(z: C64, points: &[C64], inv_var: f64, logits: &mut Vec<f64>) -> C64 {
    logits.clear();
    logits.extend(points.iter().map(|s| -(z - s).norm_sqr() * inv_var));
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut den = 0.0;
    let mut num = C64::new(0.0, 0.0);
    for (l, s) in logits.iter().zip(points) {
        let w = (l - max).exp();
        den += w;
        num += s * w;
    }
    (num / den - z) * inv_var
}

/// Entry-wise `∇_{x̄} log p_σ(x)`.
pub fn symbol_score(x: &CMatrix, c: &Constellation, sigma: f64) -> Result<CMatrix, PriorError> {
    check_sigma(sigma)?;
    let inv_var = 1.0 / (sigma * sigma);
    let mut logits = Vec::with_capacity(c.order());
    Ok(x.map(|z| entry_score(z, c.points(), inv_var, &mut logits)))
}

/// Sum over entries of `log p_σ(x)`.
pub fn symbol_log_density(x: &CMatrix, c: &Constellation, sigma: f64) -> Result<f64, PriorError> {
    check_sigma(sigma)?;
    let var = sigma * sigma;
    let m = c.order() as f64;
    let mut total = 0.0;
    for &z in x.as_slice() {
        let logits: Vec<f64> = c
            .points()
            .iter()
            .map(|s| -(z - s).norm_sqr() / var)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - m.ln() - (PI * var).ln();
    }
    Ok(total)
}
