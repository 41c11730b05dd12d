//! Pilot-only linear channel estimators and the LMMSE data detector.

use super::DetectorError;
use crate::linalg::CMatrix;
use crate::signal::{hard_decision, Constellation};

/// `B · A⁻¹` for Hermitian positive-definite `A`, via `(A⁻¹ Bᴴ)ᴴ`.
fn right_solve(b: &CMatrix, a: &CMatrix) -> Result<CMatrix, DetectorError> {
    Ok(a.hpd_solve(&b.hermitian())?.hermitian())
}

/// Regularized least squares `Y_P X_Pᴴ (X_P X_Pᴴ + ridge·I)⁻¹`.
///
/// With fewer pilots than users the Gram matrix is singular, so `ridge` must
/// be positive.
pub fn ls_estimate(y_p: &CMatrix, x_p: &CMatrix, ridge: f64) -> Result<CMatrix, DetectorError> {
    if !(ridge >= 0.0) {
        return Err(DetectorError::Parameter(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let (n_u, p) = x_p.shape();
    if ridge == 0.0 && p < n_u {
        return Err(DetectorError::Parameter(format!(
            "{p} pilots cannot resolve {n_u} users without a ridge term"
        )));
    }
    let mut gram = x_p.matmul_hermitian(x_p)?;
    for k in 0..n_u {
        gram[(k, k)] += ridge;
    }
    let cross = y_p.matmul_hermitian(x_p)?;
    right_solve(&cross, &gram)
}

/// Channel LMMSE under an i.i.d. CN(0, prior_var) prior.
pub fn lmmse_estimate(
    y_p: &CMatrix,
    x_p: &CMatrix,
    sigma0_sq: f64,
    prior_var: f64,
) -> Result<CMatrix, DetectorError> {
    if !(sigma0_sq > 0.0) {
        return Err(DetectorError::Parameter(format!(
            "LMMSE needs a positive noise variance, got {sigma0_sq}"
        )));
    }
    if !(prior_var >= 0.0) {
        return Err(DetectorError::Parameter(format!(
            "prior variance must be >= 0, got {prior_var}"
        )));
    }
    if prior_var == 0.0 {
        return Ok(CMatrix::zeros(y_p.rows(), x_p.rows()));
    }
    ls_estimate(y_p, x_p, sigma0_sq / prior_var)
}

/// Soft LMMSE equalizer output `(ĤᴴĤ + σ₀²·I)⁻¹ Ĥᴴ Y_D`.
pub fn lmmse_equalize(
    y_d: &CMatrix,
    h_hat: &CMatrix,
    sigma0_sq: f64,
) -> Result<CMatrix, DetectorError> {
    if !(sigma0_sq > 0.0) {
        return Err(DetectorError::Parameter(format!(
            "LMMSE needs a positive noise variance, got {sigma0_sq}"
        )));
    }
    let mut gram = h_hat.hermitian_matmul(h_hat)?;
    for k in 0..gram.rows() {
        gram[(k, k)] += sigma0_sq;
    }
    Ok(gram.hpd_solve(&h_hat.hermitian_matmul(y_d)?)?)
}

pub fn lmmse_detect(
    y_d: &CMatrix,
    h_hat: &CMatrix,
    sigma0_sq: f64,
    constellation: &Constellation,
) -> Result<CMatrix, DetectorError> {
    Ok(hard_decision(
        &lmmse_equalize(y_d, h_hat, sigma0_sq)?,
        constellation,
    ))
}
