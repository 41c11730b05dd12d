//! Joint channel estimation and data detection.
//!
//! Users are ranked by the norm of their current channel estimate and split
//! into blocks of at most `n_r` users ([`SicPlan`]). Stage `i` of the
//! successive-cancellation likelihood explains `Y` by the blocks decoded so
//! far and treats the remaining blocks as Gaussian interference:
//!
//! ```text
//! ℓ_i = -tr(R_iᴴ Σ_i⁻¹ R_i),   R_i = Y - Σ_{j≤i} H⁽ʲ⁾X⁽ʲ⁾,
//! Σ_i = σ²·I + Σ_{j>i} Ĥ⁽ʲ⁾Ĥ⁽ʲ⁾ᴴ
//! ```
//!
//! The MAP objective is `Σ_i ℓ_i + Σ_i log p(H⁽ⁱ⁾) + log p(X_D)`. Block `i`
//! appears in every stage `j ≥ i`, so its gradient collects one term per
//! such stage. The covariances are held fixed while differentiating.

mod langevin;
mod linear;

use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError};
use crate::prior::{symbol_log_density, symbol_score, PriorError, ScorePrior};
use crate::signal::{Constellation, SignalError};

pub use langevin::{
    run_joint_full, run_joint_full_from, run_sic_langevin, run_sic_langevin_from, InitStrategy,
    JointEstimate, LangevinConfig, SicGradient, SweepTrace,
};
pub use linear::{lmmse_detect, lmmse_equalize, lmmse_estimate, ls_estimate};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("estimator diverged (non-finite state) in sweep {sweep}")]
    Diverged { sweep: usize },
    #[error("invalid detector parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Decoding order and the block partition it induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicPlan {
    /// `order[u]` is the decoding rank of user `u`.
    order: Vec<usize>,
    /// `inverse[s]` is the user decoded at stage `s`.
    inverse: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

impl SicPlan {
    /// Plan from an explicit decoding sequence (`inverse[s]` = user at rank `s`).
    pub fn from_inverse(inverse: Vec<usize>, block_size: usize) -> Result<Self, DetectorError> {
        let n = inverse.len();
        if n == 0 || block_size == 0 {
            return Err(DetectorError::Parameter("empty plan".into()));
        }
        let mut order = vec![usize::MAX; n];
        for (rank, &u) in inverse.iter().enumerate() {
            if u >= n || order[u] != usize::MAX {
                return Err(DetectorError::Parameter(format!(
                    "decoding sequence is not a permutation of 0..{n}"
                )));
            }
            order[u] = rank;
        }
        let blocks = inverse.chunks(block_size).map(<[usize]>::to_vec).collect();
        Ok(Self {
            order,
            inverse,
            blocks,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_users(&self) -> usize {
        self.order.len()
    }
}

/// Decodes strongest users first; equal norms keep ascending user index.
pub fn make_plan(h_hat: &CMatrix, n_r: usize) -> SicPlan {
    let norms = h_hat.col_norms();
    let mut inverse: Vec<usize> = (0..norms.len()).collect();
    // Stable sort keeps the index order among ties.
    inverse.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    SicPlan::from_inverse(inverse, n_r.max(1)).expect("sorted indices form a permutation")
}

/// `Σ_i = σ²·I + Σ_{j>i} Ĥ⁽ʲ⁾Ĥ⁽ʲ⁾ᴴ` for unit-energy symbols.
pub fn interference_cov(
    plan: &SicPlan,
    h_hat: &CMatrix,
    block_idx: usize,
    sigma0_sq: f64,
) -> Result<CMatrix, DetectorError> {
    if !(sigma0_sq > 0.0) {
        return Err(DetectorError::Parameter(format!(
            "noise variance must be positive, got {sigma0_sq}"
        )));
    }
    if block_idx >= plan.n_blocks() {
        return Err(DetectorError::Parameter(format!(
            "block {block_idx} out of range for {} blocks",
            plan.n_blocks()
        )));
    }
    let n_r = h_hat.rows();
    let mut cov = CMatrix::identity(n_r).scale(sigma0_sq);
    for block in &plan.blocks[block_idx + 1..] {
        let hj = h_hat.select_cols(block);
        cov += &hj.matmul_hermitian(&hj)?;
    }
    Ok(cov)
}

/// All stage covariances for one plan.
pub fn interference_covs(
    plan: &SicPlan,
    h_hat: &CMatrix,
    sigma0_sq: f64,
) -> Result<Vec<CMatrix>, DetectorError> {
    (0..plan.n_blocks())
        .map(|i| interference_cov(plan, h_hat, i, sigma0_sq))
        .collect()
}

/// Stage residuals `R_j = Y - Σ_{l≤j} H⁽ˡ⁾X⁽ˡ⁾` over all `K` columns.
fn stage_residuals(
    y: &CMatrix,
    x_full: &CMatrix,
    h_hat: &CMatrix,
    plan: &SicPlan,
) -> Result<Vec<CMatrix>, DetectorError> {
    let mut r = y.clone();
    let mut out = Vec::with_capacity(plan.n_blocks());
    for block in plan.blocks() {
        let c = h_hat
            .select_cols(block)
            .matmul(&x_full.select_rows(block))?;
        r -= &c;
        out.push(r.clone());
    }
    Ok(out)
}

fn check_system(
    y: &CMatrix,
    x_full: &CMatrix,
    h_hat: &CMatrix,
    plan: &SicPlan,
    covs: &[CMatrix],
) -> Result<(), DetectorError> {
    let (n_r, n_u) = h_hat.shape();
    if y.rows() != n_r || x_full.rows() != n_u || x_full.cols() != y.cols() {
        return Err(LinalgError::DimensionMismatch {
            op: "joint system",
            lhs: y.shape(),
            rhs: (n_r, x_full.cols()),
        }
        .into());
    }
    if plan.n_users() != n_u {
        return Err(DetectorError::Parameter(format!(
            "plan covers {} users, channel has {n_u}",
            plan.n_users()
        )));
    }
    if covs.len() != plan.n_blocks() || covs.iter().any(|c| c.shape() != (n_r, n_r)) {
        return Err(DetectorError::Parameter(format!(
            "need {} covariances of size {n_r}x{n_r}",
            plan.n_blocks()
        )));
    }
    Ok(())
}

/// `W_i = Σ_{j≥i} Σ_j⁻¹ R_j`, the whitened residual shared by both gradients.
fn whitened_residual(
    covs: &[CMatrix],
    residuals: &[CMatrix],
    stages: std::ops::Range<usize>,
) -> Result<CMatrix, DetectorError> {
    let mut w: Option<CMatrix> = None;
    for j in stages {
        let t = covs[j].hpd_solve(&residuals[j])?;
        match &mut w {
            Some(acc) => *acc += &t,
            None => w = Some(t),
        }
    }
    Ok(w.expect("at least one stage"))
}

/// `∇_{H̄⁽ⁱ⁾}` of the MAP objective: `Σ_{j≥i} Σ_j⁻¹ R_j X⁽ⁱ⁾ᴴ + s(H⁽ⁱ⁾, σ)`.
///
/// `x_full` is `[X_P, X_D]` in original user order and `covs[j]` is `Σ_j`.
/// Uses every column, pilots included.
#[allow(clippy::too_many_arguments)]
pub fn grad_h_block(
    y: &CMatrix,
    x_full: &CMatrix,
    h_hat: &CMatrix,
    plan: &SicPlan,
    i: usize,
    covs: &[CMatrix],
    prior: &dyn ScorePrior,
    sigma_level: f64,
) -> Result<CMatrix, DetectorError> {
    check_system(y, x_full, h_hat, plan, covs)?;
    let res = stage_residuals(y, x_full, h_hat, plan)?;
    let w = whitened_residual(covs, &res, i..plan.n_blocks())?;
    let block = &plan.blocks()[i];
    let lik = w.matmul_hermitian(&x_full.select_rows(block))?;
    let score = prior.score(&h_hat.select_cols(block), sigma_level)?;
    Ok(&lik + &score)
}

/// `∇_{X̄_D⁽ⁱ⁾}` of the MAP objective over the data columns `p..K`:
/// `Σ_{j≥i} H⁽ⁱ⁾ᴴ Σ_j⁻¹ R_{j,D} + ∇ log p_σ(X_D⁽ⁱ⁾)`.
#[allow(clippy::too_many_arguments)]
pub fn grad_x_block(
    y: &CMatrix,
    x_full: &CMatrix,
    h_hat: &CMatrix,
    plan: &SicPlan,
    i: usize,
    covs: &[CMatrix],
    constellation: &Constellation,
    sigma_level: f64,
    p: usize,
) -> Result<CMatrix, DetectorError> {
    check_system(y, x_full, h_hat, plan, covs)?;
    if p >= x_full.cols() {
        return Err(DetectorError::Parameter("no data columns".into()));
    }
    let res = stage_residuals(y, x_full, h_hat, plan)?;
    let w = whitened_residual(covs, &res, i..plan.n_blocks())?;
    let block = &plan.blocks()[i];
    let w_d = w.col_range(p, w.cols());
    let lik = h_hat.select_cols(block).hermitian_matmul(&w_d)?;
    let xd = x_full.select_rows(block).col_range(p, x_full.cols());
    let score = symbol_score(&xd, constellation, sigma_level)?;
    Ok(&lik + &score)
}

/// MAP objective with the covariances held fixed (constants dropped).
#[allow(clippy::too_many_arguments)]
pub fn map_objective(
    y: &CMatrix,
    x_full: &CMatrix,
    h_hat: &CMatrix,
    plan: &SicPlan,
    covs: &[CMatrix],
    prior: &dyn ScorePrior,
    constellation: &Constellation,
    sigma_level: f64,
    p: usize,
) -> Result<f64, DetectorError> {
    check_system(y, x_full, h_hat, plan, covs)?;
    let res = stage_residuals(y, x_full, h_hat, plan)?;
    let mut total = 0.0;
    for (r, cov) in res.iter().zip(covs) {
        total -= quad_form(cov, r)?;
    }
    for block in plan.blocks() {
        total += prior.log_density(&h_hat.select_cols(block), sigma_level)?;
    }
    let xd = x_full.col_range(p, x_full.cols());
    total += symbol_log_density(&xd, constellation, sigma_level)?;
    Ok(total)
}

/// `tr(Rᴴ Σ⁻¹ R)`.
fn quad_form(cov: &CMatrix, r: &CMatrix) -> Result<f64, DetectorError> {
    let s = cov.hpd_solve(r)?;
    Ok(r.as_slice()
        .iter()
        .zip(s.as_slice())
        .map(|(a, b)| (a.conj() * b).re)
        .sum())
}

#[cfg(test)]
mod tests;
