//! Annealed Langevin sampler over channel blocks and data symbols.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{linear::ls_estimate, make_plan, DetectorError, SicPlan};
use crate::linalg::{CMatrix, LinalgError, C64};
use crate::prior::{symbol_score, ScorePrior};
use crate::random::{complex_normal, complex_normal_matrix};
use crate::signal::{hard_decision, Constellation};

/// Which stage terms enter a block's likelihood gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SicGradient {
    /// Every stage `j ≥ i` in which block `i` appears (gradient of the full objective).
    Cumulative,
    /// Only the block's own stage `i`.
    StageOnly,
    /// Channel blocks follow the fully cancelled last stage, symbols their own stage.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Pilot least squares with ridge σ₀²; data symbols start at zero.
    RidgeLs,
    /// Channel drawn from CN(0, prior entry variance); data symbols start at zero.
    PriorSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangevinConfig {
    pub n_levels: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub steps_per_level: usize,
    /// Step size at the final level; level `l` uses `step_scale·σ_l²/σ_min²`.
    pub step_scale: f64,
    pub n_outer: usize,
    pub reorder_every: usize,
    pub convergence_tol: f64,
    /// Offset added to the trial seed of the Langevin noise stream in sweeps.
    pub seed: u64,
    /// The likelihood noise floor at level `l` is `σ₀² + likelihood_anneal·σ_l²`.
    pub likelihood_anneal: f64,
    /// Scales the injected noise variance; 1 samples the posterior and 0 is
    /// annealed gradient ascent.
    pub temperature: f64,
    /// Steps never exceed `step_clamp / curvature` of the block's potential.
    pub step_clamp: f64,
    pub gradient: SicGradient,
    pub init: InitStrategy,
    /// Scale steps by the inverse block Hessian bounds instead of a scalar clamp.
    pub precondition: bool,
    pub pilot_cancel: bool,
    /// Inflate the data-column covariance of the channel update by the
    /// per-symbol mean-square error of the current decisions.
    pub symbol_uncertainty: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            n_levels: 10,
            sigma_max: 2.0,
            sigma_min: 0.01,
            steps_per_level: 20,
            step_scale: 0.5,
            n_outer: 5,
            reorder_every: 1,
            convergence_tol: 1e-3,
            seed: 0,
            likelihood_anneal: 1.0,
            temperature: 0.0,
            step_clamp: 0.5,
            gradient: SicGradient::Decoupled,
            init: InitStrategy::RidgeLs,
            precondition: true,
            pilot_cancel: true,
            symbol_uncertainty: true,
        }
    }
}

impl LangevinConfig {
    /// Geometric schedule from `sigma_max` down to `sigma_min`.
    pub fn levels(&self) -> Vec<f64> {
        if self.n_levels <= 1 {
            return vec![self.sigma_min];
        }
        let ratio = self.sigma_min / self.sigma_max;
        (0..self.n_levels)
            .map(|l| self.sigma_max * ratio.powf(l as f64 / (self.n_levels - 1) as f64))
            .collect()
    }

    pub fn step_at(&self, sigma: f64) -> f64 {
        self.step_scale * (sigma / self.sigma_min).powi(2)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::Parameter(m));
        if self.n_levels == 0 || self.steps_per_level == 0 || self.n_outer == 0 {
            return bad("n_levels, steps_per_level and n_outer must be >= 1".into());
        }
        if !(self.sigma_min > 0.0) {
            return bad(format!(
                "sigma_min must be positive, got {}",
                self.sigma_min
            ));
        }
        if self.n_levels > 1 && !(self.sigma_max > self.sigma_min) {
            return bad(format!(
                "sigma_max ({}) must exceed sigma_min ({})",
                self.sigma_max, self.sigma_min
            ));
        }
        if !(self.step_scale > 0.0) || !(self.step_clamp > 0.0) {
            return bad("step_scale and step_clamp must be positive".into());
        }
        if self.reorder_every == 0 {
            return bad("reorder_every must be >= 1".into());
        }
        if !(self.temperature >= 0.0) || !(self.likelihood_anneal >= 0.0) {
            return bad("temperature and likelihood_anneal must be >= 0".into());
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be >= 0".into());
        }
        Ok(())
    }
}

/// Diagnostics recorded after every outer sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrace {
    pub sweep: usize,
    /// `Σ_j -tr(R_jᴴ Σ_j⁻¹ R_j)` at the final noise level.
    pub objective: f64,
    /// `‖R_j‖_F` per stage.
    pub residual_norms: Vec<f64>,
    /// Relative change of `[Ĥ, X̂_D]` over the sweep.
    pub rel_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    /// Channel estimate, columns in original user order.
    pub h_hat: CMatrix,
    /// Hard decisions on the data symbols.
    pub x_d_hat: CMatrix,
    /// Continuous data-symbol state before the decision.
    pub x_d_soft: CMatrix,
    pub plan: SicPlan,
    pub trace: Vec<SweepTrace>,
}

/// SIC-partitioned joint estimator starting from the configured initialization.
#[allow(clippy::too_many_arguments)]
pub fn run_sic_langevin(
    y: &CMatrix,
    x_p: &CMatrix,
    constellation: &Constellation,
    cfg: &LangevinConfig,
    prior: &dyn ScorePrior,
    sigma0_sq: f64,
    rng: &mut impl Rng,
) -> Result<JointEstimate, DetectorError> {
    let engine = Engine::new(y, x_p, constellation, cfg, prior, sigma0_sq, false)?;
    let (h0, xd0) = engine.initial_state(rng)?;
    engine.run(h0, xd0, rng)
}

/// [`run_sic_langevin`] from an explicit starting point.
#[allow(clippy::too_many_arguments)]
pub fn run_sic_langevin_from(
    y: &CMatrix,
    x_p: &CMatrix,
    constellation: &Constellation,
    cfg: &LangevinConfig,
    prior: &dyn ScorePrior,
    sigma0_sq: f64,
    h0: CMatrix,
    x_d0: CMatrix,
    rng: &mut impl Rng,
) -> Result<JointEstimate, DetectorError> {
    let engine = Engine::new(y, x_p, constellation, cfg, prior, sigma0_sq, false)?;
    engine.check_start(&h0, &x_d0)?;
    engine.run(h0, x_d0, rng)
}

/// Single-block joint Langevin baseline: all users in one block, no cancellation.
#[allow(clippy::too_many_arguments)]
pub fn run_joint_full(
    y: &CMatrix,
    x_p: &CMatrix,
    constellation: &Constellation,
    cfg: &LangevinConfig,
    prior: &dyn ScorePrior,
    sigma0_sq: f64,
    rng: &mut impl Rng,
) -> Result<JointEstimate, DetectorError> {
    let engine = Engine::new(y, x_p, constellation, cfg, prior, sigma0_sq, true)?;
    let (h0, xd0) = engine.initial_state(rng)?;
    engine.run(h0, xd0, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn run_joint_full_from(
    y: &CMatrix,
    x_p: &CMatrix,
    constellation: &Constellation,
    cfg: &LangevinConfig,
    prior: &dyn ScorePrior,
    sigma0_sq: f64,
    h0: CMatrix,
    x_d0: CMatrix,
    rng: &mut impl Rng,
) -> Result<JointEstimate, DetectorError> {
    let engine = Engine::new(y, x_p, constellation, cfg, prior, sigma0_sq, true)?;
    engine.check_start(&h0, &x_d0)?;
    engine.run(h0, x_d0, rng)
}

struct Engine<'a> {
    y: &'a CMatrix,
    x_p: &'a CMatrix,
    constellation: &'a Constellation,
    cfg: &'a LangevinConfig,
    prior: &'a dyn ScorePrior,
    sigma0_sq: f64,
    single_block: bool,
    n_r: usize,
    n_u: usize,
    p: usize,
    d: usize,
}

/// Channel and symbol blocks for one decoding order.
struct BlockState {
    plan: SicPlan,
    /// `n_r × w_i` channel blocks.
    h: Vec<CMatrix>,
    /// `w_i × K` symbol blocks, pilots in columns `0..p`.
    x: Vec<CMatrix>,
}

impl BlockState {
    fn gather(plan: SicPlan, h: &CMatrix, x_p: &CMatrix, x_d: &CMatrix) -> Self {
        let x_full = x_p.hcat(x_d).expect("pilot and data rows agree");
        let hb = plan.blocks().iter().map(|b| h.select_cols(b)).collect();
        let xb = plan
            .blocks()
            .iter()
            .map(|b| x_full.select_rows(b))
            .collect();
        Self { plan, h: hb, x: xb }
    }

    fn scatter(&self, n_r: usize, p: usize) -> (CMatrix, CMatrix) {
        let n_u = self.plan.n_users();
        let k = self.x[0].cols();
        let mut h = CMatrix::zeros(n_r, n_u);
        let mut x = CMatrix::zeros(n_u, k);
        for (i, block) in self.plan.blocks().iter().enumerate() {
            h.scatter_cols(block, &self.h[i]);
            x.scatter_rows(block, &self.x[i]);
        }
        (h, x.col_range(p, k))
    }

    fn contribution(&self, i: usize) -> CMatrix {
        self.h[i].matmul(&self.x[i]).expect("block shapes agree")
    }
}

/// Every matrix the engine factors is a positive floor plus Gram terms, so a
/// failed factorization means the state has blown up numerically.
fn overflow_as_divergence(e: DetectorError, sweep: usize) -> DetectorError {
    match e {
        DetectorError::Linalg(LinalgError::NotPositiveDefinite { .. }) => {
            DetectorError::Diverged { sweep }
        }
        other => other,
    }
}

fn add_diag(a: &mut CMatrix, v: f64) {
    for k in 0..a.rows() {
        a[(k, k)] += v;
    }
}

/// Upper bound on the largest eigenvalue of a Hermitian PSD matrix.
fn spectral_bound(a: &CMatrix) -> f64 {
    let n = a.rows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
    let gersh = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    trace.min(gersh)
}

impl<'a> Engine<'a> {
    fn new(
        y: &'a CMatrix,
        x_p: &'a CMatrix,
        constellation: &'a Constellation,
        cfg: &'a LangevinConfig,
        prior: &'a dyn ScorePrior,
        sigma0_sq: f64,
        single_block: bool,
    ) -> Result<Self, DetectorError> {
        cfg.validate()?;
        let (n_r, k) = y.shape();
        let (n_u, p) = x_p.shape();
        if p == 0 || p >= k {
            return Err(DetectorError::Parameter(format!(
                "need 1 <= pilots < K, got {p} pilots for K = {k}"
            )));
        }
        if !(sigma0_sq >= 0.0) {
            return Err(DetectorError::Parameter(format!(
                "noise variance must be >= 0, got {sigma0_sq}"
            )));
        }
        if sigma0_sq == 0.0 && cfg.likelihood_anneal == 0.0 {
            return Err(DetectorError::Parameter(
                "zero noise variance needs likelihood_anneal > 0".into(),
            ));
        }
        Ok(Self {
            y,
            x_p,
            constellation,
            cfg,
            prior,
            sigma0_sq,
            single_block,
            n_r,
            n_u,
            p,
            d: k - p,
        })
    }

    fn check_start(&self, h0: &CMatrix, xd0: &CMatrix) -> Result<(), DetectorError> {
        if h0.shape() != (self.n_r, self.n_u) || xd0.shape() != (self.n_u, self.d) {
            return Err(LinalgError::DimensionMismatch {
                op: "initial state",
                lhs: h0.shape(),
                rhs: xd0.shape(),
            }
            .into());
        }
        Ok(())
    }

    fn plan_for(&self, h: &CMatrix) -> SicPlan {
        let block = if self.single_block {
            self.n_u.max(self.n_r)
        } else {
            self.n_r
        };
        make_plan(h, block)
    }

    fn initial_state(&self, rng: &mut impl Rng) -> Result<(CMatrix, CMatrix), DetectorError> {
        let h = match self.cfg.init {
            InitStrategy::RidgeLs => {
                let ridge = if self.sigma0_sq > 0.0 {
                    self.sigma0_sq
                } else {
                    1e-9 * self.p as f64
                };
                ls_estimate(&self.y.col_range(0, self.p), self.x_p, ridge)?
            }
            InitStrategy::PriorSample => {
                let s = self.prior.entry_variance().sqrt();
                CMatrix::from_fn(self.n_r, self.n_u, |_, _| complex_normal(rng) * s)
            }
        };
        Ok((h, CMatrix::zeros(self.n_u, self.d)))
    }

    fn run(
        &self,
        mut h: CMatrix,
        mut xd: CMatrix,
        rng: &mut impl Rng,
    ) -> Result<JointEstimate, DetectorError> {
        let cfg = self.cfg;
        let levels = cfg.levels();
        let mut plan = self.plan_for(&h);
        let mut trace = Vec::new();
        for sweep in 0..cfg.n_outer {
            if sweep % cfg.reorder_every == 0 {
                plan = self.plan_for(&h);
            }
            let mut state = BlockState::gather(plan.clone(), &h, self.x_p, &xd);
            for &sigma in &levels {
                let t = cfg.steps_per_level;
                self.level(&mut state, sigma, t, true, sweep, rng)
                    .map_err(|e| overflow_as_divergence(e, sweep))?;
            }
            let (h_new, xd_new) = state.scatter(self.n_r, self.p);
            let diff = (&h_new - &h).fro_norm_sq() + (&xd_new - &xd).fro_norm_sq();
            let size = (h_new.fro_norm_sq() + xd_new.fro_norm_sq()).max(f64::MIN_POSITIVE);
            let rel_change = (diff / size).sqrt();
            h = h_new;
            xd = xd_new;
            trace.push(self.diagnostics(&state, sweep, rel_change)?);
            if rel_change < cfg.convergence_tol {
                break;
            }
        }
        // Noise-free refinement at the smallest level.
        plan = self.plan_for(&h);
        let mut state = BlockState::gather(plan.clone(), &h, self.x_p, &xd);
        let last = trace.len();
        self.level(
            &mut state,
            cfg.sigma_min,
            2 * cfg.steps_per_level,
            false,
            last,
            rng,
        )
        .map_err(|e| overflow_as_divergence(e, last))?;
        let (h, xd) = state.scatter(self.n_r, self.p);
        Ok(JointEstimate {
            x_d_hat: hard_decision(&xd, self.constellation),
            h_hat: h,
            x_d_soft: xd,
            plan,
            trace,
        })
    }

    fn floor(&self, sigma: f64) -> f64 {
        self.sigma0_sq + self.cfg.likelihood_anneal * sigma * sigma
    }

    /// `Σ_j⁻¹` for every stage from the current channel blocks.
    fn inverse_covs(&self, state: &BlockState, floor: f64) -> Result<Vec<CMatrix>, DetectorError> {
        Ok(self.covs(state, floor)?.1)
    }

    /// Stage covariances `Σ_j` and their inverses.
    fn covs(
        &self,
        state: &BlockState,
        floor: f64,
    ) -> Result<(Vec<CMatrix>, Vec<CMatrix>), DetectorError> {
        let nb = state.h.len();
        let mut covs = vec![CMatrix::zeros(1, 1); nb];
        let mut inv = vec![CMatrix::zeros(1, 1); nb];
        let mut cov = CMatrix::identity(self.n_r).scale(floor);
        for j in (0..nb).rev() {
            inv[j] = cov.cholesky()?.inverse();
            covs[j] = cov.clone();
            cov += &state.h[j].matmul_hermitian(&state.h[j])?;
        }
        Ok((covs, inv))
    }

    /// Per-column inverses of the data covariances seen by the channel update,
    /// indexed `[stage][column]`: `Σ_j + Σ_{l≤j} Ĥ_l V_{l,c} Ĥ_lᴴ`, where
    /// `V_{l,c}` is the diagonal mean-square error of the current symbols of
    /// block `l` in column `c` under a one-step LMMSE re-estimate.
    fn data_inverse_covs(
        &self,
        state: &BlockState,
        covs: &[CMatrix],
        inv: &[CMatrix],
        contrib: &[CMatrix],
    ) -> Result<Vec<Vec<CMatrix>>, DetectorError> {
        let p = self.p;
        let k = p + self.d;
        let points = self.constellation.points();
        let mut resid = self.y.col_range(p, k);
        let mut acc = vec![CMatrix::zeros(self.n_r, self.n_r); self.d];
        let mut out = Vec::with_capacity(covs.len());
        let mut weights = vec![0.0; points.len()];
        for (j, (cov, inv_j)) in covs.iter().zip(inv).enumerate() {
            let h = &state.h[j];
            resid -= &contrib[j].col_range(p, k);
            let mut info = h.hermitian_matmul(&inv_j.matmul(h)?)?;
            add_diag(&mut info, 1.0);
            let err = info.cholesky()?.inverse();
            let x_d = state.x[j].col_range(p, k);
            let z = &x_d + &err.matmul(&h.hermitian_matmul(&inv_j.matmul(&resid)?)?)?;
            let mut stage = Vec::with_capacity(self.d);
            for c in 0..self.d {
                let mut v = vec![0.0; h.cols()];
                for (u, vu) in v.iter_mut().enumerate() {
                    let e = err[(u, u)].re.max(f64::MIN_POSITIVE);
                    let (zu, xu) = (z[(u, c)], x_d[(u, c)]);
                    let max = points
                        .iter()
                        .map(|s| -(zu - s).norm_sqr() / e)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (wt, s) in weights.iter_mut().zip(points) {
                        *wt = (-(zu - s).norm_sqr() / e - max).exp();
                        total += *wt;
                    }
                    *vu = weights
                        .iter()
                        .zip(points)
                        .map(|(wt, s)| wt * (s - xu).norm_sqr())
                        .sum::<f64>()
                        / total;
                }
                let hv = CMatrix::from_fn(self.n_r, h.cols(), |r, u| h[(r, u)] * v[u]);
                acc[c] += &hv.matmul_hermitian(h)?;
                stage.push((cov + &acc[c]).cholesky()?.inverse());
            }
            out.push(stage);
        }
        Ok(out)
    }

    /// Column-wise counterpart of [`Engine::whitening`] for the data columns:
    /// one `M_c` per column and the block-independent offset.
    fn data_whitening(
        &self,
        inv_d: &[Vec<CMatrix>],
        contrib: &[CMatrix],
        i: usize,
        stages: std::ops::Range<usize>,
    ) -> Result<(Vec<CMatrix>, CMatrix), DetectorError> {
        let p = self.p;
        let k = p + self.d;
        let mut m = vec![CMatrix::zeros(self.n_r, self.n_r); self.d];
        let mut offset = CMatrix::zeros(self.n_r, self.d);
        let mut tail = CMatrix::zeros(self.n_r, self.d);
        let mut j_done = i;
        for j in stages {
            while j_done < j {
                j_done += 1;
                tail += &contrib[j_done].col_range(p, k);
            }
            for c in 0..self.d {
                m[c] += &inv_d[j][c];
                if j > i {
                    let a = &inv_d[j][c];
                    let t = tail.col(c);
                    for (r, o) in offset.col_mut(c).iter_mut().enumerate() {
                        *o += (0..self.n_r).map(|q| a[(r, q)] * t[q]).sum::<C64>();
                    }
                }
            }
        }
        Ok((m, offset))
    }

    fn level(
        &self,
        state: &mut BlockState,
        sigma: f64,
        steps: usize,
        inject: bool,
        sweep: usize,
        rng: &mut impl Rng,
    ) -> Result<(), DetectorError> {
        let cfg = self.cfg;
        let nb = state.h.len();
        let (covs, inv) = self.covs(state, self.floor(sigma))?;
        let eps_level = cfg.step_at(sigma);
        let noise_scale = if inject {
            (2.0 * cfg.temperature).sqrt()
        } else {
            0.0
        };
        let sym_curv = 1.0 / (sigma * sigma);
        let p = self.p;
        let k = p + self.d;

        let mut contrib: Vec<CMatrix> = (0..nb).map(|i| state.contribution(i)).collect();
        let inv_d = if cfg.symbol_uncertainty {
            Some(self.data_inverse_covs(state, &covs, &inv, &contrib)?)
        } else {
            None
        };
        // Blocks take turns one step at a time so that coupled blocks converge together.
        for _ in 0..steps {
            for i in 0..nb {
                let (h_stages, x_stages) = match cfg.gradient {
                    SicGradient::Cumulative => (i..nb, i..nb),
                    SicGradient::StageOnly => (i..i + 1, i..i + 1),
                    SicGradient::Decoupled => (nb - 1..nb, i..i + 1),
                };
                let (m, offset) = self.whitening(&inv, &contrib, i, h_stages.clone())?;
                let (m_x, offset_x) = if x_stages == h_stages {
                    (m.clone(), offset.clone())
                } else {
                    self.whitening(&inv, &contrib, i, x_stages)?
                };
                let data_w = match &inv_d {
                    Some(d) => Some(self.data_whitening(d, &contrib, i, h_stages.clone())?),
                    None => None,
                };
                let m_bound = spectral_bound(&m);
                let m_bound_d = data_w.as_ref().map_or(m_bound, |(md, _)| {
                    md.iter().map(spectral_bound).fold(0.0, f64::max)
                });
                let mut base = self.y.clone();
                for c in &contrib[..i] {
                    base -= c;
                }

                {
                    let hi = &state.h[i];
                    let xi = &state.x[i];
                    let resid = &base - &hi.matmul(xi)?;
                    let mut w = m.matmul(&resid)?;
                    if let Some(o) = &offset {
                        w -= o;
                    }
                    let mut w_x = m_x.matmul(&resid)?;
                    if let Some(o) = &offset_x {
                        w_x -= o;
                    }
                    if let Some((md, od)) = &data_w {
                        for (c, mc) in md.iter().enumerate() {
                            let rc = resid.col(p + c);
                            let oc = od.col(c);
                            for (r, out) in w.col_mut(p + c).iter_mut().enumerate() {
                                *out =
                                    (0..self.n_r).map(|q| mc[(r, q)] * rc[q]).sum::<C64>() - oc[r];
                            }
                        }
                    }
                    let x_data = xi.col_range(p, k);
                    let mut grad_h = w.matmul_hermitian(xi)?;
                    grad_h += &self.prior.score(hi, sigma)?;
                    let mut grad_x = hi.hermitian_matmul(&w_x.col_range(p, k))?;
                    grad_x += &symbol_score(&x_data, self.constellation, sigma)?;

                    let prior_curv = self.prior.curvature(hi, sigma)?;
                    let gram_x = xi.matmul_hermitian(xi)?;
                    let gram_h = hi.hermitian_matmul(&m_x.matmul(hi)?)?;
                    if cfg.precondition {
                        // Right-precondition H by (λ_M·XXᴴ + c·I)⁻¹ and left-precondition
                        // X_D by (HᴴMH + I/σ²)⁻¹; both bound the block Hessians.
                        let eps = eps_level.min(cfg.step_clamp);
                        let x_pil = xi.col_range(0, p);
                        let mut s_h = x_pil.matmul_hermitian(&x_pil)?.scale(m_bound);
                        s_h += &x_data.matmul_hermitian(&x_data)?.scale(m_bound_d);
                        add_diag(&mut s_h, prior_curv);
                        let a_h = s_h.cholesky()?.inverse();
                        let mut step_h = grad_h.matmul(&a_h)?.scale(eps);
                        let mut s_x = gram_h;
                        add_diag(&mut s_x, sym_curv);
                        let a_x = s_x.cholesky()?.inverse();
                        let mut step_x = a_x.matmul(&grad_x)?.scale(eps);
                        if inject {
                            let amp = eps.sqrt() * noise_scale;
                            let n_h = complex_normal_matrix(self.n_r, hi.cols(), rng).scale(amp);
                            step_h += &n_h.matmul_hermitian(a_h.cholesky()?.factor())?;
                            let n_x = complex_normal_matrix(xi.rows(), self.d, rng).scale(amp);
                            step_x += &a_x.cholesky()?.factor().matmul(&n_x)?;
                        }
                        state.h[i] += &step_h;
                        let w_i = state.x[i].rows();
                        for c in 0..self.d {
                            let col = state.x[i].col_mut(p + c);
                            for r in 0..w_i {
                                col[r] += step_x[(r, c)];
                            }
                        }
                    } else {
                        let curv_h = m_bound * spectral_bound(&gram_x) + prior_curv;
                        let curv_x = spectral_bound(&gram_h) + sym_curv;
                        let eps_h = eps_level.min(cfg.step_clamp / curv_h);
                        let eps_x = eps_level.min(cfg.step_clamp / curv_x);

                        let hs = eps_h.sqrt() * noise_scale;
                        for (v, g) in state.h[i].as_mut_slice().iter_mut().zip(grad_h.as_slice()) {
                            *v += g * eps_h;
                            if inject {
                                *v += complex_normal(rng) * hs;
                            }
                        }
                        let xs = eps_x.sqrt() * noise_scale;
                        let w_i = state.x[i].rows();
                        for c in 0..self.d {
                            let col = state.x[i].col_mut(p + c);
                            for r in 0..w_i {
                                col[r] += grad_x[(r, c)] * eps_x;
                                if inject {
                                    col[r] += complex_normal(rng) * xs;
                                }
                            }
                        }
                    }
                    if !state.h[i].is_finite() || !state.x[i].is_finite() {
                        return Err(DetectorError::Diverged { sweep });
                    }
                }
                contrib[i] = state.contribution(i);
            }
        }
        Ok(())
    }

    /// `M = Σ_{j∈stages} Σ_j⁻¹` and the part of `Σ_j Σ_j⁻¹ R_j` that does not
    /// depend on block `i`, so that the whitened residual is `M·(base - C_i) - offset`.
    fn whitening(
        &self,
        inv: &[CMatrix],
        contrib: &[CMatrix],
        i: usize,
        stages: std::ops::Range<usize>,
    ) -> Result<(CMatrix, Option<CMatrix>), DetectorError> {
        let nb = inv.len();
        let p = self.p;
        let k = p + self.d;
        let mut m = CMatrix::zeros(self.n_r, self.n_r);
        let mut offset: Option<CMatrix> = None;
        let mut tail = CMatrix::zeros(self.n_r, k);
        let mut j_done = i;
        for j in stages {
            while j_done < j {
                j_done += 1;
                tail += &contrib[j_done];
            }
            m += &inv[j];
            if j > i {
                let t = inv[j].matmul(&tail)?;
                match &mut offset {
                    Some(o) => *o += &t,
                    None => offset = Some(t),
                }
            }
        }
        if self.cfg.pilot_cancel && i + 1 < nb {
            // Later users' pilots are known: their pilot-column contribution
            // is cancelled rather than treated as interference.
            let mut later = CMatrix::zeros(self.n_r, p);
            for c in &contrib[i + 1..] {
                later += &c.col_range(0, p);
            }
            let later = m.matmul(&later)?;
            let o = offset.get_or_insert_with(|| CMatrix::zeros(self.n_r, k));
            for col in 0..p {
                o.col_mut(col).copy_from_slice(later.col(col));
            }
        }
        Ok((m, offset))
    }

    fn diagnostics(
        &self,
        state: &BlockState,
        sweep: usize,
        rel_change: f64,
    ) -> Result<SweepTrace, DetectorError> {
        let inv = self.inverse_covs(state, self.floor(self.cfg.sigma_min))?;
        let mut r = self.y.clone();
        let mut objective = 0.0;
        let mut residual_norms = Vec::with_capacity(state.h.len());
        for (j, inv_j) in inv.iter().enumerate() {
            r -= &state.contribution(j);
            residual_norms.push(r.fro_norm());
            let s = inv_j.matmul(&r)?;
            objective -= r
                .as_slice()
                .iter()
                .zip(s.as_slice())
                .map(|(a, b)| (a.conj() * b).re)
                .sum::<f64>();
        }
        Ok(SweepTrace {
            sweep,
            objective,
            residual_norms,
            rel_change,
        })
    }
}

#[cfg(test)]
pub(super) fn gather_scatter_round_trip(
    plan: SicPlan,
    h: &CMatrix,
    x_p: &CMatrix,
    x_d: &CMatrix,
) -> (CMatrix, CMatrix) {
    let s = BlockState::gather(plan, h, x_p, x_d);
    s.scatter(h.rows(), x_p.cols())
}
