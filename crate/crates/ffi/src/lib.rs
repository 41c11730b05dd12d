//! C ABI over the sicmimo estimators.
//!
//! Every fallible function returns an [`SmStatus`]; on failure a message is
//! available from [`sm_last_error`] on the same thread. Matrices cross the
//! boundary as column-major split real/imaginary `double` arrays and live
//! behind opaque handles that the caller releases with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use sicmimo::detector::{
    lmmse_detect, lmmse_estimate, ls_estimate, run_joint_full, run_sic_langevin, DetectorError,
    LangevinConfig,
};
use sicmimo::linalg::LinalgError;
use sicmimo::prior::{ColumnProductPrior, GaussianPrior, GmmPrior, PriorError, ScorePrior};
use sicmimo::random::stream;
use sicmimo::signal::{make_qam, nmse, noise_variance, ser, Constellation, SignalError};
use sicmimo::{CMatrix, C64};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Diverged = 5,
    Io = 6,
    Panic = 7,
}

/// Complex matrix handle.
pub struct SmMatrix(CMatrix);

/// QAM constellation handle.
pub struct SmConstellation(Constellation);

/// Channel prior handle.
pub struct SmPrior(Arc<dyn ScorePrior>);

/// Tunable subset of the Langevin engine settings. Fields not listed keep the
/// library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmLangevinParams {
    pub n_levels: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub steps_per_level: usize,
    pub step_scale: f64,
    pub n_outer: usize,
    /// 0 runs annealed gradient ascent, 1 samples the posterior.
    pub temperature: f64,
    pub step_clamp: f64,
    pub convergence_tol: f64,
}

impl From<SmLangevinParams> for LangevinConfig {
    fn from(p: SmLangevinParams) -> Self {
        LangevinConfig {
            n_levels: p.n_levels,
            sigma_max: p.sigma_max,
            sigma_min: p.sigma_min,
            steps_per_level: p.steps_per_level,
            step_scale: p.step_scale,
            n_outer: p.n_outer,
            temperature: p.temperature,
            step_clamp: p.step_clamp,
            convergence_tol: p.convergence_tol,
            ..LangevinConfig::default()
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(SmStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(SmStatus::InvalidArgument, msg.into())
    }
}

impl From<LinalgError> for Fail {
    fn from(e: LinalgError) -> Self {
        let status = match e {
            LinalgError::NotPositiveDefinite { .. } => SmStatus::Numerical,
            _ => SmStatus::Dimension,
        };
        Fail(status, e.to_string())
    }
}

impl From<SignalError> for Fail {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::Linalg(l) => l.into(),
            other => Fail::arg(other.to_string()),
        }
    }
}

impl From<PriorError> for Fail {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::Linalg(l) => l.into(),
            PriorError::Io(_) => Fail(SmStatus::Io, e.to_string()),
            PriorError::Dimension { .. } => Fail(SmStatus::Dimension, e.to_string()),
            other => Fail::arg(other.to_string()),
        }
    }
}

impl From<DetectorError> for Fail {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Diverged { .. } => Fail(SmStatus::Diverged, e.to_string()),
            DetectorError::Parameter(_) => Fail::arg(e.to_string()),
            DetectorError::Linalg(l) => l.into(),
            DetectorError::Prior(p) => p.into(),
            DetectorError::Signal(s) => s.into(),
        }
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(SmStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn sm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a `rows` x `cols` matrix from column-major parts. `im` may be null
/// for a real matrix.
///
/// # Safety
/// `re` (and `im` when non-null) must point to `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_matrix_new(
    rows: usize,
    cols: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut SmMatrix,
) -> SmStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail::arg("matrix size overflows"))?;
        if n == 0 {
            return Err(Fail(
                SmStatus::Dimension,
                format!("matrix must be non-empty, got {rows}x{cols}"),
            ));
        }
        if re.is_null() {
            return Err(Fail(SmStatus::NullPointer, "re is null".into()));
        }
        let re = std::slice::from_raw_parts(re, n);
        let data: Vec<C64> = if im.is_null() {
            re.iter().map(|&r| C64::new(r, 0.0)).collect()
        } else {
            let im = std::slice::from_raw_parts(im, n);
            re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect()
        };
        emit(out, SmMatrix(CMatrix::from_col_major(rows, cols, data)?))
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_matrix_rows(m: *const SmMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Column count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_matrix_cols(m: *const SmMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the entries out column-major. `len` must equal rows * cols; `im`
/// may be null to skip the imaginary parts.
///
/// # Safety
/// `re` (and `im` when non-null) must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_matrix_read(
    m: *const SmMatrix,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> SmStatus {
    guard(|| {
        let m = &deref(m, "matrix")?.0;
        let data = m.as_slice();
        if len != data.len() {
            return Err(Fail(
                SmStatus::Dimension,
                format!("buffer holds {len} entries, matrix has {}", data.len()),
            ));
        }
        if re.is_null() {
            return Err(Fail(SmStatus::NullPointer, "re is null".into()));
        }
        let re = std::slice::from_raw_parts_mut(re, len);
        for (dst, z) in re.iter_mut().zip(data) {
            *dst = z.re;
        }
        if !im.is_null() {
            let im = std::slice::from_raw_parts_mut(im, len);
            for (dst, z) in im.iter_mut().zip(data) {
                *dst = z.im;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_matrix_free(m: *mut SmMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Unit-energy square QAM of `order` 4, 16 or 64.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_constellation_qam(
    order: usize,
    out: *mut *mut SmConstellation,
) -> SmStatus {
    guard(|| emit(out, SmConstellation(make_qam(order)?)))
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_constellation_free(c: *mut SmConstellation) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Prior with i.i.d. zero-mean complex Gaussian entries.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_prior_gaussian(variance: f64, out: *mut *mut SmPrior) -> SmStatus {
    guard(|| emit(out, SmPrior(Arc::new(GaussianPrior::white(variance)?))))
}

/// Loads a GMM prior file written by `sicmimo fit-prior`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_prior_gmm_load(
    path: *const c_char,
    out: *mut *mut SmPrior,
) -> SmStatus {
    guard(|| {
        let path = CStr::from_ptr(deref(path, "path")?)
            .to_str()
            .map_err(|_| Fail::arg("path is not UTF-8"))?;
        let gmm = GmmPrior::load(path).map_err(|e| match e {
            PriorError::Io(io) => Fail(SmStatus::Io, format!("{path}: {io}")),
            other => other.into(),
        })?;
        let prior = ColumnProductPrior::single(Arc::new(gmm))?;
        emit(out, SmPrior(Arc::new(prior)))
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_prior_free(p: *mut SmPrior) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

#[no_mangle]
pub extern "C" fn sm_langevin_params_default() -> SmLangevinParams {
    let c = LangevinConfig::default();
    SmLangevinParams {
        n_levels: c.n_levels,
        sigma_max: c.sigma_max,
        sigma_min: c.sigma_min,
        steps_per_level: c.steps_per_level,
        step_scale: c.step_scale,
        n_outer: c.n_outer,
        temperature: c.temperature,
        step_clamp: c.step_clamp,
        convergence_tol: c.convergence_tol,
    }
}

/// Per-entry noise variance for `n_u` unit-power users at `snr_db`.
#[no_mangle]
pub extern "C" fn sm_noise_variance(n_u: usize, snr_db: f64) -> f64 {
    noise_variance(n_u, snr_db)
}

/// Ridge-regularized least-squares channel estimate from pilots.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_ls_estimate(
    y_p: *const SmMatrix,
    x_p: *const SmMatrix,
    ridge: f64,
    out: *mut *mut SmMatrix,
) -> SmStatus {
    guard(|| {
        let h = ls_estimate(&deref(y_p, "y_p")?.0, &deref(x_p, "x_p")?.0, ridge)?;
        emit(out, SmMatrix(h))
    })
}

/// Pilot LMMSE channel estimate under an i.i.d. CN(0, prior_var) prior.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_lmmse_estimate(
    y_p: *const SmMatrix,
    x_p: *const SmMatrix,
    sigma0_sq: f64,
    prior_var: f64,
    out: *mut *mut SmMatrix,
) -> SmStatus {
    guard(|| {
        let h = lmmse_estimate(
            &deref(y_p, "y_p")?.0,
            &deref(x_p, "x_p")?.0,
            sigma0_sq,
            prior_var,
        )?;
        emit(out, SmMatrix(h))
    })
}

/// LMMSE equalization of `y_d` through `h_hat` followed by hard decisions.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_lmmse_detect(
    y_d: *const SmMatrix,
    h_hat: *const SmMatrix,
    sigma0_sq: f64,
    constellation: *const SmConstellation,
    out: *mut *mut SmMatrix,
) -> SmStatus {
    guard(|| {
        let x = lmmse_detect(
            &deref(y_d, "y_d")?.0,
            &deref(h_hat, "h_hat")?.0,
            sigma0_sq,
            &deref(constellation, "constellation")?.0,
        )?;
        emit(out, SmMatrix(x))
    })
}

/// Joint channel estimation and data detection from the full frame `y`
/// (pilot columns first). `full` selects the single-block joint variant
/// instead of SIC ordering. `params` may be null for the defaults. The
/// channel estimate goes to `out_h` and hard data decisions to `out_x_d`.
///
/// # Safety
/// Handles must be live; output pointers must be valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sm_joint_estimate(
    y: *const SmMatrix,
    x_p: *const SmMatrix,
    constellation: *const SmConstellation,
    prior: *const SmPrior,
    sigma0_sq: f64,
    params: *const SmLangevinParams,
    full: bool,
    seed: u64,
    out_h: *mut *mut SmMatrix,
    out_x_d: *mut *mut SmMatrix,
) -> SmStatus {
    guard(|| {
        if out_h.is_null() || out_x_d.is_null() {
            return Err(Fail(SmStatus::NullPointer, "output pointer is null".into()));
        }
        let y = &deref(y, "y")?.0;
        let x_p = &deref(x_p, "x_p")?.0;
        let c = &deref(constellation, "constellation")?.0;
        let prior = deref(prior, "prior")?.0.as_ref();
        let cfg: LangevinConfig = match params.as_ref() {
            Some(p) => (*p).into(),
            None => LangevinConfig::default(),
        };
        cfg.validate()?;
        let mut rng = stream(seed, 0);
        let run = if full {
            run_joint_full
        } else {
            run_sic_langevin
        };
        let est = run(y, x_p, c, &cfg, prior, sigma0_sq, &mut rng)?;
        emit(out_h, SmMatrix(est.h_hat))?;
        emit(out_x_d, SmMatrix(est.x_d_hat))
    })
}

/// `‖ĥ − h‖² / ‖h‖²`.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_nmse(
    h_hat: *const SmMatrix,
    h: *const SmMatrix,
    out: *mut f64,
) -> SmStatus {
    guard(|| {
        let v = nmse(&deref(h_hat, "h_hat")?.0, &deref(h, "h")?.0)?;
        *out.as_mut()
            .ok_or_else(|| Fail(SmStatus::NullPointer, "out is null".into()))? = v;
        Ok(())
    })
}

/// Fraction of symbols in `x_hat` that differ from `x`.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sm_ser(
    x_hat: *const SmMatrix,
    x: *const SmMatrix,
    constellation: *const SmConstellation,
    out: *mut f64,
) -> SmStatus {
    guard(|| {
        let v = ser(
            &deref(x_hat, "x_hat")?.0,
            &deref(x, "x")?.0,
            &deref(constellation, "constellation")?.0,
        )?;
        *out.as_mut()
            .ok_or_else(|| Fail(SmStatus::NullPointer, "out is null".into()))? = v;
        Ok(())
    })
}
