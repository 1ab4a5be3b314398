//! C interface to the stationary-density, linear-quadratic and mean-field
//! game solvers.
//!
//! Every fallible function returns an [`MfbStatus`]; on failure the message
//! is kept per thread and can be copied out with [`mfb_last_error`]. Handles
//! are opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mfbank::lq::{compute_lq_coefficients, LqBoundary};
use mfbank::mfg::{solve_mfg, truncated_gaussian, MfgGrid, MfgSettings, MfgSolution, NewtonSettings, ZeroBoundary};
use mfbank::stationary::{solve_e0, StationarySolution};
use mfbank::{Error, ModelParams};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidInput = 3,
    /// A solver failed: no bracket, singular system, Newton or quadrature failure.
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Model constants; mirrors the library's parameter set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfbModelParams {
    pub a: f64,
    pub x0: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub q: f64,
    pub epsilon: f64,
    pub r: f64,
}

impl From<MfbModelParams> for ModelParams {
    fn from(p: MfbModelParams) -> Self {
        ModelParams { a: p.a, x0: p.x0, sigma: p.sigma, alpha: p.alpha, gamma: p.gamma, q: p.q, epsilon: p.epsilon, r: p.r }
    }
}

impl From<ModelParams> for MfbModelParams {
    fn from(p: ModelParams) -> Self {
        MfbModelParams { a: p.a, x0: p.x0, sigma: p.sigma, alpha: p.alpha, gamma: p.gamma, q: p.q, epsilon: p.epsilon, r: p.r }
    }
}

/// Coefficients of the quadratic stationary value function.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfbLqCoefficients {
    pub curvature: f64,
    pub slope: f64,
    pub offset: f64,
    pub gamma_star: f64,
    pub exit_cost: f64,
    pub a_eff: f64,
    pub e0_eff: f64,
    pub mbar: f64,
}

/// Grid and iteration controls for the mean-field game solver.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfbMfgOptions {
    pub domain: f64,
    pub horizon: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Initial density: Gaussian bump centered here, shifted to vanish at 0.
    pub m0_center: f64,
    pub m0_std: f64,
    /// Nonzero: use the quadratic exit cost and boundary data with the
    /// compatible damping weight instead of a zero exit cost.
    pub lq_exit_cost: i32,
}

/// Opaque stationary-density handle.
pub struct MfbStationary(StationarySolution);

/// Opaque mean-field game solution handle.
pub struct MfbMfgSolution {
    sol: MfgSolution,
    rates: Vec<f64>,
    means: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MfbStatus {
    match err {
        Error::InvalidParameter { .. } | Error::ExponentTooSmall { .. } | Error::Config(_) => MfbStatus::InvalidParameter,
        Error::InvalidInput(_) | Error::OutsideGrid { .. } | Error::Io(_) => MfbStatus::InvalidInput,
        Error::NoBracket { .. } | Error::SingularSystem { .. } | Error::NewtonFailed { .. } | Error::Quadrature { .. } => {
            MfbStatus::Numerical
        }
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MfbStatus, String)>) -> MfbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MfbStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MfbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (MfbStatus, String) {
    (MfbStatus::NullPointer, format!("`{name}` is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mfb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Default model constants.
#[no_mangle]
pub extern "C" fn mfb_model_params_default() -> MfbModelParams {
    ModelParams::default().into()
}

/// Default solver controls: `[0, 10] x [0, 10]`, 200 x 100 cells, bump at 2.
#[no_mangle]
pub extern "C" fn mfb_mfg_options_default() -> MfbMfgOptions {
    let s = MfgSettings::default();
    MfbMfgOptions {
        domain: 10.0,
        horizon: 10.0,
        n_space: 200,
        n_time: 100,
        outer_tol: s.outer_tol,
        outer_max: s.outer_max,
        newton_tol: s.newton.tol,
        newton_max: s.newton.max_iter,
        m0_center: 2.0,
        m0_std: 0.5,
        lq_exit_cost: 0,
    }
}

/// Stationary default rate for unit volatility.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfb_solve_e0(a: f64, x0: f64, tol: f64, out: *mut f64) -> MfbStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = solve_e0(a, x0, tol).map_err(lib)?;
        Ok(())
    })
}

/// Builds the stationary density for the given constants.
///
/// # Safety
/// `out` must be null or valid for one write. The handle is released with
/// [`mfb_stationary_free`].
#[no_mangle]
pub unsafe extern "C" fn mfb_stationary_new(a: f64, x0: f64, sigma: f64, out: *mut *mut MfbStationary) -> MfbStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let sol = StationarySolution::with_sigma(a, x0, sigma).map_err(lib)?;
        *out = Box::into_raw(Box::new(MfbStationary(sol)));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`mfb_stationary_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfb_stationary_free(h: *mut MfbStationary) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Default rate of the stationary law.
///
/// # Safety
/// `h` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mfb_stationary_e0(h: *const MfbStationary, out: *mut f64) -> MfbStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = h.0.e0();
        Ok(())
    })
}

/// Evaluates the density at `n` points.
///
/// # Safety
/// `h` must be a live handle; `x` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfb_stationary_pdf(h: *const MfbStationary, x: *const f64, n: usize, out: *mut f64) -> MfbStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        if n == 0 {
            return Ok(());
        }
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = std::slice::from_raw_parts(x, n);
        let ys = std::slice::from_raw_parts_mut(out, n);
        for (y, &v) in ys.iter_mut().zip(xs) {
            *y = h.0.pdf(v);
        }
        Ok(())
    })
}

/// Closed-form linear-quadratic coefficients.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfb_lq_coefficients(params: *const MfbModelParams, out: *mut MfbLqCoefficients) -> MfbStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = compute_lq_coefficients(&(*p).into()).map_err(lib)?;
        *out = MfbLqCoefficients {
            curvature: c.curvature,
            slope: c.slope,
            offset: c.offset,
            gamma_star: c.gamma_star,
            exit_cost: c.exit_cost,
            a_eff: c.a_eff,
            e0_eff: c.e0_eff,
            mbar: c.mbar,
        };
        Ok(())
    })
}

/// Solves the finite-difference mean-field game.
///
/// # Safety
/// `params` and `opts` must be readable, `out` writable. The handle is
/// released with [`mfb_mfg_free`].
#[no_mangle]
pub unsafe extern "C" fn mfb_mfg_solve(
    params: *const MfbModelParams,
    opts: *const MfbMfgOptions,
    out: *mut *mut MfbMfgSolution,
) -> MfbStatus {
    guard(|| {
        let p: ModelParams = (*params.as_ref().ok_or_else(|| null("params"))?).into();
        let o = *opts.as_ref().ok_or_else(|| null("opts"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let grid = MfgGrid::new(o.domain, o.horizon, o.n_space, o.n_time).map_err(lib)?;
        let m0 = truncated_gaussian(&grid, o.m0_center, o.m0_std).map_err(lib)?;
        let settings = MfgSettings {
            outer_tol: o.outer_tol,
            outer_max: o.outer_max,
            newton: NewtonSettings { tol: o.newton_tol, max_iter: o.newton_max },
        };
        let (sol, used) = if o.lq_exit_cost != 0 {
            let coef = compute_lq_coefficients(&p).map_err(lib)?;
            let used = coef.params_with_gamma(&p);
            (solve_mfg(&m0, &grid, &used, &settings, &LqBoundary { coef, params: used }).map_err(lib)?, used)
        } else {
            (solve_mfg(&m0, &grid, &p, &settings, &ZeroBoundary).map_err(lib)?, p)
        };
        let mo = sol.moments(&used);
        let rates = mo.iter().map(|m| m.rate).collect();
        let means = mo.iter().map(|m| m.mean).collect();
        *out = Box::into_raw(Box::new(MfbMfgSolution { sol, rates, means }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`mfb_mfg_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfb_mfg_free(h: *mut MfbMfgSolution) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of time levels and of space nodes per level.
///
/// # Safety
/// `h` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mfb_mfg_shape(h: *const MfbMfgSolution, times: *mut usize, nodes: *mut usize) -> MfbStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *times.as_mut().ok_or_else(|| null("times"))? = h.sol.u.len();
        *nodes.as_mut().ok_or_else(|| null("nodes"))? = h.sol.grid.nodes();
        Ok(())
    })
}

/// Outer iterations used and whether the tolerance was met (1) or not (0).
///
/// # Safety
/// `h` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mfb_mfg_status(h: *const MfbMfgSolution, iterations: *mut usize, converged: *mut i32) -> MfbStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *iterations.as_mut().ok_or_else(|| null("iterations"))? = h.sol.iterations();
        *converged.as_mut().ok_or_else(|| null("converged"))? = h.sol.converged as i32;
        Ok(())
    })
}

#[derive(Clone, Copy)]
#[repr(C)]
pub enum MfbMfgField {
    /// Value function, row-major by time level.
    Value = 0,
    /// Density, row-major by time level.
    Density = 1,
    /// Default rate per time level.
    DefaultRate = 2,
    /// Mean reserve per time level.
    Mean = 3,
}

/// Copies one output field (an [`MfbMfgField`] value) into `buf`, which must hold at least `len`
/// doubles. The required size is written to `needed` when non-null, also on
/// [`MfbStatus::BufferTooSmall`].
///
/// # Safety
/// `h` must be a live handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfb_mfg_copy(
    h: *const MfbMfgSolution,
    field: i32,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> MfbStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let flat = |rows: &Vec<Vec<f64>>| rows.iter().flatten().copied().collect::<Vec<f64>>();
        let data: Vec<f64> = match field {
            f if f == MfbMfgField::Value as i32 => flat(&h.sol.u),
            f if f == MfbMfgField::Density as i32 => flat(&h.sol.m),
            f if f == MfbMfgField::DefaultRate as i32 => h.rates.clone(),
            f if f == MfbMfgField::Mean as i32 => h.means.clone(),
            other => return Err((MfbStatus::InvalidInput, format!("unknown field {other}"))),
        };
        if let Some(n) = needed.as_mut() {
            *n = data.len();
        }
        if len < data.len() {
            return Err((MfbStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { mfb_last_error(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn e0_closed_form_and_errors() {
        let mut e = 0.0;
        assert_eq!(unsafe { mfb_solve_e0(0.0, 2.0, 1e-14, &mut e) }, MfbStatus::Ok);
        assert_eq!(e, 0.25);
        assert_eq!(unsafe { mfb_solve_e0(-1.0, 2.0, 1e-14, &mut e) }, MfbStatus::InvalidParameter);
        assert!(last_error().contains('a'));
        assert_eq!(unsafe { mfb_solve_e0(0.0, 2.0, 1e-14, ptr::null_mut()) }, MfbStatus::NullPointer);
    }

    #[test]
    fn stationary_handle_round_trip() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { mfb_stationary_new(0.5, 2.0, 1.0, &mut h) }, MfbStatus::Ok);
        let mut e0 = 0.0;
        assert_eq!(unsafe { mfb_stationary_e0(h, &mut e0) }, MfbStatus::Ok);
        let direct = StationarySolution::with_sigma(0.5, 2.0, 1.0).unwrap();
        assert_eq!(e0, direct.e0());
        let xs = [0.0, 1.0, 2.0, 5.0];
        let mut ys = [0.0; 4];
        assert_eq!(unsafe { mfb_stationary_pdf(h, xs.as_ptr(), 4, ys.as_mut_ptr()) }, MfbStatus::Ok);
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(y, direct.pdf(*x));
        }
        unsafe { mfb_stationary_free(h) };
        let mut bad = ptr::null_mut();
        assert_eq!(unsafe { mfb_stationary_new(0.5, 0.0, 1.0, &mut bad) }, MfbStatus::InvalidParameter);
        assert!(bad.is_null());
    }

    #[test]
    fn mfg_copy_reports_sizes() {
        let p = mfb_model_params_default();
        let mut o = mfb_mfg_options_default();
        o.n_space = 40;
        o.n_time = 10;
        o.horizon = 1.0;
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { mfb_mfg_solve(&p, &o, &mut h) }, MfbStatus::Ok);
        let (mut t, mut n) = (0, 0);
        assert_eq!(unsafe { mfb_mfg_shape(h, &mut t, &mut n) }, MfbStatus::Ok);
        assert_eq!((t, n), (11, 41));
        let mut need = 0;
        let mut small = [0.0; 3];
        assert_eq!(unsafe { mfb_mfg_copy(h, MfbMfgField::Density as i32, small.as_mut_ptr(), 3, &mut need) }, MfbStatus::BufferTooSmall);
        assert_eq!(need, t * n);
        let mut m = vec![0.0; need];
        assert_eq!(unsafe { mfb_mfg_copy(h, MfbMfgField::Density as i32, m.as_mut_ptr(), m.len(), ptr::null_mut()) }, MfbStatus::Ok);
        let mass = m[..n].iter().sum::<f64>() * o.domain / o.n_space as f64;
        assert!((mass - 1.0).abs() < 1e-12);
        let (mut it, mut conv) = (0, 0);
        assert_eq!(unsafe { mfb_mfg_status(h, &mut it, &mut conv) }, MfbStatus::Ok);
        assert_eq!(conv, 1);
        assert_eq!(unsafe { mfb_mfg_copy(h, 9, m.as_mut_ptr(), m.len(), ptr::null_mut()) }, MfbStatus::InvalidInput);
        unsafe { mfb_mfg_free(h) };
    }

    #[test]
    fn lq_coefficients_cross_the_boundary() {
        let mut p = mfb_model_params_default();
        p.epsilon = 0.5;
        let mut c = MfbLqCoefficients::default();
        assert_eq!(unsafe { mfb_lq_coefficients(&p, &mut c) }, MfbStatus::Ok);
        assert!((c.curvature - 0.251_135_777_277_262_05).abs() < 1e-14);
        assert!(c.gamma_star > 0.0 && c.gamma_star <= 1.0);
    }

    #[test]
    fn version_is_terminated() {
        let s = unsafe { std::ffi::CStr::from_ptr(mfb_version()) };
        assert_eq!(s.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
