//! C ABI for the osvol library.
//!
//! Every fallible function returns an [`OsvolStatus`]. On failure the
//! message is kept per thread and can be read with
//! [`osvol_last_error_message`]. Arrays are passed as pointer plus length;
//! boolean arrays use one `uint8_t` per element (0 or 1).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use osvol::estimators::{kernel_os_volatility, os_iv, IncrementSeries, KernelSpec, VolatilityPath};
use osvol::ordstat::{order_stat_cdf, order_stat_quantile, OrderIndex, ToleranceLevel};
use osvol::var::{var_jumping, JumpingVarConfig, LossWindow};
use osvol::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsvolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericFailure = 3,
    Degenerate = 4,
    Panic = 5,
}

/// Opaque volatility path produced by [`osvol_kernel_os_volatility`].
pub struct OsvolVolPath {
    inner: VolatilityPath,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> OsvolStatus {
    match err {
        Error::NumericFailure(_) | Error::Deconvolution(_) => OsvolStatus::NumericFailure,
        Error::DegenerateSchedule { .. } => OsvolStatus::Degenerate,
        _ => OsvolStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), OsvolStatus>) -> OsvolStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OsvolStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OsvolStatus::Panic
        }
    }
}

fn fail(err: Error) -> OsvolStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> OsvolStatus {
    set_error(format!("{what} is null"));
    OsvolStatus::NullPointer
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], OsvolStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, OsvolStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next osvol call on the same thread.
#[no_mangle]
pub extern "C" fn osvol_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn osvol_normal_cdf(x: f64) -> f64 {
    osvol::special::normal_cdf(x)
}

/// CDF of the k-th smallest of `n_prime` standard normals at `x`.
///
/// # Safety
/// `out_value` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn osvol_order_stat_cdf(x: f64, k: usize, n_prime: usize, out_value: *mut f64) -> OsvolStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let idx = OrderIndex::new(k, n_prime).map_err(fail)?;
        *o = order_stat_cdf(x, idx);
        Ok(())
    })
}

/// Threshold θ with P(X_{k:n'} ≤ θ) = 1 − p.
///
/// # Safety
/// `out_value` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn osvol_order_stat_quantile(p: f64, k: usize, n_prime: usize, out_value: *mut f64) -> OsvolStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let p = ToleranceLevel::new(p).map_err(fail)?;
        let idx = OrderIndex::new(k, n_prime).map_err(fail)?;
        *o = order_stat_quantile(p, idx).map_err(fail)?;
        Ok(())
    })
}

/// Order-statistic integrated variance. `out_flags` may be null; otherwise
/// it receives `n` jump indicators in time order.
///
/// # Safety
/// `values` must point to `n` doubles, `out_iv` to a double and
/// `out_flags`, when not null, to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn osvol_os_iv(
    values: *const f64,
    n: usize,
    dt: f64,
    p: f64,
    out_iv: *mut f64,
    out_flags: *mut u8,
) -> OsvolStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        let iv = out(out_iv, "out_iv")?;
        let series = IncrementSeries::new(v.to_vec(), dt).map_err(fail)?;
        let est = os_iv(&series, ToleranceLevel::new(p).map_err(fail)?).map_err(fail)?;
        *iv = est.iv;
        if !out_flags.is_null() {
            let f = std::slice::from_raw_parts_mut(out_flags, n);
            for (d, s) in f.iter_mut().zip(&est.flags) {
                *d = u8::from(*s);
            }
        }
        Ok(())
    })
}

/// Iterative kernel estimator with a one-sided uniform kernel. On success
/// `*out_path` owns a handle to release with [`osvol_vol_path_free`].
///
/// # Safety
/// `values` must point to `n` doubles and `out_path` to a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn osvol_kernel_os_volatility(
    values: *const f64,
    n: usize,
    dt: f64,
    p: f64,
    bandwidth: usize,
    max_iter: usize,
    out_path: *mut *mut OsvolVolPath,
) -> OsvolStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        let o = out(out_path, "out_path")?;
        *o = ptr::null_mut();
        let series = IncrementSeries::new(v.to_vec(), dt).map_err(fail)?;
        let p = ToleranceLevel::new(p).map_err(fail)?;
        let kernel = KernelSpec::one_sided(bandwidth).map_err(fail)?;
        let path = kernel_os_volatility(&series, p, kernel, max_iter).map_err(fail)?;
        *o = Box::into_raw(Box::new(OsvolVolPath { inner: path }));
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a handle from [`osvol_kernel_os_volatility`]
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_free(path: *mut OsvolVolPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of observations, 0 for a null handle.
///
/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_len(path: *const OsvolVolPath) -> usize {
    path.as_ref().map_or(0, |p| p.inner.len())
}

/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_jump_count(path: *const OsvolVolPath) -> usize {
    path.as_ref().map_or(0, |p| p.inner.jump_count())
}

/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_iterations(path: *const OsvolVolPath) -> usize {
    path.as_ref().map_or(0, |p| p.inner.iterations)
}

/// 1 when the jump set settled before `max_iter`.
///
/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_converged(path: *const OsvolVolPath) -> u8 {
    path.as_ref().map_or(0, |p| u8::from(p.inner.converged))
}

/// Copy the local volatilities into `out` (capacity `len`, which must be
/// at least the path length).
///
/// # Safety
/// `path` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_sigmas(path: *const OsvolVolPath, out: *mut f64, len: usize) -> OsvolStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        copy_out(&p.inner.sigmas, out, len, |x| *x)
    })
}

/// Copy the jump flags into `out` as 0/1 bytes.
///
/// # Safety
/// `path` must be a live handle and `out` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn osvol_vol_path_flags(path: *const OsvolVolPath, out: *mut u8, len: usize) -> OsvolStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        copy_out(&p.inner.jump_flags, out, len, |b| u8::from(*b))
    })
}

unsafe fn copy_out<S, D>(src: &[S], dst: *mut D, len: usize, f: impl Fn(&S) -> D) -> Result<(), OsvolStatus> {
    if len < src.len() {
        set_error(format!("buffer holds {len} elements, need {}", src.len()));
        return Err(OsvolStatus::InvalidArgument);
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("out"));
    }
    let d = std::slice::from_raw_parts_mut(dst, src.len());
    for (d, s) in d.iter_mut().zip(src) {
        *d = f(s);
    }
    Ok(())
}

/// Jumping VaR from the last `window_n` losses (negated returns), their
/// local volatilities and jump flags.
///
/// # Safety
/// `losses` and `vols` must point to `n` doubles, `flags` to `n` bytes and
/// `out_var` to a double.
#[no_mangle]
pub unsafe extern "C" fn osvol_var_jumping(
    losses: *const f64,
    vols: *const f64,
    flags: *const u8,
    n: usize,
    window_n: usize,
    forecast_t: usize,
    lambda: f64,
    out_var: *mut f64,
) -> OsvolStatus {
    guard(|| {
        let l = slice(losses, n, "losses")?;
        let v = slice(vols, n, "vols")?;
        let f = slice(flags, n, "flags")?;
        let o = out(out_var, "out_var")?;
        let window = LossWindow::new(l.to_vec(), v.to_vec(), f.iter().map(|&b| b != 0).collect()).map_err(fail)?;
        let config = JumpingVarConfig::new(window_n, forecast_t, lambda).map_err(fail)?;
        *o = var_jumping(&window, &config).map_err(fail)?;
        Ok(())
    })
}
