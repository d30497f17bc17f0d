//! C ABI over the ensemble runner.
//!
//! Every entry point returns a [`PfStatus`]; on failure the message is kept
//! per thread and read with [`pf_last_error_message`]. Handles are opaque and
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use photon_filter::harness::{run_ensemble, write_outputs, ConfigLayer, EnsembleResult, RunConfig};
use photon_filter::hierarchy::closed_form_n11;
use photon_filter::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numerical = 3,
    Io = 4,
    /// Index or buffer length out of range.
    Range = 5,
    Panic = 6,
}

/// Resolved run configuration.
pub struct PfConfig {
    cfg: RunConfig,
}

/// Finished ensemble (or master-equation) run.
pub struct PfEnsemble {
    result: EnsembleResult,
    times: Vec<f64>,
    names: Vec<CString>,
    mean: Vec<Vec<f64>>,
    stderr: Vec<Vec<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: PfStatus, msg: impl Into<String>) -> PfStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> PfStatus {
    let status = match e.exit_code() {
        2 => PfStatus::Validation,
        4 => PfStatus::Io,
        _ => PfStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), PfStatus>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(PfStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PfStatus> {
    if p.is_null() {
        return Err(fail(PfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PfStatus::Validation, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, PfStatus> {
    p.as_ref()
        .ok_or_else(|| fail(PfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn fill(src: &[f64], buf: *mut f64, len: usize) -> Result<(), PfStatus> {
    if buf.is_null() {
        return Err(fail(PfStatus::NullPointer, "buffer is null"));
    }
    if len < src.len() {
        return Err(fail(
            PfStatus::Range,
            format!("buffer holds {len}, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the last failed call on this thread.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Mean photon number of the single-mode cavity driven by the exponential pulse.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn pf_closed_form_n11(
    gamma: f64,
    kappa: f64,
    t: f64,
    t0: f64,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PfStatus::NullPointer, "out is null"));
        }
        if !(gamma > 0.0 && kappa > 0.0) {
            return Err(fail(
                PfStatus::Validation,
                "gamma and kappa must be positive",
            ));
        }
        *out = closed_form_n11(gamma, kappa, t, t0);
        Ok(())
    })
}

/// Parses a TOML configuration with the same keys as the command line.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_config_from_toml(
    toml: *const c_char,
    out: *mut *mut PfConfig,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PfStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let cfg = ConfigLayer::from_toml(text)
            .and_then(RunConfig::resolve)
            .map_err(from_error)?;
        *out = Box::into_raw(Box::new(PfConfig { cfg }));
        Ok(())
    })
}

/// Writes the 64-character content hash and a terminating NUL into `buf`.
///
/// # Safety
/// `cfg` must come from [`pf_config_from_toml`]; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pf_config_hash(
    cfg: *const PfConfig,
    buf: *mut c_char,
    len: usize,
) -> PfStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        if buf.is_null() {
            return Err(fail(PfStatus::NullPointer, "buffer is null"));
        }
        let hash = cfg.cfg.content_hash();
        if len <= hash.len() {
            return Err(fail(
                PfStatus::Range,
                format!("buffer holds {len}, need {}", hash.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from [`pf_config_from_toml`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_config_free(cfg: *mut PfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured experiment to completion.
///
/// # Safety
/// `cfg` must come from [`pf_config_from_toml`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_run(
    cfg: *const PfConfig,
    out: *mut *mut PfEnsemble,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PfStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let cfg = ref_arg(cfg, "cfg")?;
        let result = run_ensemble(&cfg.cfg).map_err(from_error)?;
        let (times, names, mean, stderr) = match &result.me {
            Some(me) => {
                let times = me.column("t").unwrap_or_default();
                let names: Vec<String> = me.columns[1..].to_vec();
                let mean: Vec<Vec<f64>> = names
                    .iter()
                    .map(|c| me.column(c).unwrap_or_default())
                    .collect();
                let stderr = mean.iter().map(|m| vec![0.0; m.len()]).collect();
                (times, names, mean, stderr)
            }
            None => (
                result.times.clone(),
                result.columns.clone(),
                result.mean.clone(),
                result.stderr.clone(),
            ),
        };
        let names = names
            .into_iter()
            .map(|n| CString::new(n).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(PfEnsemble {
            result,
            times,
            names,
            mean,
            stderr,
        }));
        Ok(())
    })
}

/// Number of sampled times; zero when trajectories stop at their first click.
///
/// # Safety
/// `e` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_samples(e: *const PfEnsemble) -> usize {
    e.as_ref()
        .map_or(0, |e| if e.mean.is_empty() { 0 } else { e.times.len() })
}

/// Number of averaged columns.
///
/// # Safety
/// `e` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_columns(e: *const PfEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.mean.len())
}

/// Name of column `c`, owned by the handle; null when out of range.
///
/// # Safety
/// `e` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_column_name(e: *const PfEnsemble, c: usize) -> *const c_char {
    e.as_ref()
        .and_then(|e| e.names.get(c))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// # Safety
/// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_times(
    e: *const PfEnsemble,
    buf: *mut f64,
    len: usize,
) -> PfStatus {
    guard(|| {
        let e = ref_arg(e, "ensemble")?;
        fill(&e.times, buf, len)
    })
}

unsafe fn column(e: *const PfEnsemble, c: usize, se: bool, buf: *mut f64, len: usize) -> PfStatus {
    guard(|| {
        let e = ref_arg(e, "ensemble")?;
        let src = if se { &e.stderr } else { &e.mean };
        let col = src
            .get(c)
            .ok_or_else(|| fail(PfStatus::Range, format!("column {c} of {}", src.len())))?;
        fill(col, buf, len)
    })
}

/// Ensemble mean of column `c` at every sampled time.
///
/// # Safety
/// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_mean(
    e: *const PfEnsemble,
    c: usize,
    buf: *mut f64,
    len: usize,
) -> PfStatus {
    column(e, c, false, buf, len)
}

/// Standard error of the mean of column `c`.
///
/// # Safety
/// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_stderr(
    e: *const PfEnsemble,
    c: usize,
    buf: *mut f64,
    len: usize,
) -> PfStatus {
    column(e, c, true, buf, len)
}

/// Trajectories with zero, one and more clicks (photodetection only).
///
/// # Safety
/// `e` must be a live ensemble handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_counts(
    e: *const PfEnsemble,
    zero: *mut u64,
    one: *mut u64,
    more: *mut u64,
) -> PfStatus {
    guard(|| {
        let e = ref_arg(e, "ensemble")?;
        if zero.is_null() || one.is_null() || more.is_null() {
            return Err(fail(PfStatus::NullPointer, "count output is null"));
        }
        let c = e
            .result
            .counts
            .ok_or_else(|| fail(PfStatus::Validation, "run has no click counts"))?;
        (*zero, *one, *more) = (c.zero, c.one, c.two_or_more);
        Ok(())
    })
}

/// Number of failed trajectories.
///
/// # Safety
/// `e` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_failures(e: *const PfEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.result.failures.len())
}

/// Writes the run's output files under `dir` in the configured format.
///
/// # Safety
/// `e` and `cfg` must be live handles, `e` produced from `cfg`; `dir` a
/// NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_write(
    e: *const PfEnsemble,
    cfg: *const PfConfig,
    dir: *const c_char,
) -> PfStatus {
    guard(|| {
        let e = ref_arg(e, "ensemble")?;
        let mut cfg = ref_arg(cfg, "cfg")?.cfg.clone();
        cfg.output_dir = str_arg(dir, "dir")?.into();
        write_outputs(&e.result, &cfg).map_err(from_error)?;
        Ok(())
    })
}

/// # Safety
/// `e` must be null or come from [`pf_ensemble_run`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_ensemble_free(e: *mut PfEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(pf_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn closed_form_peak() {
        let mut n = 0.0;
        assert_eq!(
            unsafe { pf_closed_form_n11(1.0, 1.0, 2.0, 0.0, &mut n) },
            PfStatus::Ok
        );
        assert!((n - 4.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(
            unsafe { pf_closed_form_n11(-1.0, 1.0, 2.0, 0.0, &mut n) },
            PfStatus::Validation
        );
        assert!(last_error().contains("positive"));
        assert_eq!(
            unsafe { pf_closed_form_n11(1.0, 1.0, 2.0, 0.0, ptr::null_mut()) },
            PfStatus::NullPointer
        );
    }

    #[test]
    fn config_errors_carry_messages() {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("dt = -1.0").unwrap();
        assert_eq!(
            unsafe { pf_config_from_toml(bad.as_ptr(), &mut cfg) },
            PfStatus::Validation
        );
        assert!(cfg.is_null());
        assert!(last_error().contains("dt"));
        assert_eq!(
            unsafe { pf_config_from_toml(ptr::null(), &mut cfg) },
            PfStatus::NullPointer
        );
    }
}
