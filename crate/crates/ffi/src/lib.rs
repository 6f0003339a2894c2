//! C interface to `chaincs`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_preset`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`ChaincsStatus`]; on failure the message is available from
//! [`chaincs_last_error_message`] on the same thread. Panics are caught and
//! reported as [`ChaincsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chaincs::algebra::{Element, NilpotentAlgebra, StructureConstants};
use chaincs::config::RunConfig;
use chaincs::lcs::{ControlFunction, ControlSystem};
use chaincs::pipeline::{cmd_chainset, cmd_conjugate, cmd_decompose, cmd_simulate};
use chaincs::report::write_outputs;
use chaincs::Error;
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChaincsStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// The input failed a structural or numerical validation.
    Validation = 2,
    /// The run completed but a theorem check failed.
    TheoremFailed = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque nilpotent Lie algebra.
pub struct ChaincsAlgebra {
    inner: NilpotentAlgebra,
}

/// Opaque control system together with the config it came from.
pub struct ChaincsSystem {
    config: RunConfig,
    inner: ControlSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> ChaincsStatus {
    match e {
        Error::Io(_) => ChaincsStatus::Io,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => ChaincsStatus::InvalidArgument,
        _ => ChaincsStatus::Validation,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<ChaincsStatus, (ChaincsStatus, String)>) -> ChaincsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            ChaincsStatus::Panic
        }
    }
}

fn lib<T>(r: chaincs::Result<T>) -> Result<T, (ChaincsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn bad(msg: &str) -> (ChaincsStatus, String) {
    (ChaincsStatus::InvalidArgument, msg.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ChaincsStatus, String)> {
    if p.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(&format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (ChaincsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ChaincsStatus, String)> {
    p.as_ref().ok_or_else(|| bad(&format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), (ChaincsStatus, String)> {
    if p.is_null() {
        Err(bad(&format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn into_cstring(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn chaincs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn chaincs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Bundled algebra by name (`heisenberg3`, `filiform4`, `abelian:N`, ...).
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_preset(name: *const c_char, out: *mut *mut ChaincsAlgebra) -> ChaincsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let name = str_arg(name, "name")?;
        let inner = lib(NilpotentAlgebra::preset(name))?;
        *out = Box::into_raw(Box::new(ChaincsAlgebra { inner }));
        Ok(ChaincsStatus::Ok)
    })
}

/// Algebra from dense structure constants, `c[(i*dim + j)*dim + k]` being the
/// coefficient of `e_k` in `[e_i, e_j]`.
///
/// # Safety
/// `c` must hold `dim^3` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_new(
    dim: usize,
    c: *const f64,
    out: *mut *mut ChaincsAlgebra,
) -> ChaincsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let len = dim.checked_pow(3).ok_or_else(|| bad("dim too large"))?;
        let c = slice_arg(c, len, "c")?;
        let sc = lib(StructureConstants::from_dense(dim, c.to_vec()))?;
        let inner = lib(NilpotentAlgebra::new(sc))?;
        *out = Box::into_raw(Box::new(ChaincsAlgebra { inner }));
        Ok(ChaincsStatus::Ok)
    })
}

/// # Safety
/// `a` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_free(a: *mut ChaincsAlgebra) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Dimension, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_dim(a: *const ChaincsAlgebra) -> usize {
    a.as_ref().map_or(0, |a| a.inner.dim())
}

/// Nilpotency class, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_class(a: *const ChaincsAlgebra) -> usize {
    a.as_ref().map_or(0, |a| a.inner.class())
}

/// Group product `x * y` in exponential coordinates; all arrays have length
/// `n`, which must equal the dimension.
///
/// # Safety
/// `x`, `y` and `out` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn chaincs_algebra_product(
    a: *const ChaincsAlgebra,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
    n: usize,
) -> ChaincsStatus {
    guard(|| {
        let a = ref_arg(a, "algebra")?;
        out_arg(out, "out")?;
        if n != a.inner.dim() {
            return Err(bad("length does not match the dimension"));
        }
        let x = Element::from_row_slice(slice_arg(x, n, "x")?);
        let y = Element::from_row_slice(slice_arg(y, n, "y")?);
        let p = lib(a.inner.bch_product(&x, &y))?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(p.as_slice());
        Ok(ChaincsStatus::Ok)
    })
}

fn system_of(config: RunConfig) -> Result<*mut ChaincsSystem, (ChaincsStatus, String)> {
    let inner = lib(config.system())?;
    Ok(Box::into_raw(Box::new(ChaincsSystem { config, inner })))
}

/// System from config text (TOML).
///
/// # Safety
/// `config` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_new(config: *const c_char, out: *mut *mut ChaincsSystem) -> ChaincsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = lib(RunConfig::parse(str_arg(config, "config")?))?;
        *out = system_of(cfg)?;
        Ok(ChaincsStatus::Ok)
    })
}

/// System from a bundled preset name.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_preset(name: *const c_char, out: *mut *mut ChaincsSystem) -> ChaincsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = lib(RunConfig::preset(str_arg(name, "name")?))?;
        *out = system_of(cfg)?;
        Ok(ChaincsStatus::Ok)
    })
}

/// # Safety
/// `s` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_free(s: *mut ChaincsSystem) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Dimension of the nilpotent part, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_dim(s: *const ChaincsSystem) -> usize {
    s.as_ref().map_or(0, |s| s.inner.group().dim())
}

/// Torus dimension, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_torus_dim(s: *const ChaincsSystem) -> usize {
    s.as_ref().map_or(0, |s| s.inner.group().torus_dim())
}

/// Control dimension, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_control_dim(s: *const ChaincsSystem) -> usize {
    s.as_ref().map_or(0, |s| s.inner.control_dim())
}

/// Solution at time `t >= 0` from `(h0, x0)` under the constant control `u`.
/// `h0`/`h_out` have the torus dimension, `x0`/`x_out` the nilpotent one and
/// `u` the control dimension.
///
/// # Safety
/// Every array must hold the number of values given by the matching
/// dimension query.
#[no_mangle]
pub unsafe extern "C" fn chaincs_system_solve(
    s: *const ChaincsSystem,
    t: f64,
    h0: *const f64,
    x0: *const f64,
    u: *const f64,
    h_out: *mut f64,
    x_out: *mut f64,
) -> ChaincsStatus {
    guard(|| {
        let s = ref_arg(s, "system")?;
        let (k, n, m) = (s.inner.group().torus_dim(), s.inner.group().dim(), s.inner.control_dim());
        if k > 0 {
            out_arg(h_out, "h_out")?;
        }
        out_arg(x_out, "x_out")?;
        let h0 = DVector::from_row_slice(slice_arg(h0, k, "h0")?);
        let x0 = Element::from_row_slice(slice_arg(x0, n, "x0")?);
        let u = DVector::from_row_slice(slice_arg(u, m, "u")?);
        let g0 = lib(s.inner.group().point(h0, x0))?;
        let ctl = lib(ControlFunction::constant(u, 0.0, t.max(0.0)))?;
        let end = lib(s.inner.solve(t, &g0, &ctl))?;
        if k > 0 {
            std::slice::from_raw_parts_mut(h_out, k).copy_from_slice(end.h.as_slice());
        }
        std::slice::from_raw_parts_mut(x_out, n).copy_from_slice(end.x.as_slice());
        Ok(ChaincsStatus::Ok)
    })
}

/// Runs `command` (`decompose`, `simulate`, `chainset` or `conjugate`) on the
/// system's config. On `Ok` or `TheoremFailed`, `*json_out` receives the
/// report body, to be released with [`chaincs_string_free`]. When `out_dir`
/// is non-null the usual output files are written there too.
///
/// # Safety
/// `command` must be a nul-terminated string, `out_dir` null or one, and
/// `json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn chaincs_run_json(
    s: *const ChaincsSystem,
    command: *const c_char,
    out_dir: *const c_char,
    json_out: *mut *mut c_char,
) -> ChaincsStatus {
    guard(|| {
        let s = ref_arg(s, "system")?;
        out_arg(json_out, "json_out")?;
        let cmd = match str_arg(command, "command")? {
            "decompose" => cmd_decompose,
            "simulate" => cmd_simulate,
            "chainset" => cmd_chainset,
            "conjugate" => cmd_conjugate,
            other => return Err(bad(&format!("unknown command {other:?}"))),
        };
        let run = lib(cmd(&s.config))?;
        if !out_dir.is_null() {
            let dir = str_arg(out_dir, "out_dir")?;
            lib(write_outputs(Path::new(dir), &run, &s.config.output))?;
        }
        *json_out = into_cstring(run.report.to_json());
        let status = match run.report.exit_code() {
            0 => ChaincsStatus::Ok,
            3 => ChaincsStatus::TheoremFailed,
            _ => {
                let names: Vec<String> = run.report.residuals.failures().iter().map(|r| r.name.clone()).collect();
                set_error(format!("residuals out of tolerance: {}", names.join(", ")));
                ChaincsStatus::Validation
            }
        };
        Ok(status)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        let p = chaincs_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
    }

    #[test]
    fn algebra_round_trip() {
        let mut a = ptr::null_mut();
        unsafe {
            assert_eq!(chaincs_algebra_preset(c("heisenberg3").as_ptr(), &mut a), ChaincsStatus::Ok);
            assert_eq!(chaincs_algebra_dim(a), 3);
            assert_eq!(chaincs_algebra_class(a), 2);
            let (x, y) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
            let mut out = [0.0; 3];
            assert_eq!(chaincs_algebra_product(a, x.as_ptr(), y.as_ptr(), out.as_mut_ptr(), 3), ChaincsStatus::Ok);
            // x*y = x + y + [x,y]/2 with [e1,e2] = e3
            assert_eq!(out, [1.0, 1.0, 0.5]);
            assert_eq!(
                chaincs_algebra_product(a, x.as_ptr(), y.as_ptr(), out.as_mut_ptr(), 2),
                ChaincsStatus::InvalidArgument
            );
            chaincs_algebra_free(a);
        }
    }

    #[test]
    fn dense_constants_and_jacobi_failure() {
        let n = 3;
        let mut cst = vec![0.0; n * n * n];
        let set = |cst: &mut Vec<f64>, i: usize, j: usize, k: usize, v: f64| {
            cst[(i * n + j) * n + k] = v;
            cst[(j * n + i) * n + k] = -v;
        };
        set(&mut cst, 0, 1, 2, 1.0);
        let mut a = ptr::null_mut();
        unsafe {
            assert_eq!(chaincs_algebra_new(n, cst.as_ptr(), &mut a), ChaincsStatus::Ok);
            assert_eq!(chaincs_algebra_class(a), 2);
            chaincs_algebra_free(a);
        }
        set(&mut cst, 0, 2, 0, 1.0);
        set(&mut cst, 1, 2, 1, 1.0);
        let mut b = ptr::null_mut();
        let st = unsafe { chaincs_algebra_new(n, cst.as_ptr(), &mut b) };
        assert_eq!(st, ChaincsStatus::Validation);
        assert!(b.is_null());
        assert!(!last_error().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut a = ptr::null_mut();
        unsafe {
            assert_eq!(chaincs_algebra_preset(ptr::null(), &mut a), ChaincsStatus::InvalidArgument);
            assert!(last_error().contains("null"));
            assert_eq!(chaincs_algebra_preset(c("heisenberg3").as_ptr(), ptr::null_mut()), ChaincsStatus::InvalidArgument);
            assert_eq!(chaincs_algebra_dim(ptr::null()), 0);
            chaincs_algebra_free(ptr::null_mut());
            chaincs_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn system_solve_matches_closed_form() {
        let mut s = ptr::null_mut();
        unsafe {
            assert_eq!(chaincs_system_preset(c("scalar-stable").as_ptr(), &mut s), ChaincsStatus::Ok);
            assert_eq!((chaincs_system_dim(s), chaincs_system_torus_dim(s), chaincs_system_control_dim(s)), (1, 0, 1));
            let mut x = [0.0];
            let st = chaincs_system_solve(s, 1.0, ptr::null(), [0.5].as_ptr(), [1.0].as_ptr(), ptr::null_mut(), x.as_mut_ptr());
            assert_eq!(st, ChaincsStatus::Ok);
            // x' = -x + 1
            let want = 1.0 + (0.5 - 1.0) * (-1.0f64).exp();
            assert!((x[0] - want).abs() < 1e-8);
            chaincs_system_free(s);
        }
    }

    #[test]
    fn run_json_reports_and_statuses() {
        let mut s = ptr::null_mut();
        let mut json = ptr::null_mut();
        unsafe {
            assert_eq!(chaincs_system_preset(c("scalar-unstable").as_ptr(), &mut s), ChaincsStatus::Ok);
            let dir = std::env::temp_dir().join(format!("chaincs-ffi-{}", std::process::id()));
            let d = c(dir.to_str().unwrap());
            assert_eq!(chaincs_run_json(s, c("chainset").as_ptr(), d.as_ptr(), &mut json), ChaincsStatus::Ok);
            let body: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
            assert_eq!(body["outcome"], "pass");
            assert!(dir.join("report.json").exists());
            chaincs_string_free(json);
            let _ = std::fs::remove_dir_all(&dir);
            assert_eq!(
                chaincs_run_json(s, c("explode").as_ptr(), ptr::null(), &mut json),
                ChaincsStatus::InvalidArgument
            );
            assert_eq!(
                chaincs_run_json(s, c("simulate").as_ptr(), ptr::null(), &mut json),
                ChaincsStatus::Ok
            );
            chaincs_string_free(json);
            chaincs_system_free(s);
        }
    }

    #[test]
    fn config_text_errors_are_validation() {
        let mut s = ptr::null_mut();
        let st = unsafe { chaincs_system_new(c("schema_version = 99").as_ptr(), &mut s) };
        assert_eq!(st, ChaincsStatus::Validation);
        assert!(s.is_null());
    }
}
