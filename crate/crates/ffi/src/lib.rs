//! C interface to `ppde`.
//!
//! Every entry point returns a [`PpdeStatus`]; on failure the message is
//! kept per thread and can be fetched with [`ppde_last_error`]. Strings
//! handed out by this library must be released with [`ppde_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ppde::app::{run, Command, RunOptions};
use ppde::config::{apply_override, parse_tree, ExperimentConfig};
use ppde::error::Error;
use ppde::expr::Expr;
use ppde::path::{DiscretePath, TimeGrid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpdeStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numerical = 3,
    InvalidUtf8 = 4,
    Panic = 5,
}

/// Opaque sampled path.
pub struct PpdePath {
    inner: DiscretePath,
}

/// Opaque experiment: a config tree plus its parsed form.
pub struct PpdeExperiment {
    tree: serde_json::Value,
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PpdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpdeStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PpdeStatus::NullPointer
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(format!("invalid UTF-8 in {what}"));
            PpdeStatus::InvalidUtf8
        }
        Ok(Err(Fail::Core(e))) => {
            let status = if e.is_validation() {
                PpdeStatus::Validation
            } else {
                PpdeStatus::Numerical
            };
            set_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PpdeStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

/// Message of the last failed call on this thread, or null. Free with
/// `ppde_string_free`.
#[no_mangle]
pub extern "C" fn ppde_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ppde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a path on a uniform grid of `steps` steps over `[0, horizon]`.
/// `values` holds `(steps + 1) * dim` numbers, node by node.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out_path` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_path_new(
    horizon: f64,
    steps: usize,
    dim: usize,
    values: *const f64,
    len: usize,
    out_path: *mut *mut PpdePath,
) -> PpdeStatus {
    guard(|| {
        let slot = out(out_path, "out_path")?;
        if values.is_null() {
            return Err(Fail::Null("values"));
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let grid = std::sync::Arc::new(TimeGrid::uniform(horizon, steps)?);
        let inner = DiscretePath::new(grid, dim, data)?;
        *slot = Box::into_raw(Box::new(PpdePath { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must come from `ppde_path_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn ppde_path_free(path: *mut PpdePath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Coordinate `coord` (zero based) at time `t`.
///
/// # Safety
/// `path` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_path_value_at(
    path: *const PpdePath,
    t: f64,
    coord: usize,
    out_value: *mut f64,
) -> PpdeStatus {
    guard(|| {
        let p = &handle(path, "path")?.inner;
        let slot = out(out_value, "out_value")?;
        p.grid().check_time(t, "t")?;
        if coord >= p.dim() {
            return Err(Error::Validation(format!(
                "coordinate {coord} out of range for dimension {}",
                p.dim()
            ))
            .into());
        }
        *slot = p.coord_at(t, coord);
        Ok(())
    })
}

/// Sup norm of the path stopped at `t`.
///
/// # Safety
/// `path` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_path_sup_norm(
    path: *const PpdePath,
    t: f64,
    out_value: *mut f64,
) -> PpdeStatus {
    guard(|| {
        let p = &handle(path, "path")?.inner;
        let slot = out(out_value, "out_value")?;
        *slot = p.stop(t)?.sup_norm();
        Ok(())
    })
}

/// Evaluates a functional expression such as `"x^2 + int_x"` at `(t, path)`.
///
/// # Safety
/// `path` must be a live handle, `expr` a C string and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_path_eval(
    path: *const PpdePath,
    expr: *const c_char,
    t: f64,
    out_value: *mut f64,
) -> PpdeStatus {
    guard(|| {
        let p = &handle(path, "path")?.inner;
        let src = text(expr, "expr")?;
        let slot = out(out_value, "out_value")?;
        p.grid().check_time(t, "t")?;
        let u = Expr::parse(src)?.to_functional(p.dim(), p.horizon())?;
        *slot = u.eval(t, &p.stop(t)?);
        Ok(())
    })
}

/// Parses an experiment from TOML or JSON text.
///
/// # Safety
/// `config` must be a C string and `out_experiment` writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_experiment_new(
    config: *const c_char,
    out_experiment: *mut *mut PpdeExperiment,
) -> PpdeStatus {
    guard(|| {
        let src = text(config, "config")?;
        let slot = out(out_experiment, "out_experiment")?;
        let tree = parse_tree(src)?;
        let config = ExperimentConfig::from_tree(tree.clone())?;
        *slot = Box::into_raw(Box::new(PpdeExperiment { tree, config }));
        Ok(())
    })
}

/// Applies a `key.path=value` override. The experiment is unchanged on
/// failure.
///
/// # Safety
/// `experiment` must be a live handle and `assignment` a C string.
#[no_mangle]
pub unsafe extern "C" fn ppde_experiment_set(
    experiment: *mut PpdeExperiment,
    assignment: *const c_char,
) -> PpdeStatus {
    guard(|| {
        let exp = experiment.as_mut().ok_or(Fail::Null("experiment"))?;
        let a = text(assignment, "assignment")?;
        let mut tree = exp.tree.clone();
        apply_override(&mut tree, a)?;
        exp.config = ExperimentConfig::from_tree(tree.clone())?;
        exp.tree = tree;
        Ok(())
    })
}

/// # Safety
/// `experiment` must come from `ppde_experiment_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn ppde_experiment_free(experiment: *mut PpdeExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// Runs a subcommand (`"solve"`, `"fk"`, ...). Any of the out pointers may
/// be null. `out_json` receives the full result document.
///
/// # Safety
/// `experiment` must be a live handle, `subcommand` a C string, and each
/// non-null out pointer writable.
#[no_mangle]
pub unsafe extern "C" fn ppde_experiment_run(
    experiment: *const PpdeExperiment,
    subcommand: *const c_char,
    unsafe_u: bool,
    out_value: *mut f64,
    out_std_error: *mut f64,
    out_json: *mut *mut c_char,
) -> PpdeStatus {
    guard(|| {
        let exp = handle(experiment, "experiment")?;
        let cmd: Command = text(subcommand, "subcommand")?.parse()?;
        let outcome = run(cmd, &exp.config, &RunOptions { unsafe_u })?;
        let number = |k: &str| outcome.json[k].as_f64().unwrap_or(f64::NAN);
        if let Some(v) = out_value.as_mut() {
            *v = number("value");
        }
        if let Some(v) = out_std_error.as_mut() {
            *v = number("std_error");
        }
        if let Some(v) = out_json.as_mut() {
            let s = serde_json::to_string(&outcome.json).expect("json serializes");
            *v = CString::new(s).unwrap_or_default().into_raw();
        }
        Ok(())
    })
}
