use std::ffi::{CStr, CString};
use std::ptr;

use ppde_ffi::*;

fn last_error() -> String {
    let p = ppde_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { ppde_string_free(p) };
    s
}

const RICCATI: &str = r#"
[run]
seed = 5
n_paths = 100
[grid]
steps = 200
[nonlinearity]
tag = "power"
p = 2.0
[terminal]
g = "1"
[solver]
backend = "ode_fast_path"
"#;

#[test]
fn path_round_trip() {
    let values = [0.0, 1.0, -3.0, 2.0];
    let mut path = ptr::null_mut();
    let st = unsafe { ppde_path_new(1.0, 3, 1, values.as_ptr(), values.len(), &mut path) };
    assert_eq!(st, PpdeStatus::Ok);
    let mut v = 0.0;
    assert_eq!(
        unsafe { ppde_path_value_at(path, 2.0 / 3.0, 0, &mut v) },
        PpdeStatus::Ok
    );
    assert_eq!(v, -3.0);
    assert_eq!(
        unsafe { ppde_path_sup_norm(path, 1.0 / 3.0, &mut v) },
        PpdeStatus::Ok
    );
    assert_eq!(v, 1.0);
    let e = CString::new("x^2 + 1").unwrap();
    assert_eq!(
        unsafe { ppde_path_eval(path, e.as_ptr(), 1.0, &mut v) },
        PpdeStatus::Ok
    );
    assert_eq!(v, 5.0);
    assert_eq!(
        unsafe { ppde_path_value_at(path, 0.0, 1, &mut v) },
        PpdeStatus::Validation
    );
    assert!(last_error().contains("coordinate"));
    unsafe { ppde_path_free(path) };
}

#[test]
fn bad_path_shape_is_validation() {
    let values = [0.0, 1.0];
    let mut path = ptr::null_mut();
    let st = unsafe { ppde_path_new(1.0, 3, 1, values.as_ptr(), values.len(), &mut path) };
    assert_ne!(st, PpdeStatus::Ok);
    assert!(path.is_null());
}

#[test]
fn experiment_solve_and_override() {
    let text = CString::new(RICCATI).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(
        unsafe { ppde_experiment_new(text.as_ptr(), &mut exp) },
        PpdeStatus::Ok
    );
    let cmd = CString::new("solve").unwrap();
    let (mut v, mut se) = (0.0, 0.0);
    let mut json = ptr::null_mut();
    let st = unsafe { ppde_experiment_run(exp, cmd.as_ptr(), false, &mut v, &mut se, &mut json) };
    assert_eq!(st, PpdeStatus::Ok);
    assert!((v - 0.5).abs() < 1e-6);
    let doc: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { ppde_string_free(json) };
    assert_eq!(doc["subcommand"], "solve");

    let bad = CString::new("run.nope=1").unwrap();
    assert_eq!(
        unsafe { ppde_experiment_set(exp, bad.as_ptr()) },
        PpdeStatus::Validation
    );
    assert!(last_error().contains("nope"));
    // still usable after a rejected override
    let g = CString::new("terminal.g=\"0.5\"").unwrap();
    assert_eq!(
        unsafe { ppde_experiment_set(exp, g.as_ptr()) },
        PpdeStatus::Ok
    );
    let st = unsafe {
        ppde_experiment_run(
            exp,
            cmd.as_ptr(),
            false,
            &mut v,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, PpdeStatus::Ok);
    // u(0) = 1 / (1 / g + T)
    assert!((v - 1.0 / 3.0).abs() < 1e-6);
    unsafe { ppde_experiment_free(exp) };
}

#[test]
fn unknown_subcommand_and_bad_utf8() {
    let text = CString::new(RICCATI).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(
        unsafe { ppde_experiment_new(text.as_ptr(), &mut exp) },
        PpdeStatus::Ok
    );
    let cmd = CString::new("launch").unwrap();
    let st = unsafe {
        ppde_experiment_run(
            exp,
            cmd.as_ptr(),
            false,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, PpdeStatus::Validation);
    let raw = [0xffu8, 0xfe, 0];
    let st = unsafe {
        ppde_experiment_run(
            exp,
            raw.as_ptr().cast(),
            false,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, PpdeStatus::InvalidUtf8);
    unsafe { ppde_experiment_free(exp) };
    assert_eq!(
        unsafe { ppde_experiment_new(ptr::null(), &mut exp) },
        PpdeStatus::NullPointer
    );
}

#[test]
fn numerical_failure_maps_to_numerical() {
    // g leaves the domain of the power nonlinearity
    let text = CString::new(RICCATI.replace("g = \"1\"", "g = \"-1\"")).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(
        unsafe { ppde_experiment_new(text.as_ptr(), &mut exp) },
        PpdeStatus::Ok
    );
    let cmd = CString::new("solve").unwrap();
    let st = unsafe {
        ppde_experiment_run(
            exp,
            cmd.as_ptr(),
            false,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, PpdeStatus::Numerical);
    unsafe { ppde_experiment_free(exp) };
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ppde.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| {
            l.trim()
                .strip_prefix("pub unsafe extern \"C\" fn ")
                .or_else(|| l.trim().strip_prefix("pub extern \"C\" fn "))
        })
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct PpdePath PpdePath;"));
}
