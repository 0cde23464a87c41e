use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use popharvest_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    unsafe {
        ph_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn preset(name: &str) -> *mut PhModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ph_model_preset(name.as_ptr(), &mut m) }, PhStatus::Ok, "{}", last_error());
    m
}

fn solve(m: *const PhModel, h: f64, upper: f64) -> *mut PhSolution {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ph_solve(m, h, upper, 1e-8, 1_000_000, &mut s) }, PhStatus::Ok, "{}", last_error());
    s
}

#[test]
fn logistic_round_trip() {
    let m = preset("logistic_1d");
    unsafe {
        assert_eq!(ph_model_dim(m), 1);
        let s = solve(m, 0.1, 10.0);
        assert!(ph_solution_converged(s));
        assert!(ph_solution_iterations(s) > 0);
        let n = ph_solution_len(s);
        assert_eq!(n, 101);
        let mut values = vec![0.0; n];
        let mut policy = vec![0i32; n];
        assert_eq!(ph_solution_values(s, values.as_mut_ptr(), n), PhStatus::Ok);
        assert_eq!(ph_solution_policy(s, policy.as_mut_ptr(), n), PhStatus::Ok);
        assert!(values[0] > 0.0);
        assert_eq!(policy[0], -1);
        assert_eq!(policy[n - 1], 1);

        let (mut lo, mut hi, mut contiguous) = (0.0, 0.0, false);
        assert_eq!(ph_thresholds_1d(s, &mut lo, &mut hi, &mut contiguous), PhStatus::Ok);
        assert!(contiguous && 0.0 < lo && lo < hi && hi < 10.0);

        let mut v2 = 0.0;
        assert_eq!(ph_solution_value_at(s, [2.0].as_ptr(), 1, &mut v2), PhStatus::Ok);
        assert_eq!(v2, values[20]);

        let mut passed = false;
        let mut len = 0usize;
        let st = ph_audit(m, s, 1000, 1, &mut passed, ptr::null_mut(), 0, &mut len);
        assert_eq!(st, PhStatus::Ok);
        assert!(passed);
        let mut json = vec![0 as c_char; len + 1];
        let st = ph_audit(m, s, 1000, 1, &mut passed, json.as_mut_ptr(), json.len(), ptr::null_mut());
        assert_eq!(st, PhStatus::Ok);
        let text = CStr::from_ptr(json.as_ptr()).to_str().unwrap();
        assert!(text.contains("\"gradient-sandwich\""));

        ph_solution_free(s);
        ph_model_free(m);
    }
}

#[test]
fn estimate_through_the_interface() {
    let m = preset("logistic_1d");
    unsafe {
        let s = solve(m, 0.1, 10.0);
        let mut est = PhEstimate::default();
        let st = ph_estimate_value(m, s, [2.0].as_ptr(), 1, 200, 50.0, 1e-3, 3, &mut est);
        assert_eq!(st, PhStatus::Ok, "{}", last_error());
        assert_eq!(est.paths, 200);
        assert!(est.mean > 15.0 && est.std_error > 0.0, "{est:?}");
        let mut again = PhEstimate::default();
        ph_estimate_value(m, s, [2.0].as_ptr(), 1, 200, 50.0, 1e-3, 3, &mut again);
        assert_eq!(est, again);
        let st = ph_estimate_value(m, s, [20.0].as_ptr(), 1, 10, 1.0, 1e-3, 3, &mut est);
        assert_eq!(st, PhStatus::InvalidArgument);
        ph_solution_free(s);
        ph_model_free(m);
    }
}

#[test]
fn scenario_documents_carry_their_grid() {
    let doc =
        CString::new(r#"{"preset": "predator_prey_2d", "grid": {"h": 0.25, "upper": 5}, "output": "unused"}"#).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(ph_model_from_scenario(doc.as_ptr(), &mut m), PhStatus::Ok, "{}", last_error());
        assert_eq!(ph_model_dim(m), 2);
        let mut s = ptr::null_mut();
        assert_eq!(ph_solve_scenario(m, &mut s), PhStatus::Ok);
        assert_eq!(ph_solution_len(s), 21 * 21);
        let (mut lo, mut hi, mut c) = (0.0, 0.0, false);
        assert_eq!(ph_thresholds_1d(s, &mut lo, &mut hi, &mut c), PhStatus::InvalidArgument);
        let mut policy = vec![0i32; 21 * 21];
        assert_eq!(ph_solution_policy(s, policy.as_mut_ptr(), policy.len()), PhStatus::Ok);
        // no prey, some predators: harvest predators
        assert!((1..21).all(|k| policy[k] == 2));
        ph_solution_free(s);
        ph_model_free(m);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new("logistic_3d").unwrap();
        assert_eq!(ph_model_preset(bad.as_ptr(), &mut m), PhStatus::InvalidArgument);
        assert!(m.is_null());
        assert!(last_error().contains("logistic_3d"));
        assert_eq!(ph_model_preset(ptr::null(), &mut m), PhStatus::NullPointer);

        let assumption = CString::new(
            r#"{"preset": "logistic_1d", "params": {"b": 3, "c": 2, "sigma": 1, "harvest_price": [2], "seed_cost": [1]}, "grid": {"h": 0.1, "upper": 10}, "output": "o"}"#,
        )
        .unwrap();
        assert_eq!(ph_model_from_scenario(assumption.as_ptr(), &mut m), PhStatus::Assumption);
        assert!(last_error().contains("price-gap"));

        let m = preset("logistic_1d");
        let mut s = ptr::null_mut();
        assert_eq!(ph_solve(m, 0.3, 10.0, 1e-8, 10, &mut s), PhStatus::InvalidArgument);
        assert_eq!(ph_solve_scenario(m, &mut s), PhStatus::InvalidArgument);
        let s = solve(m, 0.5, 10.0);
        let mut small = [0.0; 3];
        assert_eq!(ph_solution_values(s, small.as_mut_ptr(), 3), PhStatus::BufferTooSmall);
        assert_eq!(ph_solution_values(s, ptr::null_mut(), 100), PhStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(ph_solution_value_at(s, [1.0, 1.0].as_ptr(), 2, &mut v), PhStatus::InvalidArgument);
        assert_eq!(ph_solution_len(ptr::null()), 0);
        assert!(!ph_solution_converged(ptr::null()));
        ph_solution_free(s);
        ph_model_free(m);
        ph_model_free(ptr::null_mut());
        ph_solution_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_clears() {
    unsafe {
        let mut m = ptr::null_mut();
        ph_model_preset(ptr::null(), &mut m);
        let full = ph_last_error(ptr::null_mut(), 0);
        assert!(full > 4);
        let mut buf = [1 as c_char; 4];
        assert_eq!(ph_last_error(buf.as_mut_ptr(), 4), full);
        assert_eq!(buf[3], 0);
        let m = preset("competition_2d");
        assert_eq!(ph_last_error(ptr::null_mut(), 0), 0);
        ph_model_free(m);
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpopharvest_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let out = tempfile_path("ph_smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&out)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&out).env("POPHARVEST_THREADS", "1").output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{:?} {}", run.status, String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("V(0)="));
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}_{}", std::process::id()))
}
