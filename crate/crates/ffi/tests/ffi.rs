use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use conjlogit_ffi::*;

fn ln2_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("ln2.csv");
    std::fs::write(&path, "household,category,occasion,y,x1\n1,0,0,0,1\n").unwrap();
    path
}

fn last_error() -> String {
    let p = conjlogit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn exp_vs_gamma_round_trips_and_reports_domain_errors() {
    let mut v = 0.0;
    let s = unsafe { conjlogit_exp_vs_gamma(2.0, 5.0, 14.0, &mut v) };
    assert_eq!(s, ConjlogitStatus::Ok);
    assert!((v - 11f64.powi(-14)).abs() <= 1e-14 * v);
    assert!(conjlogit_last_error().is_null());
    let s = unsafe { conjlogit_exp_vs_gamma(-1.0, 1.0, 1.0, &mut v) };
    assert_eq!(s, ConjlogitStatus::Domain);
    assert!(last_error().contains("domain"));
}

#[test]
fn null_arguments_are_rejected() {
    let s = unsafe { conjlogit_exp_vs_gamma(1.0, 1.0, 1.0, ptr::null_mut()) };
    assert_eq!(s, ConjlogitStatus::NullArgument);
    let mut ds = ptr::null_mut();
    let s = unsafe { conjlogit_dataset_load(ptr::null(), &mut ds) };
    assert_eq!(s, ConjlogitStatus::NullArgument);
    assert!(ds.is_null());
    assert_eq!(unsafe { conjlogit_dataset_households(ptr::null()) }, 0);
    unsafe {
        conjlogit_dataset_free(ptr::null_mut());
        conjlogit_spec_free(ptr::null_mut());
        conjlogit_workspace_free(ptr::null_mut());
    }
}

#[test]
fn log_marginal_of_the_ln2_household() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(ln2_dataset(dir.path()).to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(conjlogit_dataset_load(path.as_ptr(), &mut ds), ConjlogitStatus::Ok);
        assert_eq!(conjlogit_dataset_households(ds), 1);
        assert_eq!(conjlogit_dataset_attributes(ds), 1);
        let mut ws = ptr::null_mut();
        assert_eq!(conjlogit_workspace_new(ds, 200, &mut ws), ConjlogitStatus::Ok);
        conjlogit_dataset_free(ds);

        let (b, n) = ([1.0], [1.0]);
        let mut spec = ptr::null_mut();
        assert_eq!(conjlogit_spec_gamma(b.as_ptr(), n.as_ptr(), 1, 0.0, &mut spec), ConjlogitStatus::Ok);
        let (mut ll, mut spread) = (0.0, 0.0);
        assert_eq!(conjlogit_log_marginal(ws, spec, &mut ll, &mut spread), ConjlogitStatus::Ok);
        // H_R = sum_{k <= R} (-1)^k / (1 + k) brackets ln 2 within its last term
        assert!((ll.exp() - 2f64.ln()).abs() < 1.0 / 201.0);
        assert!(spread > 0.0 && spread < 0.05);
        assert_eq!(conjlogit_log_marginal(ws, spec, &mut ll, ptr::null_mut()), ConjlogitStatus::Ok);

        let centers = [1.0, 1.0];
        let counts = [3usize, 3];
        let spacing = [0.25, 0.25];
        let mut best = [0.0; 2];
        assert_eq!(
            conjlogit_grid_fit_gamma(ws, centers.as_ptr(), counts.as_ptr(), spacing.as_ptr(), 2, best.as_mut_ptr(), &mut ll),
            ConjlogitStatus::Ok
        );
        assert!(best.iter().all(|v| *v > 0.0));
        assert_eq!(
            conjlogit_grid_fit_gamma(ws, centers.as_ptr(), counts.as_ptr(), spacing.as_ptr(), 1, best.as_mut_ptr(), &mut ll),
            ConjlogitStatus::Config
        );

        let mut bad = ptr::null_mut();
        let json = CString::new(r#"{"family":"independent_gamma","b":[2.0]}"#).unwrap();
        assert_eq!(conjlogit_spec_from_json(json.as_ptr(), &mut bad), ConjlogitStatus::Parse);
        assert!(bad.is_null());
        let json = CString::new(r#"{"family":"independent_gamma","b":[1.0,1.0],"n":[1.0,1.0]}"#).unwrap();
        let mut two = ptr::null_mut();
        assert_eq!(conjlogit_spec_from_json(json.as_ptr(), &mut two), ConjlogitStatus::Ok);
        assert_eq!(conjlogit_log_marginal(ws, two, &mut ll, ptr::null_mut()), ConjlogitStatus::InvalidSpec);
        conjlogit_spec_free(two);
        conjlogit_spec_free(spec);
        conjlogit_workspace_free(ws);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let path = CString::new("/nonexistent/conjlogit.csv").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { conjlogit_dataset_load(path.as_ptr(), &mut ds) }, ConjlogitStatus::Io);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(conjlogit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_the_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("conjlogit.h").exists());
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libconjlogit_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let data = ln2_dataset(dir.path());
    let out = Command::new(&exe).arg(&data).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let ll: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!((ll.exp() - 2f64.ln()).abs() < 1.0 / 201.0);
}
