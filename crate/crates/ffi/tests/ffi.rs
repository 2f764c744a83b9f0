use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dpmem_ffi::*;

fn new_estimator(spec: &str, seed: u64) -> Result<*mut DpmemEstimator, DpmemStatus> {
    let spec = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    match unsafe { dpmem_estimator_new(spec.as_ptr(), seed, &mut out) } {
        DpmemStatus::Ok => Ok(out),
        s => Err(s),
    }
}

fn last_error() -> String {
    let p = dpmem_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn update(kind: DpmemUpdateKind, user: u32, value: u32) -> DpmemUpdate {
    DpmemUpdate { kind, user, value }
}

fn snapshot(est: *mut DpmemEstimator) -> Vec<u8> {
    let mut len = 0;
    assert_eq!(unsafe { dpmem_estimator_snapshot_len(est, &mut len) }, DpmemStatus::Ok);
    let mut buf = vec![0u8; len];
    let mut written = 0;
    assert_eq!(
        unsafe { dpmem_estimator_snapshot_copy(est, buf.as_mut_ptr(), buf.len(), &mut written) },
        DpmemStatus::Ok
    );
    assert_eq!(written, len);
    buf
}

#[test]
fn exact_counter_round_trip() {
    let est = new_estimator(r#"{"name":"exact_counter"}"#, 0).unwrap();
    for u in 0..5 {
        assert_eq!(unsafe { dpmem_estimator_process(est, &update(DpmemUpdateKind::Insert, u, 0)) }, DpmemStatus::Ok);
    }
    unsafe { dpmem_estimator_process(est, &update(DpmemUpdateKind::Delete, 2, 0)) };
    let mut c = 0.0;
    assert_eq!(unsafe { dpmem_estimator_query_count(est, &mut c) }, DpmemStatus::Ok);
    assert_eq!(c, 4.0);

    let bytes = snapshot(est);
    let copy = new_estimator(r#"{"name":"exact_counter"}"#, 0).unwrap();
    assert_eq!(unsafe { dpmem_estimator_restore(copy, bytes.as_ptr(), bytes.len()) }, DpmemStatus::Ok);
    let mut c2 = 0.0;
    unsafe { dpmem_estimator_query_count(copy, &mut c2) };
    assert_eq!(c2, 4.0);
    unsafe {
        dpmem_estimator_free(est);
        dpmem_estimator_free(copy);
        dpmem_estimator_free(ptr::null_mut());
    }
}

#[test]
fn noisy_counter_restores_noise_tape() {
    let spec = r#"{"name":"capped_dp_counter","params":{"cap":8,"epsilon":0.5,"delta":1e-9}}"#;
    let a = new_estimator(spec, 3).unwrap();
    for u in 0..10 {
        unsafe { dpmem_estimator_process(a, &update(DpmemUpdateKind::Insert, u, 0)) };
    }
    let bytes = snapshot(a);
    let b = new_estimator(spec, 99).unwrap();
    unsafe { dpmem_estimator_restore(b, bytes.as_ptr(), bytes.len()) };
    for _ in 0..5 {
        let (mut x, mut y) = (0.0, 0.0);
        unsafe {
            dpmem_estimator_query_count(a, &mut x);
            dpmem_estimator_query_count(b, &mut y);
        }
        assert_eq!(x.to_bits(), y.to_bits());
    }
    unsafe {
        dpmem_estimator_free(a);
        dpmem_estimator_free(b);
    }
}

#[test]
fn selection_queries() {
    let q = new_estimator(r#"{"name":"exact_quantile","params":{"u":2,"population":10}}"#, 0).unwrap();
    for u in 0..6 {
        unsafe { dpmem_estimator_process(q, &update(DpmemUpdateKind::ItemChange, u, 0)) };
    }
    let mut item = 9;
    assert_eq!(unsafe { dpmem_estimator_query_rank(q, 5, &mut item) }, DpmemStatus::Ok);
    assert_eq!(item, 0);
    unsafe { dpmem_estimator_query_rank(q, 7, &mut item) };
    assert_eq!(item, 1);
    let mut c = 0.0;
    assert_eq!(unsafe { dpmem_estimator_query_count(q, &mut c) }, DpmemStatus::Unsupported);
    assert!(last_error().contains("not supported"));

    let m = new_estimator(r#"{"name":"exact_maxselect","params":{"d":2}}"#, 0).unwrap();
    unsafe { dpmem_estimator_process(m, &update(DpmemUpdateKind::FeatureFlip, 1, 1)) };
    let mut f = 0;
    assert_eq!(unsafe { dpmem_estimator_query_max_feature(m, &mut f) }, DpmemStatus::Ok);
    assert_eq!(f, 1);
    unsafe {
        dpmem_estimator_free(q);
        dpmem_estimator_free(m);
    }
}

#[test]
fn error_codes() {
    assert_eq!(new_estimator(r#"{"name":"nope"}"#, 0).unwrap_err(), DpmemStatus::InvalidArgument);
    assert!(last_error().contains("nope"));
    // Unresolved optional parameter.
    assert_eq!(
        new_estimator(r#"{"name":"capped_dp_counter","params":{}}"#, 0).unwrap_err(),
        DpmemStatus::InvalidArgument
    );
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dpmem_estimator_new(ptr::null(), 0, &mut out) }, DpmemStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { dpmem_estimator_new(bad.as_ptr().cast(), 0, &mut out) },
        DpmemStatus::InvalidUtf8
    );

    let est = new_estimator(r#"{"name":"exact_counter"}"#, 0).unwrap();
    unsafe { dpmem_estimator_process(est, &update(DpmemUpdateKind::Insert, 1, 0)) };
    let mut written = 0;
    let mut small = [0u8; 2];
    assert_eq!(
        unsafe { dpmem_estimator_snapshot_copy(est, small.as_mut_ptr(), small.len(), &mut written) },
        DpmemStatus::BufferTooSmall
    );
    assert!(written > 2);
    let junk = [42u8, 1, 2];
    assert_eq!(unsafe { dpmem_estimator_restore(est, junk.as_ptr(), junk.len()) }, DpmemStatus::Snapshot);
    assert_eq!(
        unsafe { dpmem_estimator_process(est, &update(DpmemUpdateKind::FeatureFlip, 1, 0)) },
        DpmemStatus::InvalidArgument
    );
    let mut c = 0.0;
    assert_eq!(unsafe { dpmem_estimator_query_count(ptr::null_mut(), &mut c) }, DpmemStatus::NullPointer);
    // A successful call clears the message.
    assert_eq!(unsafe { dpmem_estimator_query_count(est, &mut c) }, DpmemStatus::Ok);
    assert!(dpmem_last_error().is_null());
    unsafe { dpmem_estimator_free(est) };
}

#[test]
fn bounds_match_core() {
    let mut v = 0.0;
    assert_eq!(unsafe { dpmem_log_binom(52.0, 5.0, &mut v) }, DpmemStatus::Ok);
    assert!((v - 2_598_960f64.ln()).abs() < 1e-9);
    assert_eq!(unsafe { dpmem_log_binom(3.0, 5.0, &mut v) }, DpmemStatus::InvalidArgument);

    let mut b = DpmemCommBound::default();
    assert_eq!(
        unsafe { dpmem_comm_lower_bound_exact(1000.0, 100.0, 0.08, 0.02, 1.0, &mut b) },
        DpmemStatus::Ok
    );
    let core = dpmem::bounds::comm_lower_bound_exact(1000.0, 100.0, 0.08, 0.02, 1.0).unwrap();
    assert_eq!(b.main_bits, core.main_bits);
    assert_eq!(
        unsafe { dpmem_comm_lower_bound_stirling(1000.0, 100.0, 0.5, 0.02, 1.0, &mut b) },
        DpmemStatus::InvalidArgument
    );

    let (mut value, mut exponent) = (0.0, 0.0);
    let a = 0.05;
    assert_eq!(
        unsafe { dpmem_theorem_bound(1e6, 2.0 / 3.0 - 4.0 * a, 1.0 / 3.0 - 2.0 * a, 1.0 / 3.0 - a, &mut value, &mut exponent) },
        DpmemStatus::Ok
    );
    assert!((exponent - (1.0 / 3.0 - 4.0 * a)).abs() < 1e-12);
    assert_eq!(unsafe { dpmem_encoding_bound(1000.0, 10.0, 1000.0, 10.0, &mut v) }, DpmemStatus::Ok);
    assert!((v + 10f64.log2()).abs() < 1e-9);
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let lib = target_dir().join("libdpmem_ffi.a");
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = std::env::var("CARGO_TARGET_TMPDIR").map(PathBuf::from).unwrap_or_else(|_| std::env::temp_dir());
    let bin = dir.join("dpmem_c_smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("smoke.c");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
