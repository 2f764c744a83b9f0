//! C ABI over the streaming estimators and the bound evaluators.
//!
//! Estimators live behind an opaque [`DpmemEstimator`] handle. Every function
//! returns a [`DpmemStatus`]; on failure [`dpmem_last_error`] gives a message
//! that stays valid until the next call on the same thread. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpmem::algorithms::{Answer, Estimator, EstimatorSpec, Query, Snapshot};
use dpmem::bounds;
use dpmem::model::StreamUpdate;
use dpmem::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpmemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Snapshot = 4,
    BufferTooSmall = 5,
    Unsupported = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpmemUpdateKind {
    Empty = 0,
    Insert = 1,
    Delete = 2,
    /// `value` is the feature index.
    FeatureFlip = 3,
    /// `value` is the new item.
    ItemChange = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DpmemUpdate {
    pub kind: DpmemUpdateKind,
    pub user: u32,
    pub value: u32,
}

/// Opaque estimator handle.
pub struct DpmemEstimator {
    inner: Box<dyn Estimator>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DpmemCommBound {
    pub main_bits: f64,
    pub slack_bits: f64,
    pub value_bits: f64,
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

fn status_of(err: &Error) -> DpmemStatus {
    match err {
        Error::Snapshot(_) => DpmemStatus::Snapshot,
        Error::UnsupportedQuery { .. } => DpmemStatus::Unsupported,
        _ => DpmemStatus::InvalidArgument,
    }
}

fn fail(status: DpmemStatus, msg: impl Into<String>) -> DpmemStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`DpmemStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), DpmemStatus>) -> DpmemStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpmemStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DpmemStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: dpmem::Result<T>) -> Result<T, DpmemStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), DpmemStatus> {
    if p.is_null() {
        Err(fail(DpmemStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn handle<'a>(est: *mut DpmemEstimator) -> Result<&'a mut DpmemEstimator, DpmemStatus> {
    non_null(est, "estimator")?;
    Ok(&mut *est)
}

/// Message for the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn dpmem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds an estimator from a JSON spec such as
/// `{"name":"capped_dp_counter","params":{"cap":128,"epsilon":0.5,"delta":1e-12}}`.
/// Every parameter without a fixed default must be given explicitly.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_new(
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut DpmemEstimator,
) -> DpmemStatus {
    guard(|| {
        non_null(spec_json, "spec_json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(spec_json)
            .to_str()
            .map_err(|e| fail(DpmemStatus::InvalidUtf8, e.to_string()))?;
        let spec: EstimatorSpec =
            serde_json::from_str(text).map_err(|e| fail(DpmemStatus::InvalidArgument, e.to_string()))?;
        let inner = lift(spec.build(seed))?;
        *out = Box::into_raw(Box::new(DpmemEstimator { inner }));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`dpmem_estimator_new`] and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_free(est: *mut DpmemEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// # Safety
/// `est` must be a live handle and `update` readable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_process(est: *mut DpmemEstimator, update: *const DpmemUpdate) -> DpmemStatus {
    guard(|| {
        let est = handle(est)?;
        non_null(update, "update")?;
        let u = *update;
        let update = match u.kind {
            DpmemUpdateKind::Empty => StreamUpdate::Empty,
            DpmemUpdateKind::Insert => StreamUpdate::insert(u.user),
            DpmemUpdateKind::Delete => StreamUpdate::delete(u.user),
            DpmemUpdateKind::FeatureFlip => StreamUpdate::FeatureFlip { user: u.user, feature: u.value },
            DpmemUpdateKind::ItemChange => StreamUpdate::ItemChange { user: u.user, item: u.value },
        };
        lift(est.inner.process(&update))
    })
}

unsafe fn query(est: *mut DpmemEstimator, q: Query) -> Result<Answer, DpmemStatus> {
    let est = handle(est)?;
    lift(est.inner.query(q))
}

/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_query_count(est: *mut DpmemEstimator, out: *mut f64) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = query(est, Query::Distinct)?.value();
        Ok(())
    })
}

/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_query_max_feature(est: *mut DpmemEstimator, out: *mut u32) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        match query(est, Query::MaxFeature)? {
            Answer::Feature(f) => *out = f,
            other => return Err(fail(DpmemStatus::Unsupported, format!("unexpected answer {other:?}"))),
        }
        Ok(())
    })
}

/// Item at 1-based `rank`.
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_query_rank(est: *mut DpmemEstimator, rank: u64, out: *mut u32) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        match query(est, Query::Rank(rank))? {
            Answer::Item(i) => *out = i,
            other => return Err(fail(DpmemStatus::Unsupported, format!("unexpected answer {other:?}"))),
        }
        Ok(())
    })
}

/// Snapshot size in bytes.
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_snapshot_len(est: *mut DpmemEstimator, out: *mut usize) -> DpmemStatus {
    guard(|| {
        let est = handle(est)?;
        non_null(out, "out")?;
        *out = est.inner.snapshot().bytes.len();
        Ok(())
    })
}

/// Copies the snapshot into `buf`. `written` receives the snapshot length even
/// when `cap` is too small.
///
/// # Safety
/// `buf` must be writable for `cap` bytes; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_snapshot_copy(
    est: *mut DpmemEstimator,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> DpmemStatus {
    guard(|| {
        let est = handle(est)?;
        non_null(written, "written")?;
        let snap = est.inner.snapshot();
        *written = snap.bytes.len();
        if cap < snap.bytes.len() {
            return Err(fail(
                DpmemStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", snap.bytes.len()),
            ));
        }
        if !snap.bytes.is_empty() {
            non_null(buf, "buf")?;
            ptr::copy_nonoverlapping(snap.bytes.as_ptr(), buf, snap.bytes.len());
        }
        Ok(())
    })
}

/// # Safety
/// `bytes` must be readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dpmem_estimator_restore(est: *mut DpmemEstimator, bytes: *const u8, len: usize) -> DpmemStatus {
    guard(|| {
        let est = handle(est)?;
        let bytes = if len == 0 {
            Vec::new()
        } else {
            non_null(bytes, "bytes")?;
            std::slice::from_raw_parts(bytes, len).to_vec()
        };
        lift(est.inner.restore(&Snapshot { bytes }))
    })
}

/// Natural-log binomial coefficient for real `0 <= m <= n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_log_binom(n: f64, m: f64, out: *mut f64) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(bounds::log_binom(n, m))?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_comm_lower_bound_exact(
    h: f64,
    k: f64,
    eps1: f64,
    eps2: f64,
    slack_constant: f64,
    out: *mut DpmemCommBound,
) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = lift(bounds::comm_lower_bound_exact(h, k, eps1, eps2, slack_constant))?;
        *out = DpmemCommBound { main_bits: b.main_bits, slack_bits: b.slack_bits, value_bits: b.value_bits };
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_comm_lower_bound_stirling(
    h: f64,
    k: f64,
    eps1: f64,
    eps2: f64,
    slack_constant: f64,
    out: *mut DpmemCommBound,
) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = lift(bounds::comm_lower_bound_stirling(h, k, eps1, eps2, slack_constant))?;
        *out = DpmemCommBound { main_bits: b.main_bits, slack_bits: b.slack_bits, value_bits: b.value_bits };
        Ok(())
    })
}

/// `T^(gamma_w + gamma_k - 2 gamma_h)`; `exponent` may be null.
///
/// # Safety
/// `value` must be writable; `exponent` writable or null.
#[no_mangle]
pub unsafe extern "C" fn dpmem_theorem_bound(
    t: f64,
    gamma_w: f64,
    gamma_k: f64,
    gamma_h: f64,
    value: *mut f64,
    exponent: *mut f64,
) -> DpmemStatus {
    guard(|| {
        non_null(value, "value")?;
        let p = lift(bounds::ExponentProfile::new(gamma_w, gamma_k, gamma_h))?;
        let b = lift(bounds::theorem_bound(t, &p))?;
        *value = b.value;
        if !exponent.is_null() {
            *exponent = b.exponent;
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmem_encoding_bound(n: f64, k: f64, k_prime: f64, z: f64, out: *mut f64) -> DpmemStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(bounds::encoding_bound(n, k, k_prime, z))?.value_bits;
        Ok(())
    })
}
