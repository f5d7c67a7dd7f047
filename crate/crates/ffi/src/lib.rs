//! C ABI over the percolab core: opaque window and configuration handles,
//! a few estimators, and status codes in place of Rust errors.
//!
//! Every function returns a `PercolabStatus`; on failure the message is
//! available from `percolab_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use percolab::counting::{count_animals, partitions};
use percolab::estimators::{kappa_hat, theta_hat, EstimatorReport};
use percolab::renorm::good_probability;
use percolab::separating::{analyze, Depth};
use percolab::{Adjacency, Configuration, Error, LatticeWindow};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PercolabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    BoxOutOfBounds = 3,
    VertexOutOfWindow = 4,
    EmptySet = 5,
    InfiniteCluster = 6,
    NoInfiniteCluster = 7,
    MarginViolation = 8,
    InvariantViolation = 9,
    InsufficientData = 10,
    Precondition = 11,
    BudgetExceeded = 12,
    Manifest = 13,
    Io = 14,
    Panic = 15,
}

impl From<&Error> for PercolabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => PercolabStatus::InvalidParameter,
            Error::BoxOutOfBounds(_) => PercolabStatus::BoxOutOfBounds,
            Error::VertexOutOfWindow(_) => PercolabStatus::VertexOutOfWindow,
            Error::EmptySet => PercolabStatus::EmptySet,
            Error::InfiniteCluster => PercolabStatus::InfiniteCluster,
            Error::NoInfiniteCluster => PercolabStatus::NoInfiniteCluster,
            Error::MarginViolation(_) => PercolabStatus::MarginViolation,
            Error::InvariantViolation(_) => PercolabStatus::InvariantViolation,
            Error::InsufficientData(_) => PercolabStatus::InsufficientData,
            Error::Precondition(_) => PercolabStatus::Precondition,
            Error::BudgetExceeded(_) => PercolabStatus::BudgetExceeded,
            Error::Manifest(_) => PercolabStatus::Manifest,
            Error::Io(_) => PercolabStatus::Io,
        }
    }
}

/// Opaque handle to a finite window of `Z^d` with its box lattice.
pub struct PercolabWindow(LatticeWindow);

/// Opaque handle to one sampled bond configuration.
pub struct PercolabConfig(Configuration);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PercolabEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub samples: u64,
}

/// Per-sample structure report. Sizes are -1 when undefined for the sample.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PercolabSampleSummary {
    pub origin_finite: bool,
    pub small: bool,
    pub excluded: bool,
    pub s_o_size: i64,
    pub cut_size: i64,
    pub touching: i64,
    pub occurring: u64,
    pub violations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic for `percolab_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), PercolabStatus>) -> PercolabStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PercolabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside percolab");
            PercolabStatus::Panic
        }
    }
}

fn fail(e: Error) -> PercolabStatus {
    set_error(&e.to_string());
    PercolabStatus::from(&e)
}

fn null() -> PercolabStatus {
    set_error("null pointer argument");
    PercolabStatus::NullPointer
}

/// Borrows a handle, rejecting null.
unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, PercolabStatus> {
    p.as_ref().ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), PercolabStatus> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

fn estimate(r: &EstimatorReport) -> PercolabEstimate {
    PercolabEstimate { estimate: r.estimate, se: r.se, ci_lo: r.ci95.lo, ci_hi: r.ci95.hi, samples: r.samples }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn percolab_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => c"",
    };
    V.as_ptr()
}

/// Message for the last failing call on this thread; empty after a success.
/// The pointer stays valid until the next percolab call on the same thread.
#[no_mangle]
pub extern "C" fn percolab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn percolab_window_new(d: u32, n: i64, r: i64, out: *mut *mut PercolabWindow) -> PercolabStatus {
    guard(|| {
        let w = LatticeWindow::new(d as usize, n, r).map_err(fail)?;
        write(out, Box::into_raw(Box::new(PercolabWindow(w))))
    })
}

/// # Safety
/// `w` must be null or a handle from `percolab_window_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn percolab_window_free(w: *mut PercolabWindow) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// # Safety
/// `w` must be a live window handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_window_edge_count(w: *const PercolabWindow, out: *mut u64) -> PercolabStatus {
    guard(|| write(out, borrow(w)?.0.edge_count() as u64))
}

/// # Safety
/// `w` must be a live window handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_window_box_count(w: *const PercolabWindow, out: *mut u64) -> PercolabStatus {
    guard(|| write(out, borrow(w)?.0.box_count() as u64))
}

/// Samples configuration `sample_index` of the stream `seed` at density `p`.
///
/// # Safety
/// `w` must be a live window handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_config_sample(
    w: *const PercolabWindow,
    p: f64,
    seed: u64,
    sample_index: u64,
    out: *mut *mut PercolabConfig,
) -> PercolabStatus {
    guard(|| {
        let c = Configuration::sample(&borrow(w)?.0, p, seed, sample_index).map_err(fail)?;
        write(out, Box::into_raw(Box::new(PercolabConfig(c))))
    })
}

/// # Safety
/// `c` must be null or a handle from `percolab_config_sample` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn percolab_config_free(c: *mut PercolabConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be a live configuration handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_config_open_count(c: *const PercolabConfig, out: *mut u64) -> PercolabStatus {
    guard(|| write(out, borrow(c)?.0.open_count() as u64))
}

/// State of the edge in slot `slot` (`vertex · d + axis`).
///
/// # Safety
/// `c` must be a live configuration handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_config_is_open(c: *const PercolabConfig, slot: u64, out: *mut bool) -> PercolabStatus {
    guard(|| {
        let c = &borrow(c)?.0;
        let slot = slot as usize;
        if !c.window().is_edge_slot(slot) {
            return Err(fail(Error::InvalidParameter(format!("slot {slot} is not an edge of the window"))));
        }
        write(out, c.is_open(slot))
    })
}

/// Runs the full per-sample structure pipeline on `c`.
///
/// # Safety
/// `c` must be a live configuration handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_config_analyze(
    c: *const PercolabConfig,
    inject_fault: bool,
    out: *mut PercolabSampleSummary,
) -> PercolabStatus {
    guard(|| {
        let r = analyze(&borrow(c)?.0, Depth::Full, inject_fault);
        let size = |x: Option<usize>| x.map_or(-1, |v| v as i64);
        write(
            out,
            PercolabSampleSummary {
                origin_finite: r.origin_finite,
                small: r.small,
                excluded: r.excluded,
                s_o_size: size(r.s_o_size),
                cut_size: size(r.cut_size),
                touching: size(r.touching),
                occurring: r.occurring_sizes.len() as u64,
                violations: r.violations.len() as u64,
            },
        )
    })
}

/// # Safety
/// `w` must be a live window handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_theta_hat(
    w: *const PercolabWindow,
    p: f64,
    samples: u64,
    seed: u64,
    out: *mut PercolabEstimate,
) -> PercolabStatus {
    guard(|| {
        let r = theta_hat(p, &borrow(w)?.0, samples, seed).map_err(fail)?;
        write(out, estimate(&r))
    })
}

/// # Safety
/// `w` must be a live window handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_kappa_hat(
    w: *const PercolabWindow,
    p: f64,
    samples: u64,
    seed: u64,
    out: *mut PercolabEstimate,
) -> PercolabStatus {
    guard(|| {
        let r = kappa_hat(p, &borrow(w)?.0, samples, seed).map_err(fail)?;
        write(out, estimate(&r))
    })
}

/// Monte Carlo probability that the origin box at scale `n` is good.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_good_probability(
    d: u32,
    n: i64,
    p: f64,
    samples: u64,
    seed: u64,
    out: *mut PercolabEstimate,
) -> PercolabStatus {
    guard(|| {
        let g = good_probability(d as usize, n, p, samples, seed).map_err(fail)?;
        let se = (g.estimate * (1.0 - g.estimate) / g.samples as f64).sqrt();
        write(out, PercolabEstimate { estimate: g.estimate, se, ci_lo: g.ci95.lo, ci_hi: g.ci95.hi, samples: g.samples })
    })
}

/// Number of integer partitions of `n`; fails when it does not fit in 64 bits.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_partition_count(n: u32, out: *mut u64) -> PercolabStatus {
    guard(|| {
        let t = partitions(n.max(1) as usize).map_err(fail)?;
        let v = u64::try_from(t.get(n as usize))
            .map_err(|_| fail(Error::InvalidParameter(format!("p({n}) exceeds 64 bits"))))?;
        write(out, v)
    })
}

/// Connected sets of `n` boxes containing the origin box, axis or ⊠ adjacency.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn percolab_animal_count(d: u32, diagonal: bool, n: u32, out: *mut u64) -> PercolabStatus {
    guard(|| {
        let mode = if diagonal { Adjacency::Diagonal } else { Adjacency::Axis };
        let census = count_animals(d as usize, mode, n as usize).map_err(fail)?;
        write(out, census.counts[n as usize - 1])
    })
}
