//! C interface to the dynamiq all-reduce simulator.
//!
//! Every function returns a [`DynamiqStatus`]. On failure the message is
//! available from [`dynamiq_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dynamiq::allocation::{allocate_fast, allocate_general, BudgetSpec};
use dynamiq::engine::{run_round, ExecutionMode, PipelineConfig, RoundResult};
use dynamiq::stats::GroupLayout;
use dynamiq::topology::TopologyKind;
use dynamiq::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamiqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BudgetInfeasible = 3,
    ScaleOverflow = 4,
    Malformed = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamiqTopology {
    Ring = 0,
    Butterfly = 1,
}

/// Opaque pipeline configuration.
pub struct DynamiqConfig(PipelineConfig);

/// Opaque result of one all-reduce round.
pub struct DynamiqRound {
    result: RoundResult,
    hash: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DynamiqStatus {
    match err {
        Error::BudgetInfeasible { .. } => DynamiqStatus::BudgetInfeasible,
        Error::ScaleOverflow(_) => DynamiqStatus::ScaleOverflow,
        Error::Malformed(_) | Error::WidthMismatch { .. } => DynamiqStatus::Malformed,
        Error::Config(_) | Error::Schedule(_) => DynamiqStatus::Config,
        Error::Io(_) => DynamiqStatus::Io,
        _ => DynamiqStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DynamiqStatus>) -> DynamiqStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DynamiqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            DynamiqStatus::Panic
        }
    }
}

fn fail(err: Error) -> DynamiqStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> DynamiqStatus {
    set_error(format!("{what} is null"));
    DynamiqStatus::NullPointer
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn dynamiq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a configuration with default settings.
#[no_mangle]
pub extern "C" fn dynamiq_config_new() -> *mut DynamiqConfig {
    Box::into_raw(Box::new(DynamiqConfig(PipelineConfig::default())))
}

/// Parses a JSON pipeline configuration. Missing keys keep their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_from_json(json: *const c_char, out: *mut *mut DynamiqConfig) -> DynamiqStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| fail(Error::InvalidArgument("config is not UTF-8".into())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| fail(Error::Config(format!("invalid config: {e}"))))?;
        cfg.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(DynamiqConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_free(config: *mut DynamiqConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_set_budget(config: *mut DynamiqConfig, bits_per_coordinate: f64) -> DynamiqStatus {
    with_config(config, |c| c.bits_per_coordinate = bits_per_coordinate)
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_set_topology(config: *mut DynamiqConfig, topology: DynamiqTopology) -> DynamiqStatus {
    with_config(config, |c| {
        c.topology = match topology {
            DynamiqTopology::Ring => TopologyKind::Ring,
            DynamiqTopology::Butterfly => TopologyKind::Butterfly,
        }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_set_seed(config: *mut DynamiqConfig, seed: u64, round: u64) -> DynamiqStatus {
    with_config(config, |c| {
        c.seed = seed;
        c.round = round;
    })
}

/// Nonzero runs each worker on its own thread.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_config_set_threaded(config: *mut DynamiqConfig, threaded: i32) -> DynamiqStatus {
    with_config(config, |c| {
        c.execution = if threaded != 0 {
            ExecutionMode::Threaded
        } else {
            ExecutionMode::Sequential
        }
    })
}

unsafe fn with_config(config: *mut DynamiqConfig, f: impl FnOnce(&mut PipelineConfig)) -> DynamiqStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        f(&mut c.0);
        Ok(())
    })
}

/// Runs one round over `n` worker gradients of length `d`.
///
/// # Safety
/// `workers` must point to `n` pointers, each to `d` readable floats.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_allreduce(
    config: *const DynamiqConfig,
    workers: *const *const f32,
    n: usize,
    d: usize,
    out: *mut *mut DynamiqRound,
) -> DynamiqStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if workers.is_null() {
            return Err(null("workers"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let mut grads = Vec::with_capacity(n);
        for k in 0..n {
            let p = *workers.add(k);
            if p.is_null() {
                return Err(null("worker gradient"));
            }
            grads.push(std::slice::from_raw_parts(p, d).to_vec());
        }
        let result = run_round(&grads, &cfg.0).map_err(fail)?;
        let hash = CString::new(result.traffic_hash.clone()).unwrap_or_default();
        *out = Box::into_raw(Box::new(DynamiqRound { result, hash }));
        Ok(())
    })
}

/// # Safety
/// `round` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_free(round: *mut DynamiqRound) {
    if !round.is_null() {
        drop(Box::from_raw(round));
    }
}

/// Length of the synchronized gradient, or 0 for a null handle.
///
/// # Safety
/// `round` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_len(round: *const DynamiqRound) -> usize {
    round.as_ref().map_or(0, |r| r.result.synced.len())
}

/// Copies the synchronized gradient into `out`, which holds `len` floats.
///
/// # Safety
/// `round` must be a live handle and `out` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_synced(round: *const DynamiqRound, out: *mut f32, len: usize) -> DynamiqStatus {
    guard(|| {
        let r = round.as_ref().ok_or_else(|| null("round"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let synced = &r.result.synced;
        if len != synced.len() {
            return Err(fail(Error::LengthMismatch {
                expected: synced.len(),
                actual: len,
            }));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(synced);
        Ok(())
    })
}

/// vNMSE of the round against the exact sum; NaN for a null handle.
///
/// # Safety
/// `round` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_vnmse(round: *const DynamiqRound) -> f64 {
    round.as_ref().map_or(f64::NAN, |r| r.result.report.vnmse)
}

/// Payload and scale bits per coordinate of one compressed representation.
///
/// # Safety
/// `round` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_bits_per_coordinate(round: *const DynamiqRound) -> f64 {
    round.as_ref().map_or(f64::NAN, |r| r.result.report.bits.per_representation)
}

/// Hex SHA-256 of all wire traffic. Valid until the handle is freed.
///
/// # Safety
/// `round` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_round_traffic_hash(round: *const DynamiqRound) -> *const c_char {
    round.as_ref().map_or(ptr::null(), |r| r.hash.as_ptr())
}

/// `||estimate - truth||^2 / ||truth||^2`.
///
/// # Safety
/// Both arrays must hold `len` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_vnmse(estimate: *const f32, truth: *const f64, len: usize, out: *mut f64) -> DynamiqStatus {
    guard(|| {
        if estimate.is_null() || truth.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let e = std::slice::from_raw_parts(estimate, len);
        let t = std::slice::from_raw_parts(truth, len);
        *out = dynamiq::metrics::vnmse(e, t).map_err(fail)?;
        Ok(())
    })
}

/// Chooses a width in {2, 4, 8} for each super-group from its summed squared
/// norm. `fast` nonzero selects the closed-form allocator.
///
/// # Safety
/// `norms` must hold `count` floats and `out_widths` be writable for `count` values.
#[no_mangle]
pub unsafe extern "C" fn dynamiq_allocate(
    norms: *const f32,
    count: usize,
    bits_per_coordinate: f64,
    group_size: usize,
    super_group_size: usize,
    fast: i32,
    out_widths: *mut u32,
) -> DynamiqStatus {
    guard(|| {
        if norms.is_null() || out_widths.is_null() {
            return Err(null("argument"));
        }
        let layout = GroupLayout::new(group_size, super_group_size).map_err(fail)?;
        let spec = BudgetSpec::new(bits_per_coordinate, layout);
        let f = std::slice::from_raw_parts(norms, count);
        let alloc = if fast != 0 {
            allocate_fast(f, &spec)
        } else {
            allocate_general(f, &spec)
        }
        .map_err(fail)?;
        std::slice::from_raw_parts_mut(out_widths, count).copy_from_slice(&alloc.widths);
        Ok(())
    })
}
