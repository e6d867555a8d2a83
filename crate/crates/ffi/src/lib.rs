//! C ABI for the pondsl simulator.
//!
//! Configuration goes through an opaque [`PondslConfig`] that takes the same
//! `key = value` vocabulary as the command-line tool. Every fallible call
//! returns a [`PondslStatus`]; the message behind the last failure on the
//! calling thread is available from [`pondsl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pondsl::cli::{self, Settings};
use pondsl::engine::run;
use pondsl::flowcontrol::build_gated_cycle;
use pondsl::ordering::{best_order, Order};
use pondsl::schedule::{CycleSchedule, Demand, ScheduleError, ScheduleMode};
use pondsl::time::SimTime;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PondslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Unknown key, unparsable value or an inconsistent configuration.
    ConfigError = 3,
    /// The simulation or schedule computation failed.
    RuntimeError = 4,
    /// Index past the end of a result.
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PondslMode {
    Segregated = 0,
    Multiplexed = 1,
}

/// Settings accumulated key by key; resolved when used.
pub struct PondslConfig {
    settings: Settings,
}

/// A computed polling cycle.
pub struct PondslSchedule {
    inner: CycleSchedule,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PondslMetrics {
    pub max_cpe_occupancy_bits: u64,
    pub max_onu_occupancy_bits: u64,
    pub loss_rate: f64,
    pub mean_dsl_delay_s: f64,
    pub mean_pon_delay_s: f64,
    pub packets_delivered: u64,
    pub throughput_bps: f64,
    pub generated: u64,
    pub dropped_cpe: u64,
    pub dropped_drop_point: u64,
    pub pauses: u64,
}

/// One transmission slot of a [`PondslSchedule`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PondslSlot {
    pub cpe: usize,
    pub pon_bits: u64,
    /// CPE start on the nanosecond clock.
    pub cpe_start_ns: u64,
    pub sub_window_start_ns: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PondslOrder {
    /// 12 when CPE 1 goes first, 21 otherwise.
    pub order: u32,
    pub tie: bool,
    pub t12_ns: f64,
    pub t21_ns: f64,
    pub th1_bits: f64,
    pub th2_bits: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: PondslStatus, msg: impl ToString) -> PondslStatus {
    let msg = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
    status
}

fn guard(f: impl FnOnce() -> PondslStatus) -> PondslStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        fail(PondslStatus::Panic, msg)
    })
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, PondslStatus> {
    if p.is_null() {
        return Err(fail(PondslStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(PondslStatus::InvalidUtf8, e))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failure on this thread, empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pondsl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A configuration holding the defaults. Free with [`pondsl_config_free`].
#[no_mangle]
pub extern "C" fn pondsl_config_new() -> *mut PondslConfig {
    Box::into_raw(Box::new(PondslConfig {
        settings: Settings::new(),
    }))
}

/// # Safety
/// `cfg` must come from [`pondsl_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pondsl_config_free(cfg: *mut PondslConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one key, overriding earlier values. Values use the units of the
/// configuration files: seconds for times, bytes for capacities.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pondsl_config_set(
    cfg: *mut PondslConfig,
    key: *const c_char,
    value: *const c_char,
) -> PondslStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(PondslStatus::NullPointer, "null config");
        };
        let (k, v) = (tri!(text(key)), tri!(text(value)));
        let parsed = tri!(cli::parse_config_text(&format!("{k} = {v}"))
            .map_err(|e| fail(PondslStatus::ConfigError, e)));
        cfg.settings.extend(parsed);
        PondslStatus::Ok
    })
}

/// Merges a whole configuration text (`key = value` lines, `#` comments).
///
/// # Safety
/// `cfg` must be a live handle; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pondsl_config_load_text(
    cfg: *mut PondslConfig,
    config_text: *const c_char,
) -> PondslStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(PondslStatus::NullPointer, "null config");
        };
        let parsed = tri!(cli::parse_config_text(tri!(text(config_text)))
            .map_err(|e| fail(PondslStatus::ConfigError, e)));
        cfg.settings.extend(parsed);
        PondslStatus::Ok
    })
}

/// Runs one simulation.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pondsl_run(
    cfg: *const PondslConfig,
    out: *mut PondslMetrics,
) -> PondslStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(PondslStatus::NullPointer, "null argument");
        };
        let rc =
            tri!(cli::run_config(&cfg.settings).map_err(|e| fail(PondslStatus::ConfigError, e)));
        let m = tri!(run(&rc).map_err(|e| fail(PondslStatus::RuntimeError, e)));
        let c = m.counters;
        *out = PondslMetrics {
            max_cpe_occupancy_bits: m.max_cpe_occupancy,
            max_onu_occupancy_bits: m.max_onu_occupancy,
            loss_rate: m.loss_rate,
            mean_dsl_delay_s: m.mean_dsl_delay,
            mean_pon_delay_s: m.mean_pon_delay,
            packets_delivered: m.packets_delivered,
            throughput_bps: m.throughput,
            generated: c.generated,
            dropped_cpe: c.dropped_cpe,
            dropped_drop_point: c.dropped_drop_point,
            pauses: c.pauses,
        };
        PondslStatus::Ok
    })
}

/// Computes the gated cycle for `n` grants (bits) at OLT-ONU delay `tau_ns`.
/// Segregated cycles serve the CPEs in ascending grant order. The CPE count
/// of `cfg` is replaced by `n`. Free the result with
/// [`pondsl_schedule_free`].
///
/// # Safety
/// `cfg` must be a live handle, `grants` must point to `n` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pondsl_schedule_new(
    cfg: *const PondslConfig,
    mode: PondslMode,
    tau_ns: u64,
    grants: *const u64,
    n: usize,
    out: *mut *mut PondslSchedule,
) -> PondslStatus {
    guard(|| {
        let (Some(cfg), false, false) = (cfg.as_ref(), grants.is_null(), out.is_null()) else {
            return fail(PondslStatus::NullPointer, "null argument");
        };
        let grants = std::slice::from_raw_parts(grants, n);
        let mut s = cfg.settings.clone();
        s.insert("E".into(), n.to_string());
        let rc = tri!(cli::run_config(&s).map_err(|e| fail(PondslStatus::ConfigError, e)));
        let link = rc.net.link(SimTime::from_nanos(tau_ns));
        let m = rc.net.max_packet_bits;
        if let Some(&g) = grants.iter().find(|&&g| g < m) {
            return fail(
                PondslStatus::RuntimeError,
                ScheduleError::GrantBelowMax { grant: g, max: m },
            );
        }
        let demands: Vec<Demand> = grants
            .iter()
            .enumerate()
            .map(|(c, &g)| Demand::plain(c, g))
            .collect();
        let mode = match mode {
            PondslMode::Segregated => ScheduleMode::Segregated,
            PondslMode::Multiplexed => ScheduleMode::Multiplexed,
        };
        let cycle = tri!(build_gated_cycle(mode, &link, &demands)
            .map_err(|e| fail(PondslStatus::RuntimeError, e)));
        let inner = cycle.schedule;
        *out = Box::into_raw(Box::new(PondslSchedule { inner }));
        PondslStatus::Ok
    })
}

/// # Safety
/// `s` must come from [`pondsl_schedule_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pondsl_schedule_free(s: *mut PondslSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of transmission slots; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pondsl_schedule_len(s: *const PondslSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.inner.order.len())
}

/// Exact earliest ONU start and end of the ONU data, in nanoseconds.
///
/// # Safety
/// `s` must be a live handle and `onu_start_ns`, `onu_end_ns` writable.
#[no_mangle]
pub unsafe extern "C" fn pondsl_schedule_onu(
    s: *const PondslSchedule,
    onu_start_ns: *mut f64,
    onu_end_ns: *mut f64,
) -> PondslStatus {
    let (Some(s), false, false) = (s.as_ref(), onu_start_ns.is_null(), onu_end_ns.is_null()) else {
        return fail(PondslStatus::NullPointer, "null argument");
    };
    *onu_start_ns = s.inner.onu_start_exact.as_nanos_f64();
    *onu_end_ns = s.inner.onu_end.as_nanos_f64();
    PondslStatus::Ok
}

/// Transmission slot `slot`, in PON order.
///
/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pondsl_schedule_slot(
    s: *const PondslSchedule,
    slot: usize,
    out: *mut PondslSlot,
) -> PondslStatus {
    let (Some(s), false) = (s.as_ref(), out.is_null()) else {
        return fail(PondslStatus::NullPointer, "null argument");
    };
    let s = &s.inner;
    if slot >= s.order.len() {
        return fail(
            PondslStatus::OutOfRange,
            format!("slot {slot} of {}", s.order.len()),
        );
    }
    *out = PondslSlot {
        cpe: s.order[slot],
        pon_bits: s.demands[slot].pon_bits,
        cpe_start_ns: s.cpe_starts[slot].as_nanos(),
        sub_window_start_ns: s.sub_window_starts[slot].as_nanos_f64(),
    };
    PondslStatus::Ok
}

/// Better order for two CPEs with grants `g1`, `g2` (bits); the delays are
/// the first two entries of the configured `delta`.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pondsl_best_order(
    cfg: *const PondslConfig,
    tau_ns: u64,
    g1: u64,
    g2: u64,
    out: *mut PondslOrder,
) -> PondslStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(PondslStatus::NullPointer, "null argument");
        };
        let mut s = cfg.settings.clone();
        s.insert("E".into(), "2".into());
        let rc = tri!(cli::run_config(&s).map_err(|e| fail(PondslStatus::ConfigError, e)));
        if rc.net.cpe_delays.len() != 2 {
            return fail(PondslStatus::ConfigError, "ordering needs exactly two CPEs");
        }
        let link = rc.net.link(SimTime::from_nanos(tau_ns));
        let (d1, d2) = (rc.net.cpe_delays[0], rc.net.cpe_delays[1]);
        let d = tri!(
            best_order(&link, g1, g2, d1, d2).map_err(|e| fail(PondslStatus::RuntimeError, e))
        );
        *out = PondslOrder {
            order: match d.order {
                Order::Twelve => 12,
                Order::TwentyOne => 21,
            },
            tie: d.tie,
            t12_ns: d.t12.as_nanos_f64(),
            t21_ns: d.t21.as_nanos_f64(),
            th1_bits: d.thresholds.th1.bits_f64(),
            th2_bits: d.thresholds.th2.bits_f64(),
        };
        PondslStatus::Ok
    })
}
