//! Simulation time.
//!
//! [`SimTime`] is the event-loop clock: integer nanoseconds. [`ExactTime`]
//! is used by the closed-form schedule analysis. It counts "ticks" of
//! `1 / (R_d * R_p)` ns, which makes every `bits / R_d` and `bits / R_p`
//! interval an exact integer, so the analysis never rounds until the final
//! conversion back to nanoseconds.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point in (or span of) simulated time, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    /// Converts seconds to the nearest nanosecond. Returns `None` for
    /// negative or non-finite input, or when the value is not within 1e-3 ns
    /// of a whole nanosecond (the quantum cannot represent it).
    pub fn from_secs_exact(secs: f64) -> Option<Self> {
        if !secs.is_finite() || secs < 0.0 {
            return None;
        }
        let ns = secs * NANOS_PER_SEC as f64;
        let rounded = ns.round();
        if (ns - rounded).abs() > 1e-3 {
            return None;
        }
        Some(SimTime(rounded as u64))
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Time to serialize `bits` at `rate` bit/s, rounded up to whole
    /// nanoseconds so a transmission never finishes early.
    pub fn tx_time(bits: u64, rate: u64) -> SimTime {
        SimTime(div_ceil_u128(bits as u128 * NANOS_PER_SEC as u128, rate as u128) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

pub(crate) fn div_ceil_u128(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

pub(crate) fn div_floor_i128(a: i128, b: i128) -> i128 {
    debug_assert!(b > 0);
    a.div_euclid(b)
}

pub(crate) fn div_ceil_i128(a: i128, b: i128) -> i128 {
    debug_assert!(b > 0);
    -((-a).div_euclid(b))
}

/// Conversion factors between bits, rates and ticks for one rate pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeBase {
    dsl_rate: i128,
    pon_rate: i128,
}

impl TimeBase {
    pub fn new(dsl_rate: u64, pon_rate: u64) -> Self {
        assert!(dsl_rate > 0 && pon_rate > 0, "rates must be positive");
        TimeBase {
            dsl_rate: dsl_rate as i128,
            pon_rate: pon_rate as i128,
        }
    }

    /// Ticks per nanosecond.
    pub fn ticks_per_ns(&self) -> i128 {
        self.dsl_rate * self.pon_rate
    }

    pub fn zero(&self) -> ExactTime {
        ExactTime {
            ticks: 0,
            base: *self,
        }
    }

    pub fn from_nanos(&self, ns: u64) -> ExactTime {
        ExactTime {
            ticks: ns as i128 * self.ticks_per_ns(),
            base: *self,
        }
    }

    pub fn from_ticks(&self, ticks: i128) -> ExactTime {
        ExactTime { ticks, base: *self }
    }

    /// Duration of `bits` on the DSL (signed so differences stay exact).
    pub fn dsl(&self, bits: i128) -> ExactTime {
        self.from_ticks(bits * NANOS_PER_SEC as i128 * self.pon_rate)
    }

    /// Duration of `bits` on the PON.
    pub fn pon(&self, bits: i128) -> ExactTime {
        self.from_ticks(bits * NANOS_PER_SEC as i128 * self.dsl_rate)
    }

    /// Bits a DSL line delivers during `span`, rounded up.
    pub fn dsl_bits_ceil(&self, span: ExactTime) -> i128 {
        div_ceil_i128(span.ticks, NANOS_PER_SEC as i128 * self.pon_rate)
    }

    /// Bits a DSL line delivers during `span`, as `(numerator, denominator)`.
    pub fn dsl_bits_ratio(&self, span: ExactTime) -> (i128, i128) {
        (span.ticks, NANOS_PER_SEC as i128 * self.pon_rate)
    }

    pub fn dsl_rate(&self) -> u64 {
        self.dsl_rate as u64
    }

    pub fn pon_rate(&self) -> u64 {
        self.pon_rate as u64
    }
}

/// An exact instant or span, in ticks of a [`TimeBase`].
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExactTime {
    ticks: i128,
    base: TimeBase,
}

impl ExactTime {
    pub fn ticks(&self) -> i128 {
        self.ticks
    }

    pub fn base(&self) -> TimeBase {
        self.base
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.ticks as f64 / self.base.ticks_per_ns() as f64 / NANOS_PER_SEC as f64
    }

    pub fn as_nanos_f64(&self) -> f64 {
        self.ticks as f64 / self.base.ticks_per_ns() as f64
    }

    /// Largest whole nanosecond not after this instant (clamped at zero).
    pub fn floor_nanos(&self) -> SimTime {
        SimTime(div_floor_i128(self.ticks, self.base.ticks_per_ns()).max(0) as u64)
    }

    /// Smallest whole nanosecond not before this instant (clamped at zero).
    pub fn ceil_nanos(&self) -> SimTime {
        SimTime(div_ceil_i128(self.ticks, self.base.ticks_per_ns()).max(0) as u64)
    }

    pub fn max(self, other: ExactTime) -> ExactTime {
        if other.ticks > self.ticks {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: ExactTime) -> ExactTime {
        if other.ticks < self.ticks {
            other
        } else {
            self
        }
    }

    pub fn is_negative(&self) -> bool {
        self.ticks < 0
    }
}

impl PartialOrd for ExactTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        debug_assert_eq!(self.base, other.base, "comparing times of different bases");
        self.ticks.cmp(&other.ticks)
    }
}

impl Add for ExactTime {
    type Output = ExactTime;
    fn add(self, rhs: ExactTime) -> ExactTime {
        debug_assert_eq!(self.base, rhs.base);
        ExactTime {
            ticks: self.ticks + rhs.ticks,
            base: self.base,
        }
    }
}

impl Sub for ExactTime {
    type Output = ExactTime;
    fn sub(self, rhs: ExactTime) -> ExactTime {
        debug_assert_eq!(self.base, rhs.base);
        ExactTime {
            ticks: self.ticks - rhs.ticks,
            base: self.base,
        }
    }
}

impl fmt::Debug for ExactTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ns", self.as_nanos_f64())
    }
}

impl fmt::Display for ExactTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9e}s", self.as_secs_f64())
    }
}
