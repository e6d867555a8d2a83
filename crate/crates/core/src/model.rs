//! Network model: static parameters of the hybrid PON/xDSL access network
//! and the packet record that flows through it.

use crate::time::{SimTime, TimeBase, NANOS_PER_SEC};
use thiserror::Error;

/// Raised when a [`NetworkConfig`] (or any other configuration) violates a
/// bound. The message names the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError {
            field,
            reason: reason.into(),
        }
    }
}

/// Size of a gate, report or PAUSE control frame.
pub const CONTROL_FRAME_BITS: u64 = 64 * 8;

/// Static parameters of the access network.
///
/// Field names spell out the usual notation: `dsl_rate` is R_d,
/// `pon_rate` R_p, `cpes_per_onu` E, `onus` O, `cpe_delays` the per-CPE
/// one-way delays delta_c, `pon_gate_time` g_p, `dsl_gate_time` g_d,
/// `max_packet_bits` M and `max_cycle` Z. The OLT-ONU one-way delay tau is
/// drawn per ONU from `[tau_min, tau_max]`; the closed-form analysis takes
/// a concrete tau through [`OnuLink`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub dsl_rate: u64,
    pub pon_rate: u64,
    pub cpes_per_onu: usize,
    pub onus: usize,
    pub cpe_delays: Vec<SimTime>,
    pub tau_min: SimTime,
    pub tau_max: SimTime,
    pub pon_gate_time: SimTime,
    pub dsl_gate_time: SimTime,
    pub max_packet_bits: u64,
    pub max_cycle: SimTime,
    pub guard: SimTime,
}

impl Default for NetworkConfig {
    /// XG-PON / VDSL2 setup: 32 ONUs with 8 lines each, 2.488 Gb/s PON,
    /// 77 Mb/s DSL, tau in [2.5 us, 100 us], Z = 3 ms, 30 ns guard, 1518 byte
    /// maximum frames. Gate messages are 64 byte frames at the line rate.
    fn default() -> Self {
        let dsl_rate = 77_000_000;
        let pon_rate = 2_488_000_000;
        NetworkConfig {
            dsl_rate,
            pon_rate,
            cpes_per_onu: 8,
            onus: 32,
            cpe_delays: vec![SimTime::ZERO; 8],
            tau_min: SimTime::from_nanos(2_500),
            tau_max: SimTime::from_micros(100),
            pon_gate_time: SimTime::tx_time(CONTROL_FRAME_BITS, pon_rate),
            dsl_gate_time: SimTime::tx_time(CONTROL_FRAME_BITS, dsl_rate),
            max_packet_bits: 1518 * 8,
            max_cycle: SimTime::from_millis(3),
            guard: SimTime::from_nanos(30),
        }
    }
}

impl NetworkConfig {
    /// Checks every invariant and returns the config unchanged if all hold.
    pub fn validate(self) -> Result<Self, ConfigError> {
        if self.dsl_rate == 0 {
            return Err(ConfigError::new("R_d", "must be positive"));
        }
        if self.pon_rate <= self.dsl_rate {
            return Err(ConfigError::new("R_p", "R_p must exceed R_d"));
        }
        if self.cpes_per_onu == 0 {
            return Err(ConfigError::new("E", "must be at least 1"));
        }
        if self.onus == 0 {
            return Err(ConfigError::new("O", "must be at least 1"));
        }
        if self.cpe_delays.len() != self.cpes_per_onu {
            return Err(ConfigError::new(
                "delta",
                format!(
                    "expected {} per-CPE delays, got {}",
                    self.cpes_per_onu,
                    self.cpe_delays.len()
                ),
            ));
        }
        if self.tau_max < self.tau_min {
            return Err(ConfigError::new("tau_max", "must not be below tau_min"));
        }
        if self.max_packet_bits == 0 {
            return Err(ConfigError::new("M", "must be positive"));
        }
        if self.max_cycle == SimTime::ZERO {
            return Err(ConfigError::new("Z", "must be positive"));
        }
        if self.limit_bits() == 0 {
            return Err(ConfigError::new(
                "Z",
                "cycle too short to carry a single bit per ONU",
            ));
        }
        Ok(self)
    }

    /// True iff the E lines of one drop-point can jointly run at full DSL rate
    /// without exceeding the PON rate (E * R_d <= R_p).
    pub fn mux_feasible(&self) -> bool {
        (self.cpes_per_onu as u128) * (self.dsl_rate as u128) <= self.pon_rate as u128
    }

    pub fn time_base(&self) -> TimeBase {
        TimeBase::new(self.dsl_rate, self.pon_rate)
    }

    /// Z * R_p, the upstream capacity of one maximum cycle, in bits.
    pub fn cycle_capacity_bits(&self) -> u64 {
        ((self.max_cycle.as_nanos() as u128 * self.pon_rate as u128) / NANOS_PER_SEC as u128) as u64
    }

    /// Z * R_p / O, the Limited per-ONU grant cap, in bits.
    pub fn limit_bits(&self) -> u64 {
        self.cycle_capacity_bits() / self.onus as u64
    }

    pub fn link(&self, tau: SimTime) -> OnuLink<'_> {
        OnuLink { net: self, tau }
    }
}

/// One ONU's view of the network: the shared parameters plus its own
/// OLT-ONU delay. All closed-form timing takes this.
#[derive(Debug, Clone, Copy)]
pub struct OnuLink<'a> {
    pub net: &'a NetworkConfig,
    pub tau: SimTime,
}

/// One upstream Ethernet frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    /// Global generation order, starting at 0.
    pub id: u64,
    pub size_bits: u32,
    /// Index of the CPE within its ONU.
    pub cpe: u16,
    pub onu: u16,
    pub birth: SimTime,
    /// Complete reception at the drop-point.
    pub drop_point_arrival: Option<SimTime>,
    /// Complete reception at the OLT.
    pub olt_arrival: Option<SimTime>,
}

impl Packet {
    pub fn new(id: u64, onu: u16, cpe: u16, size_bits: u32, birth: SimTime) -> Self {
        Packet {
            id,
            size_bits,
            cpe,
            onu,
            birth,
            drop_point_arrival: None,
            olt_arrival: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_defaults_are_valid() {
        let cfg = NetworkConfig::default().validate().unwrap();
        assert_eq!(cfg.pon_rate, 2_488_000_000);
        assert_eq!(cfg.dsl_rate, 77_000_000);
        assert_eq!(cfg.cpes_per_onu, 8);
        assert_eq!(cfg.onus, 32);
        assert_eq!(cfg.max_cycle, SimTime::from_millis(3));
        assert_eq!(cfg.guard, SimTime::from_nanos(30));
        assert_eq!(cfg.limit_bits(), 233_250);
        assert_eq!(cfg.cycle_capacity_bits(), 7_464_000);
    }

    #[test]
    fn equal_rates_rejected() {
        let cfg = NetworkConfig {
            dsl_rate: 2_488_000_000,
            ..NetworkConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.field, "R_p");
        assert!(err.to_string().contains("R_p must exceed R_d"));
    }

    #[test]
    fn zero_cpes_rejected() {
        let cfg = NetworkConfig {
            cpes_per_onu: 0,
            cpe_delays: vec![],
            ..NetworkConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().field, "E");
    }

    #[test]
    fn validate_is_idempotent() {
        let once = NetworkConfig::default().validate().unwrap();
        let twice = once.clone().validate().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mux_feasibility() {
        let cfg = NetworkConfig::default();
        assert!(cfg.mux_feasible());

        let boundary = NetworkConfig {
            cpes_per_onu: 1,
            cpe_delays: vec![SimTime::ZERO],
            dsl_rate: 2_487_999_999,
            ..NetworkConfig::default()
        };
        assert!(boundary.mux_feasible());

        let crowded = NetworkConfig {
            cpes_per_onu: 33,
            cpe_delays: vec![SimTime::ZERO; 33],
            ..NetworkConfig::default()
        };
        assert!(!crowded.mux_feasible());
    }
}
