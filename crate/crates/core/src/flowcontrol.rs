//! Upstream flow control between the CPEs and the drop-point: none, PAUSE
//! frames, and Gated ONU:CPE polling (segregated or multiplexed).
//!
//! The event loop in [`crate::engine`] owns all state; this module holds the
//! per-line decisions so they can be tested in isolation.

use crate::dba::{PTM_CODEWORD_BITS, PTM_PAYLOAD_BYTES};
use crate::model::{ConfigError, OnuLink, CONTROL_FRAME_BITS};
use crate::ordering::sort_cpes;
use crate::schedule::{
    multiplexed_schedule_for, segregated_schedule_for, CycleSchedule, Demand, ScheduleError,
    ScheduleMode,
};
use crate::time::SimTime;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// CPEs send whenever they have data.
    None,
    /// CPEs send freely but honor PAUSE frames from the drop-point.
    Pause,
    /// Gated ONU:CPE polling, one PON sub-window per CPE.
    GatedSeg,
    /// Gated ONU:CPE polling, CPE data interleaved on the PON.
    GatedMux,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::None,
        Protocol::Pause,
        Protocol::GatedSeg,
        Protocol::GatedMux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::None => "none",
            Protocol::Pause => "pause",
            Protocol::GatedSeg => "gated_seg",
            Protocol::GatedMux => "gated_mux",
        }
    }

    pub fn schedule_mode(self) -> Option<ScheduleMode> {
        match self {
            Protocol::GatedSeg => Some(ScheduleMode::Segregated),
            Protocol::GatedMux => Some(ScheduleMode::Multiplexed),
            _ => None,
        }
    }

    pub fn is_gated(self) -> bool {
        self.schedule_mode().is_some()
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown protocol `{s}` (expected none, pause, gated_seg or gated_mux)")
            })
    }
}

/// How CPE payload is carried on the DSL line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Framing {
    /// PTM: 65 byte codewords with 64 payload bytes, plus one codeword per
    /// gated window for control and the report.
    #[default]
    Ptm,
    /// Raw bits at R_d with no framing overhead, as in the closed-form
    /// analysis.
    Plain,
}

impl Framing {
    /// Line bits reserved for a window that carries `payload_bits`.
    pub fn window_bits(self, payload_bits: u64) -> u64 {
        match self {
            Framing::Ptm => crate::dba::ptm_expand(payload_bits),
            Framing::Plain => payload_bits,
        }
    }

    /// Payload a window of `dsl_bits` line bits can carry: whole codewords
    /// minus the control codeword under PTM.
    pub fn payload_capacity(self, dsl_bits: u64) -> u64 {
        match self {
            Framing::Ptm => {
                (dsl_bits / PTM_CODEWORD_BITS).saturating_sub(1) * PTM_PAYLOAD_BYTES * 8
            }
            Framing::Plain => dsl_bits,
        }
    }

    /// Line bits in a window that precede the report.
    pub fn report_offset_bits(self, dsl_bits: u64) -> u64 {
        match self {
            Framing::Ptm => dsl_bits.saturating_sub(PTM_CODEWORD_BITS),
            Framing::Plain => dsl_bits,
        }
    }

    /// Nanoseconds for `payload_bits` of payload to cross the line at
    /// `dsl_rate`, rounded up.
    pub fn payload_time(self, payload_bits: u64, dsl_rate: u64) -> u64 {
        let (num, den) = self.payload_ratio();
        let n = payload_bits as u128 * num as u128 * 1_000_000_000;
        n.div_ceil(den as u128 * dsl_rate as u128) as u64
    }

    /// Line bits per payload bit, as num / den.
    pub fn payload_ratio(self) -> (u64, u64) {
        match self {
            Framing::Ptm => (PTM_CODEWORD_BITS / 8, PTM_PAYLOAD_BYTES),
            Framing::Plain => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauseConfig {
    /// Fraction of the per-CPE drop-point buffer that triggers a PAUSE.
    pub threshold: f64,
    pub duration: SimTime,
}

impl Default for PauseConfig {
    fn default() -> Self {
        PauseConfig {
            threshold: 0.35,
            duration: SimTime::from_millis(2),
        }
    }
}

impl PauseConfig {
    pub fn validate(self) -> Result<Self, ConfigError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ConfigError::new("pause_threshold", "must lie in (0, 1)"));
        }
        if self.duration == SimTime::ZERO {
            return Err(ConfigError::new("pause_duration", "must be positive"));
        }
        Ok(self)
    }

    /// Occupancy in bits at which a PAUSE is sent, rounded up.
    pub fn threshold_bits(&self, capacity_bits: u64) -> u64 {
        (self.threshold * capacity_bits as f64).ceil() as u64
    }
}

/// What a CPE's line may do right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpeLinkState {
    FreeRunning,
    Squelched { until: SimTime },
    Gated { start: SimTime, dsl_bits: u64 },
}

impl CpeLinkState {
    /// Whether a new frame may start at `now`. A frame already on the wire
    /// always completes.
    pub fn may_start_frame(&self, now: SimTime) -> bool {
        match *self {
            CpeLinkState::FreeRunning => true,
            CpeLinkState::Squelched { until } => now >= until,
            CpeLinkState::Gated { start, .. } => now >= start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauseFrame {
    pub sent: SimTime,
    /// When the CPE has received the frame.
    pub arrives: SimTime,
    /// End of the squelch it imposes.
    pub until: SimTime,
}

/// Drop-point side of PAUSE for one line. A PAUSE fires when the occupancy
/// has crossed the threshold from below since the last one, and the last
/// one's squelch has run out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauseMonitor {
    armed: bool,
    outstanding_until: SimTime,
}

impl Default for PauseMonitor {
    fn default() -> Self {
        PauseMonitor {
            armed: true,
            outstanding_until: SimTime::ZERO,
        }
    }
}

impl PauseMonitor {
    /// Records an occupancy sample that cannot trigger (a drain).
    pub fn observe(&mut self, occupancy_bits: u64, threshold_bits: u64) {
        if occupancy_bits < threshold_bits {
            self.armed = true;
        }
    }

    pub fn outstanding_until(&self) -> SimTime {
        self.outstanding_until
    }
}

/// Checks one line after data arrived at the drop-point. `delta` is the
/// line's one-way delay; the PAUSE frame itself takes a control frame's
/// time on the line.
pub fn pause_check(
    monitor: &mut PauseMonitor,
    occupancy_bits: u64,
    threshold_bits: u64,
    cfg: &PauseConfig,
    now: SimTime,
    delta: SimTime,
    dsl_rate: u64,
) -> Option<PauseFrame> {
    if occupancy_bits < threshold_bits {
        monitor.armed = true;
        return None;
    }
    if !monitor.armed || now < monitor.outstanding_until {
        return None;
    }
    let arrives = now + SimTime::tx_time(CONTROL_FRAME_BITS, dsl_rate) + delta;
    let until = arrives + cfg.duration;
    monitor.armed = false;
    monitor.outstanding_until = until;
    Some(PauseFrame {
        sent: now,
        arrives,
        until,
    })
}

/// A gate for one CPE: when to start (relative to the cycle origin) and
/// for how long, plus the PON bits the ONU forwards for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateMessage {
    pub cpe: usize,
    pub start: SimTime,
    pub dsl_bits: u64,
    pub pon_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatedCycle {
    pub schedule: CycleSchedule,
    /// Indexed by CPE.
    pub gates: Vec<GateMessage>,
}

/// Schedules one gated cycle. `demands` is indexed by CPE; segregated
/// cycles serve them in ascending order of PON bits.
pub fn build_gated_cycle(
    mode: ScheduleMode,
    link: &OnuLink<'_>,
    demands: &[Demand],
) -> Result<GatedCycle, ScheduleError> {
    let schedule = match mode {
        ScheduleMode::Segregated => {
            let pon: Vec<u64> = demands.iter().map(|d| d.pon_bits).collect();
            let ordered: Vec<Demand> = sort_cpes(&pon).into_iter().map(|i| demands[i]).collect();
            segregated_schedule_for(link, &ordered)?
        }
        ScheduleMode::Multiplexed => multiplexed_schedule_for(link, demands)?,
    };
    let mut gates: Vec<GateMessage> = demands
        .iter()
        .map(|d| GateMessage {
            cpe: d.cpe,
            start: SimTime::ZERO,
            dsl_bits: d.dsl_bits,
            pon_bits: d.pon_bits,
        })
        .collect();
    for (slot, &cpe) in schedule.order.iter().enumerate() {
        let i = demands
            .iter()
            .position(|d| d.cpe == cpe)
            .expect("scheduled CPE comes from the demands");
        gates[i].start = schedule.cpe_starts[slot];
    }
    Ok(GatedCycle { schedule, gates })
}

/// A queued Ethernet frame. `sent` counts bits already put on the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub id: u64,
    pub bits: u32,
    pub birth: SimTime,
    pub sent: u32,
}

impl Frame {
    pub fn new(id: u64, bits: u32, birth: SimTime) -> Self {
        Frame {
            id,
            bits,
            birth,
            sent: 0,
        }
    }

    pub fn remaining(&self) -> u32 {
        self.bits - self.sent
    }
}

/// Part of a frame carried by one transmission. `completes` is set on the
/// piece that carries the frame's last bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub frame: Frame,
    pub bits: u32,
    pub completes: bool,
}

/// Fills a gated window with up to `payload_bits` from the head of the
/// queue. The frame that does not fit is split; its remainder stays queued.
pub fn cpe_transmit(queue: &mut VecDeque<Frame>, payload_bits: u64) -> Vec<Piece> {
    let mut left = payload_bits;
    let mut out = Vec::new();
    while left > 0 {
        let Some(head) = queue.front_mut() else {
            break;
        };
        let take = (head.remaining() as u64).min(left) as u32;
        head.sent += take;
        left -= take as u64;
        let completes = head.sent == head.bits;
        out.push(Piece {
            frame: *head,
            bits: take,
            completes,
        });
        if completes {
            queue.pop_front();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    #[test]
    fn pause_threshold_for_one_megabyte() {
        let cfg = PauseConfig::default();
        assert_eq!(cfg.threshold_bits(8 * 1024 * 1024), 2_936_013);
    }

    #[test]
    fn pause_fires_on_upward_crossing_only() {
        let cfg = PauseConfig::default();
        let mut m = PauseMonitor::default();
        let t = SimTime::from_micros;
        let thr = 1_000;
        assert!(pause_check(&mut m, 999, thr, &cfg, t(1), SimTime::ZERO, 77_000_000).is_none());
        let p = pause_check(&mut m, 1_000, thr, &cfg, t(2), SimTime::ZERO, 77_000_000).unwrap();
        assert_eq!(p.arrives, t(2) + SimTime::from_nanos(6_650));
        assert_eq!(p.until, p.arrives + cfg.duration);
        // Still above after the squelch: no new crossing, no new PAUSE.
        assert!(pause_check(&mut m, 5_000, thr, &cfg, t(3_000), SimTime::ZERO, 77_000_000).is_none());
        m.observe(10, thr);
        // Re-armed, but the first squelch has not run out yet.
        assert!(pause_check(&mut m, 2_000, thr, &cfg, t(100), SimTime::ZERO, 77_000_000).is_none());
        assert!(pause_check(&mut m, 2_000, thr, &cfg, t(5_000), SimTime::ZERO, 77_000_000).is_some());
    }

    #[test]
    fn below_threshold_never_pauses() {
        let cfg = PauseConfig::default();
        let mut m = PauseMonitor::default();
        for k in 0..1_000 {
            let t = SimTime::from_micros(k);
            assert!(pause_check(&mut m, k % 999, 1_000, &cfg, t, SimTime::ZERO, 77_000_000).is_none());
        }
    }

    #[test]
    fn squelched_line_waits() {
        let s = CpeLinkState::Squelched {
            until: SimTime::from_micros(10),
        };
        assert!(!s.may_start_frame(SimTime::from_micros(9)));
        assert!(s.may_start_frame(SimTime::from_micros(10)));
        assert!(CpeLinkState::FreeRunning.may_start_frame(SimTime::ZERO));
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("gated".parse::<Protocol>().is_err());
    }

    #[test]
    fn transmit_splits_the_frame_that_does_not_fit() {
        let mut q: VecDeque<Frame> = [512u32, 12_144, 4_640]
            .iter()
            .enumerate()
            .map(|(i, &b)| Frame::new(i as u64, b, SimTime::ZERO))
            .collect();
        let pieces = cpe_transmit(&mut q, 4_096);
        assert_eq!(pieces.len(), 2);
        assert!(pieces[0].completes);
        assert_eq!(pieces[1].bits, 3_584);
        assert!(!pieces[1].completes);
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].remaining(), 12_144 - 3_584);
        // Zero window: nothing moves.
        assert!(cpe_transmit(&mut q, 0).is_empty());
    }

    #[test]
    fn ptm_window_that_fits_drains_the_queue() {
        let sizes = [512u32, 2_400, 12_144, 4_640];
        let total: u64 = sizes.iter().map(|&b| b as u64).sum();
        let mut q: VecDeque<Frame> = sizes
            .iter()
            .enumerate()
            .map(|(i, &b)| Frame::new(i as u64, b, SimTime::ZERO))
            .collect();
        let dsl = Framing::Ptm.window_bits(total);
        let cap = Framing::Ptm.payload_capacity(dsl);
        assert!(cap >= total);
        let pieces = cpe_transmit(&mut q, cap);
        assert!(q.is_empty());
        assert!(pieces.iter().all(|p| p.completes));
        assert_eq!(Framing::Ptm.payload_capacity(520), 0);
    }

    #[test]
    fn idle_cycle_is_report_only() {
        let net = NetworkConfig::default();
        let link = net.link(SimTime::from_micros(20));
        let demands: Vec<Demand> = (0..8)
            .map(|c| Demand {
                cpe: c,
                pon_bits: 0,
                dsl_bits: Framing::Ptm.window_bits(0),
            })
            .collect();
        for mode in [ScheduleMode::Segregated, ScheduleMode::Multiplexed] {
            let cyc = build_gated_cycle(mode, &link, &demands).unwrap();
            assert_eq!(cyc.schedule.total_pon_bits(), 0);
            assert!(cyc.gates.iter().all(|g| g.dsl_bits == 520 && g.pon_bits == 0));
        }
    }

    #[test]
    fn mux_equal_grants_start_together() {
        let net = NetworkConfig::default();
        let link = net.link(SimTime::from_micros(50));
        let demands: Vec<Demand> = (0..8).map(|c| Demand::plain(c, 50_000)).collect();
        let cyc = build_gated_cycle(ScheduleMode::Multiplexed, &link, &demands).unwrap();
        assert!(cyc.gates.windows(2).all(|w| w[0].start == w[1].start));
    }

    #[test]
    fn seg_gates_carry_schedule_starts() {
        let net = NetworkConfig {
            cpes_per_onu: 2,
            cpe_delays: vec![SimTime::ZERO; 2],
            ..NetworkConfig::default()
        };
        let link = net.link(SimTime::from_micros(30));
        let demands = [Demand::plain(0, 80_000), Demand::plain(1, 20_000)];
        let cyc = build_gated_cycle(ScheduleMode::Segregated, &link, &demands).unwrap();
        let direct = segregated_schedule_for(&link, &[demands[1], demands[0]]).unwrap();
        assert_eq!(cyc.schedule.order, vec![1, 0]);
        assert_eq!(cyc.gates[1].start, direct.cpe_starts[0]);
        assert_eq!(cyc.gates[0].start, direct.cpe_starts[1]);
    }
}
