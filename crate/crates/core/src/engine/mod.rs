//! Discrete-event simulation of the hybrid access network.
//!
//! One [`run`] owns a single event loop: CPEs generate frames, send them on
//! their DSL line (freely, under PAUSE, or when gated), the drop-point
//! buffers them per CPE, and each ONU forwards them in the PON burst the OLT
//! granted it. The OLT sizes a new grant as soon as an ONU's report arrives
//! (online polling) and places bursts back to back with a guard time.
//!
//! Drop-point occupancy is metered as a fluid: bits arrive at the line's
//! payload rate and leave at R_p, so the recorded peaks follow the same
//! piecewise-linear curves as the closed-form analysis.

mod oracle;

pub use oracle::{oracle_replay, CpeTrace, OracleOptions, OracleReport, Underrun};

use crate::dba::{distribute_to_cpes, size_onu_grant, DbaKind, DbaPolicy};
use crate::flowcontrol::{
    build_gated_cycle, cpe_transmit, pause_check, Frame, Framing, PauseConfig, PauseMonitor,
    Protocol,
};
use crate::model::{ConfigError, NetworkConfig, CONTROL_FRAME_BITS};
use crate::schedule::{Demand, ScheduleError};
use crate::time::{SimTime, NANOS_PER_SEC};
use crate::traffic::{make_stream, PacketStream, TrafficConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use thiserror::Error;

/// Occupancy is metered in 1/(65e9) bit: DSL payload (64/65 R_d), raw DSL
/// and PON rates then all move a whole number of units per nanosecond.
pub const UNITS_PER_BIT: i128 = 65 * NANOS_PER_SEC as i128;

/// One megabyte, the default buffer size, in bits.
pub const MEGABYTE_BITS: u64 = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub traffic: TrafficConfig,
    pub protocol: Protocol,
    pub dba: DbaKind,
    pub pause: PauseConfig,
    /// Per-CPE drop-point buffer in bits, `None` for unbounded. Enforced
    /// for the free-running protocols; gated cycles only ever bring what
    /// the OLT scheduled.
    pub buffer_capacity: Option<u64>,
    /// Queue at each CPE in bits, `None` for unbounded.
    pub modem_capacity: Option<u64>,
    /// Frames to generate.
    pub packets: u64,
    /// Leading fraction of the frames left out of loss and delay means.
    pub warmup: f64,
    pub framing: Framing,
    /// Bits queued at every CPE at time zero, as maximum-size frames. Not
    /// counted in `packets`.
    pub preload_bits: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetworkConfig::default(),
            traffic: TrafficConfig::default(),
            protocol: Protocol::GatedSeg,
            dba: DbaKind::Excess,
            pause: PauseConfig::default(),
            buffer_capacity: Some(MEGABYTE_BITS),
            modem_capacity: None,
            packets: 100_000,
            warmup: 0.1,
            framing: Framing::Ptm,
            preload_bits: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(self) -> Result<Self, ConfigError> {
        let net = self.net.clone().validate()?;
        let traffic = self.traffic.clone().validate(&net)?;
        let pause = self.pause.validate()?;
        if self.packets < 10_000 {
            return Err(ConfigError::new("packets", "must be at least 10^4"));
        }
        if !(0.0..0.5).contains(&self.warmup) {
            return Err(ConfigError::new("warmup", "must lie in [0, 0.5)"));
        }
        if self.protocol == Protocol::GatedMux && !net.mux_feasible() {
            return Err(ConfigError::new(
                "protocol",
                "gated_mux needs E * R_d <= R_p",
            ));
        }
        if self.protocol == Protocol::Pause && self.buffer_capacity.is_none() {
            return Err(ConfigError::new(
                "cpe_capacity",
                "PAUSE needs a finite drop-point buffer",
            ));
        }
        if self.buffer_capacity == Some(0) || self.modem_capacity == Some(0) {
            return Err(ConfigError::new(
                "capacity",
                "use an unbounded buffer instead of zero",
            ));
        }
        if net.cpes_per_onu > u16::MAX as usize || net.onus > u16::MAX as usize {
            return Err(ConfigError::new("E", "too many CPEs"));
        }
        Ok(RunConfig {
            net,
            traffic,
            pause,
            ..self
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Raw counts behind a [`MetricsRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_cpe: u64,
    pub dropped_drop_point: u64,
    /// Still queued somewhere when the run stopped.
    pub in_flight: u64,
    /// Grants sized after warm-up while frames were still being generated.
    pub cycles: u64,
    /// Of those, grants above the Limited cap.
    pub excess_cycles: u64,
    pub max_onu_grant: u64,
    pub pauses: u64,
    /// Frames the ONU had to wait for inside its burst.
    pub pon_stalls: u64,
    /// Bursts that ran past the window the OLT allotted.
    pub burst_overruns: u64,
    pub delivered_bits: u64,
    pub births_end: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Largest per-CPE drop-point occupancy, bits.
    pub max_cpe_occupancy: u64,
    /// Largest aggregate drop-point occupancy of one ONU, bits.
    pub max_onu_occupancy: u64,
    pub loss_rate: f64,
    /// Birth to complete reception at the drop-point, seconds.
    pub mean_dsl_delay: f64,
    /// Drop-point reception to OLT reception, seconds.
    pub mean_pon_delay: f64,
    pub packets_delivered: u64,
    /// Delivered bits per second over the generation period.
    pub throughput: f64,
    pub counters: Counters,
}

/// Simulates one configuration.
pub fn run(cfg: &RunConfig) -> Result<MetricsRecord, EngineError> {
    let cfg = cfg.clone().validate()?;
    let preload = packetize(cfg.preload_bits, cfg.net.max_packet_bits as u32);
    let lines = cfg.net.onus * cfg.net.cpes_per_onu;
    let mut sim = Sim::new(&cfg, None, vec![preload; lines], true);
    sim.run();
    Ok(sim.metrics())
}

/// Splits `bits` into maximum-size frames, the odd remainder first.
pub fn packetize(bits: u64, max: u32) -> Vec<u32> {
    if bits == 0 {
        return Vec::new();
    }
    let full = bits / max as u64;
    let rest = (bits % max as u64) as u32;
    let mut out = Vec::with_capacity(full as usize + 1);
    if rest > 0 {
        out.push(rest);
    }
    out.extend(std::iter::repeat_n(max, full as usize));
    out
}

/// Peak drop-point occupancy of one gated cycle that carries `grant_bits`
/// for a single CPE, measured by the event loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleMeasurement {
    pub grant_bits: u64,
    /// Measured peak, in [`UNITS_PER_BIT`] units.
    pub peak_units: i128,
    dsl_rate: u64,
    pon_rate: u64,
    max_packet: u64,
}

impl CycleMeasurement {
    pub fn peak_bits(&self) -> f64 {
        self.peak_units as f64 / UNITS_PER_BIT as f64
    }

    /// Measured minus predicted peak, G - (R_d/R_p)(G - M), in bits.
    pub fn excess_bits(&self) -> f64 {
        let (g, m) = (self.grant_bits as f64, self.max_packet as f64);
        self.peak_bits() - (g - self.dsl_rate as f64 / self.pon_rate as f64 * (g - m))
    }

    /// Exact check that the measured peak lies within R_d * 1 ns bits of the
    /// prediction.
    pub fn within_one_dsl_nanosecond(&self) -> bool {
        let (rd, rp) = (self.dsl_rate as i128, self.pon_rate as i128);
        let (g, m) = (self.grant_bits as i128, self.max_packet as i128);
        // Both sides times R_p, in units.
        let predicted = UNITS_PER_BIT * (g * rp - rd * (g - m));
        let diff = self.peak_units * rp - predicted;
        let tol = rd * 65 * rp;
        diff.abs() <= tol
    }
}

/// Runs one ONU through a report-only cycle and then a gated segregated
/// cycle that moves `grant_bits` queued at CPE 0, with unframed DSL bits
/// and an unlimited grant, and returns the peak the drop-point meter saw
/// for that CPE.
pub fn measure_single_cpe_cycle(
    net: &NetworkConfig,
    tau: SimTime,
    grant_bits: u64,
) -> Result<CycleMeasurement, EngineError> {
    let net = NetworkConfig {
        onus: 1,
        ..net.clone()
    }
    .validate()?;
    if grant_bits < net.max_packet_bits {
        return Err(ScheduleError::GrantBelowMax {
            grant: grant_bits,
            max: net.max_packet_bits,
        }
        .into());
    }
    let cfg = RunConfig {
        net: net.clone(),
        protocol: Protocol::GatedSeg,
        dba: DbaKind::Gated,
        framing: Framing::Plain,
        buffer_capacity: None,
        modem_capacity: None,
        packets: 0,
        warmup: 0.0,
        ..RunConfig::default()
    };
    let mut preload = vec![Vec::new(); net.cpes_per_onu];
    preload[0] = packetize(grant_bits, net.max_packet_bits as u32);
    let mut sim = Sim::new(&cfg, Some(vec![tau.as_nanos()]), preload, false);
    sim.run();
    Ok(CycleMeasurement {
        grant_bits,
        peak_units: sim.lines[0].meter.peak,
        dsl_rate: net.dsl_rate,
        pon_rate: net.pon_rate,
        max_packet: net.max_packet_bits,
    })
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub dba: DbaKind,
    pub hurst: f64,
    pub load: f64,
    pub seed: u64,
    pub result: Result<MetricsRecord, EngineError>,
}

/// The axes of a sweep; every combination is run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub protocols: Vec<Protocol>,
    pub dbas: Vec<DbaKind>,
    pub hursts: Vec<f64>,
    pub loads: Vec<f64>,
}

/// Seed of the (hurst, load) point. Protocols and DBAs at the same point
/// see the same traffic.
pub fn point_seed(base: u64, hurst: f64, load: f64) -> u64 {
    let mut h = base ^ 0x5851_f42d_4c95_7f2d;
    for v in [hurst.to_bits(), load.to_bits()] {
        h = crate::traffic::cpe_seed(h, (v >> 32) as usize, (v & 0xffff_ffff) as usize);
        h = h.rotate_left(17).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
    h
}

/// The configurations of a sweep, in row order (protocol, dba, hurst, load).
pub fn sweep_configs(base: &RunConfig, axes: &SweepAxes) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &protocol in &axes.protocols {
        for &dba in &axes.dbas {
            for &hurst in &axes.hursts {
                for &load in &axes.loads {
                    let mut cfg = base.clone();
                    cfg.protocol = protocol;
                    cfg.dba = dba;
                    cfg.traffic.hurst = hurst;
                    cfg.traffic.load = load;
                    cfg.traffic.seed = point_seed(base.traffic.seed, hurst, load);
                    out.push(cfg);
                }
            }
        }
    }
    out
}

/// Runs every combination of the axes, in parallel. Rows come back in the
/// order of [`sweep_configs`]; a failing run fills its own row only.
pub fn sweep(base: &RunConfig, axes: &SweepAxes) -> Vec<SweepRow> {
    sweep_configs(base, axes)
        .into_par_iter()
        .map(|cfg| SweepRow {
            protocol: cfg.protocol,
            dba: cfg.dba,
            hurst: cfg.traffic.hurst,
            load: cfg.traffic.load,
            seed: cfg.traffic.seed,
            result: run(&cfg),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Event loop

#[derive(Debug, Clone, Copy)]
enum Ev {
    Birth(u32),
    TxDone(u32),
    Resume(u32),
    PauseArrive(u32, u64),
    ArriveStart(u32, u64),
    ArriveEnd(u32),
    Window(u32, u64),
    CpeReport(u32),
    BurstStart(u32),
    OutflowOn(u32),
    ServeDone(u32),
    BurstEnd(u32),
    ReportAtOlt(u32),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    t: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Reversed: BinaryHeap pops the earliest (time, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

/// Piecewise-linear fluid level with its running maximum.
#[derive(Debug, Clone, Copy, Default)]
struct Meter {
    value: i128,
    rate: i128,
    at: u64,
    peak: i128,
}

impl Meter {
    fn advance(&mut self, now: u64) {
        self.value += self.rate * (now - self.at) as i128;
        self.at = now;
        self.peak = self.peak.max(self.value);
    }

    fn add_rate(&mut self, now: u64, d: i128) {
        self.advance(now);
        self.rate += d;
    }

    fn adjust(&mut self, now: u64, d: i128) {
        self.advance(now);
        self.value += d;
        self.peak = self.peak.max(self.value);
    }

    fn bits_now(&mut self, now: u64) -> u64 {
        self.advance(now);
        (self.value.max(0) / UNITS_PER_BIT) as u64
    }
}

#[derive(Debug, Clone, Copy)]
struct Flight {
    frame: Frame,
    bits: u32,
    completes: bool,
    ends_stream: bool,
    admitted: bool,
}

#[derive(Debug, Clone, Copy)]
struct Ready {
    frame: Frame,
    remaining: u32,
    dp_time: u64,
}

/// A CPE, its DSL line and its share of the drop-point buffer.
struct Line {
    delta: u64,
    stream: Option<PacketStream>,
    next_birth: Option<(SimTime, u32)>,
    queue: VecDeque<Frame>,
    queued_bits: u64,
    tx_busy: bool,
    squelch_until: u64,
    resume_pending: bool,
    flights: VecDeque<Flight>,
    inflow_start: u64,
    inflow_bits: u64,
    partial: Option<(Frame, u32)>,
    ready: VecDeque<Ready>,
    ready_bits: u64,
    meter: Meter,
    pause: PauseMonitor,
    report: u64,
}

impl Line {
    fn dp_backlog(&self) -> u64 {
        self.ready_bits + self.partial.map_or(0, |p| p.1 as u64)
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    cpe: Option<usize>,
    offset: u64,
    used: u64,
}

#[derive(Debug, Clone, Copy)]
struct Serving {
    cpe: usize,
    frame: Frame,
    bits: u32,
    completes: bool,
    dp_time: u64,
    start: u64,
    end: u64,
}

#[derive(Debug, Default)]
struct Burst {
    start: u64,
    slots: Vec<Slot>,
    cur: usize,
    quota: Vec<u64>,
    wait_for_arrivals: bool,
    next_free: u64,
    serving: Option<Serving>,
    data_end: u64,
    alloc_end: u64,
    finished: bool,
}

struct Onu {
    tau: u64,
    meter: Meter,
    snapshot: Vec<u64>,
    burst: Burst,
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    policy: DbaPolicy,
    e: usize,
    heap: BinaryHeap<Entry>,
    seq: u64,
    now: u64,
    lines: Vec<Line>,
    onus: Vec<Onu>,
    channel_free: u64,
    pool: u64,
    next_id: u64,
    budget_end: u64,
    warmup_id: u64,
    births_done: bool,
    deadline: u64,
    in_rate: i128,
    out_rate: i128,
    report_ns: u64,
    pause_thr: u64,
    dropped_post_warmup: u64,
    dsl_delay_sum: f64,
    pon_delay_sum: f64,
    delay_count: u64,
    c: Counters,
}

/// How long a run may keep going after the last birth to drain queues.
const DRAIN_LIMIT_NS: u64 = 30 * NANOS_PER_SEC;

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig, taus: Option<Vec<u64>>, preload: Vec<Vec<u32>>, traffic: bool) -> Self {
        let net = &cfg.net;
        let e = net.cpes_per_onu;
        let taus = taus.map(|t| vec![t[0]; net.onus]).unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.traffic.seed ^ 0x7461_755f_6472_6177);
            (0..net.onus)
                .map(|_| rng.random_range(net.tau_min.as_nanos()..=net.tau_max.as_nanos()))
                .collect()
        });
        let mut next_id = 0u64;
        let mut lines = Vec::with_capacity(net.onus * e);
        for onu in 0..net.onus {
            for cpe in 0..e {
                let mut queue = VecDeque::new();
                let mut queued_bits = 0;
                for &bits in &preload[onu * e + cpe] {
                    queue.push_back(Frame::new(next_id, bits, SimTime::ZERO));
                    queued_bits += bits as u64;
                    next_id += 1;
                }
                let mut stream = traffic.then(|| make_stream(&cfg.traffic, net, onu, cpe));
                let next_birth = stream.as_mut().and_then(|s| s.next());
                lines.push(Line {
                    delta: net.cpe_delays[cpe].as_nanos(),
                    stream,
                    next_birth,
                    queue,
                    queued_bits,
                    tx_busy: false,
                    squelch_until: 0,
                    resume_pending: false,
                    flights: VecDeque::new(),
                    inflow_start: 0,
                    inflow_bits: 0,
                    partial: None,
                    ready: VecDeque::new(),
                    ready_bits: 0,
                    meter: Meter::default(),
                    pause: PauseMonitor::default(),
                    report: 0,
                });
            }
        }
        let onus = taus
            .iter()
            .map(|&tau| Onu {
                tau,
                meter: Meter::default(),
                snapshot: vec![0; e],
                burst: Burst {
                    finished: true,
                    ..Burst::default()
                },
            })
            .collect();
        let preloaded = next_id;
        let (num, den) = cfg.framing.payload_ratio();
        // Payload units per ns: R_d * (den/num) bits/s, times 65e9 / 1e9.
        let in_rate = net.dsl_rate as i128 * 65 * den as i128 / num as i128;
        let budget = if traffic { cfg.packets } else { 0 };
        let mut sim = Sim {
            cfg,
            policy: DbaPolicy::new(cfg.dba, net),
            e,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            lines,
            onus,
            channel_free: 0,
            pool: 0,
            next_id,
            budget_end: preloaded + budget,
            warmup_id: preloaded + (budget as f64 * cfg.warmup) as u64,
            births_done: budget == 0,
            deadline: if budget == 0 { DRAIN_LIMIT_NS } else { u64::MAX },
            in_rate,
            out_rate: net.pon_rate as i128 * 65,
            report_ns: SimTime::tx_time(CONTROL_FRAME_BITS, net.pon_rate).as_nanos(),
            pause_thr: cfg
                .buffer_capacity
                .map_or(u64::MAX, |c| cfg.pause.threshold_bits(c)),
            dropped_post_warmup: 0,
            dsl_delay_sum: 0.0,
            pon_delay_sum: 0.0,
            delay_count: 0,
            c: Counters {
                generated: preloaded,
                ..Counters::default()
            },
        };
        if !sim.births_done {
            for l in 0..sim.lines.len() {
                if let Some((t, _)) = sim.lines[l].next_birth {
                    sim.push(t.as_nanos(), Ev::Birth(l as u32));
                }
            }
        }
        for l in 0..sim.lines.len() {
            if !cfg.protocol.is_gated() {
                sim.try_start_tx(l);
            }
        }
        for o in 0..sim.onus.len() {
            sim.push(0, Ev::ReportAtOlt(o as u32));
        }
        sim
    }

    fn push(&mut self, t: u64, ev: Ev) {
        debug_assert!(t >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.heap.push(Entry {
            t,
            seq: self.seq,
            ev,
        });
    }

    fn dropped(&self) -> u64 {
        self.c.dropped_cpe + self.c.dropped_drop_point
    }

    fn run(&mut self) {
        while let Some(Entry { t, ev, .. }) = self.heap.pop() {
            if t > self.deadline {
                break;
            }
            self.now = t;
            self.handle(ev);
            if self.births_done && self.c.delivered + self.dropped() == self.c.generated {
                break;
            }
        }
        self.c.end = SimTime::from_nanos(self.now);
        self.c.in_flight = self.c.generated - self.c.delivered - self.dropped();
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Birth(l) => self.birth(l as usize),
            Ev::TxDone(l) => {
                self.lines[l as usize].tx_busy = false;
                self.try_start_tx(l as usize);
            }
            Ev::Resume(l) => {
                self.lines[l as usize].resume_pending = false;
                self.try_start_tx(l as usize);
            }
            Ev::PauseArrive(l, until) => {
                let line = &mut self.lines[l as usize];
                line.squelch_until = line.squelch_until.max(until);
            }
            Ev::ArriveStart(l, bits) => self.arrive_start(l as usize, bits),
            Ev::ArriveEnd(l) => self.arrive_end(l as usize),
            Ev::Window(l, dsl_bits) => self.window(l as usize, dsl_bits),
            Ev::CpeReport(l) => {
                let line = &mut self.lines[l as usize];
                line.report = line.queued_bits;
            }
            Ev::BurstStart(o) => self.try_serve(o as usize),
            Ev::OutflowOn(o) => self.outflow_on(o as usize),
            Ev::ServeDone(o) => self.serve_done(o as usize),
            Ev::BurstEnd(o) => self.burst_end(o as usize),
            Ev::ReportAtOlt(o) => self.report_at_olt(o as usize),
        }
    }

    fn record_loss(&mut self, id: u64) {
        if id >= self.warmup_id {
            self.dropped_post_warmup += 1;
        }
    }

    fn birth(&mut self, l: usize) {
        if self.births_done {
            return;
        }
        let now = self.now;
        let line = &mut self.lines[l];
        let (_, bits) = line.next_birth.take().expect("scheduled birth");
        let id = self.next_id;
        self.next_id += 1;
        self.c.generated += 1;
        if self.next_id == self.budget_end {
            self.births_done = true;
            self.c.births_end = SimTime::from_nanos(now);
            self.deadline = now.saturating_add(DRAIN_LIMIT_NS);
        } else {
            line.next_birth = line.stream.as_mut().and_then(|s| s.next());
            if let Some((t, _)) = line.next_birth {
                let t = t.as_nanos();
                self.push(t, Ev::Birth(l as u32));
            }
        }
        let line = &mut self.lines[l];
        if self
            .cfg
            .modem_capacity
            .is_some_and(|cap| line.queued_bits + bits as u64 > cap)
        {
            self.c.dropped_cpe += 1;
            self.record_loss(id);
            return;
        }
        line.queue
            .push_back(Frame::new(id, bits, SimTime::from_nanos(now)));
        line.queued_bits += bits as u64;
        if !self.cfg.protocol.is_gated() {
            self.try_start_tx(l);
        }
    }

    /// Free-running lines: start the next frame if allowed.
    fn try_start_tx(&mut self, l: usize) {
        let now = self.now;
        let line = &mut self.lines[l];
        if line.tx_busy || line.queue.is_empty() {
            return;
        }
        if now < line.squelch_until {
            if !line.resume_pending {
                line.resume_pending = true;
                let t = line.squelch_until;
                self.push(t, Ev::Resume(l as u32));
            }
            return;
        }
        let frame = line.queue.pop_front().expect("nonempty");
        line.queued_bits -= frame.remaining() as u64;
        let lt = self
            .cfg
            .framing
            .payload_time(frame.bits as u64, self.cfg.net.dsl_rate);
        line.tx_busy = true;
        line.flights.push_back(Flight {
            frame,
            bits: frame.bits,
            completes: true,
            ends_stream: true,
            admitted: false,
        });
        let delta = line.delta;
        self.push(now + lt, Ev::TxDone(l as u32));
        self.push(now + delta, Ev::ArriveStart(l as u32, frame.bits as u64));
        self.push(now + delta + lt, Ev::ArriveEnd(l as u32));
    }

    fn onu_of(&self, l: usize) -> usize {
        l / self.e
    }

    fn arrive_start(&mut self, l: usize, bits: u64) {
        let now = self.now;
        let o = self.onu_of(l);
        let gated = self.cfg.protocol.is_gated();
        let line = &mut self.lines[l];
        if !gated {
            if let Some(cap) = self.cfg.buffer_capacity {
                line.meter.advance(now);
                if line.meter.value + bits as i128 * UNITS_PER_BIT > cap as i128 * UNITS_PER_BIT {
                    let id = line.flights.front().expect("frame on the line").frame.id;
                    self.c.dropped_drop_point += 1;
                    self.record_loss(id);
                    return;
                }
            }
            line.flights.front_mut().expect("frame on the line").admitted = true;
        }
        line.inflow_start = now;
        line.inflow_bits = bits;
        line.meter.add_rate(now, self.in_rate);
        self.onus[o].meter.add_rate(now, self.in_rate);
    }

    fn arrive_end(&mut self, l: usize) {
        let now = self.now;
        let o = self.onu_of(l);
        let line = &mut self.lines[l];
        let f = line.flights.pop_front().expect("frame on the line");
        if !f.admitted {
            return;
        }
        if f.ends_stream {
            let dur = (now - line.inflow_start) as i128;
            let fix = line.inflow_bits as i128 * UNITS_PER_BIT - self.in_rate * dur;
            line.meter.add_rate(now, -self.in_rate);
            line.meter.adjust(now, fix);
            let m = &mut self.onus[o].meter;
            m.add_rate(now, -self.in_rate);
            m.adjust(now, fix);
        }
        if f.completes {
            line.partial = None;
            line.ready.push_back(Ready {
                frame: f.frame,
                remaining: f.frame.bits,
                dp_time: now,
            });
            line.ready_bits += f.frame.bits as u64;
        } else {
            let got = line.partial.map_or(0, |p| p.1);
            line.partial = Some((f.frame, got + f.bits));
        }
        if self.cfg.protocol == Protocol::Pause {
            let occ = line.meter.bits_now(now);
            if let Some(p) = pause_check(
                &mut line.pause,
                occ,
                self.pause_thr,
                &self.cfg.pause,
                SimTime::from_nanos(now),
                SimTime::from_nanos(line.delta),
                self.cfg.net.dsl_rate,
            ) {
                self.c.pauses += 1;
                self.push(p.arrives.as_nanos(), Ev::PauseArrive(l as u32, p.until.as_nanos()));
            }
        }
        if self.cfg.protocol.is_gated() {
            self.try_serve(o);
        }
    }

    /// A gated CPE's window opens.
    fn window(&mut self, l: usize, dsl_bits: u64) {
        let now = self.now;
        let framing = self.cfg.framing;
        let rd = self.cfg.net.dsl_rate;
        let line = &mut self.lines[l];
        let pieces = cpe_transmit(&mut line.queue, framing.payload_capacity(dsl_bits));
        let alpha = now + line.delta;
        let mut sent = 0u64;
        let n = pieces.len();
        let mut ends = Vec::with_capacity(n);
        for (i, p) in pieces.into_iter().enumerate() {
            sent += p.bits as u64;
            line.flights.push_back(Flight {
                frame: p.frame,
                bits: p.bits,
                completes: p.completes,
                ends_stream: i + 1 == n,
                admitted: true,
            });
            ends.push(alpha + framing.payload_time(sent, rd));
        }
        line.queued_bits -= sent;
        let report_at = now + SimTime::tx_time(framing.report_offset_bits(dsl_bits), rd).as_nanos();
        if sent > 0 {
            self.push(alpha, Ev::ArriveStart(l as u32, sent));
            for t in ends {
                self.push(t, Ev::ArriveEnd(l as u32));
            }
        }
        self.push(report_at, Ev::CpeReport(l as u32));
    }

    fn pon_ns(&self, bits: u64) -> u64 {
        SimTime::tx_time(bits, self.cfg.net.pon_rate).as_nanos()
    }

    /// Lets ONU `o` forward its next frame if it can.
    fn try_serve(&mut self, o: usize) {
        let now = self.now;
        let e = self.e;
        loop {
            let b = &self.onus[o].burst;
            if b.finished || b.serving.is_some() || now < b.start {
                return;
            }
            if b.cur >= b.slots.len() {
                let end = b.data_end.max(b.next_free).max(now);
                self.onus[o].burst.finished = true;
                self.push(end, Ev::BurstEnd(o as u32));
                return;
            }
            let slot = b.slots[b.cur];
            let base = o * e;
            let eligible = |c: usize| b.quota[c] > 0;
            let pick = match slot.cpe {
                Some(c) => (eligible(c) && !self.lines[base + c].ready.is_empty()).then_some(c),
                None => (0..e)
                    .filter(|&c| eligible(c))
                    .filter_map(|c| self.lines[base + c].ready.front().map(|r| (r.dp_time, c)))
                    .min()
                    .map(|(_, c)| c),
            };
            let Some(c) = pick else {
                let expecting = b.wait_for_arrivals
                    && match slot.cpe {
                        Some(c) => eligible(c) && self.expects_frame(base + c),
                        None => (0..e).any(|c| eligible(c) && self.expects_frame(base + c)),
                    };
                if expecting {
                    return;
                }
                self.onus[o].burst.cur += 1;
                continue;
            };
            let line = &mut self.lines[base + c];
            let head = line.ready.front_mut().expect("picked a ready frame");
            let bits = (head.remaining as u64).min(b.quota[c]) as u32;
            let frame = head.frame;
            let dp_time = head.dp_time;
            head.remaining -= bits;
            let completes = head.remaining == 0;
            if completes {
                line.ready.pop_front();
            }
            line.ready_bits -= bits as u64;
            let (start, offset, next_free) = (b.start, slot.offset + slot.used, b.next_free);
            let nominal = start + self.pon_ns(offset);
            let floor = nominal.max(next_free);
            let s = floor.max(now);
            let end = if s == nominal {
                start + self.pon_ns(offset + bits as u64)
            } else {
                s + self.pon_ns(bits as u64)
            };
            if s > floor {
                self.c.pon_stalls += 1;
            }
            let b = &mut self.onus[o].burst;
            b.quota[c] -= bits as u64;
            b.slots[b.cur].used += bits as u64;
            b.serving = Some(Serving {
                cpe: c,
                frame,
                bits,
                completes,
                dp_time,
                start: s,
                end,
            });
            if s == now {
                self.outflow_on(o);
            } else {
                self.push(s, Ev::OutflowOn(o as u32));
            }
            self.push(end, Ev::ServeDone(o as u32));
            return;
        }
    }

    /// Whether a frame of line `l` is on its way and will complete.
    fn expects_frame(&self, l: usize) -> bool {
        self.lines[l].flights.iter().any(|f| f.completes && f.admitted)
    }

    fn outflow_on(&mut self, o: usize) {
        let now = self.now;
        let s = self.onus[o].burst.serving.expect("frame in service");
        let l = o * self.e + s.cpe;
        self.lines[l].meter.add_rate(now, -self.out_rate);
        self.onus[o].meter.add_rate(now, -self.out_rate);
    }

    fn serve_done(&mut self, o: usize) {
        let now = self.now;
        let s = self.onus[o].burst.serving.take().expect("frame in service");
        let l = o * self.e + s.cpe;
        let fix = self.out_rate * (s.end - s.start) as i128 - s.bits as i128 * UNITS_PER_BIT;
        for m in [&mut self.lines[l].meter, &mut self.onus[o].meter] {
            m.add_rate(now, self.out_rate);
            m.adjust(now, fix);
        }
        if s.completes {
            let olt = now + self.onus[o].tau;
            self.c.delivered += 1;
            self.c.delivered_bits += s.frame.bits as u64;
            if s.frame.id >= self.warmup_id {
                self.dsl_delay_sum += (s.dp_time - s.frame.birth.as_nanos()) as f64;
                self.pon_delay_sum += (olt - s.dp_time) as f64;
                self.delay_count += 1;
            }
        }
        if self.cfg.protocol == Protocol::Pause {
            let line = &mut self.lines[l];
            let occ = line.meter.bits_now(now);
            line.pause.observe(occ, self.pause_thr);
        }
        self.onus[o].burst.next_free = now;
        self.try_serve(o);
    }

    fn burst_end(&mut self, o: usize) {
        let now = self.now;
        let base = o * self.e;
        for c in 0..self.e {
            self.onus[o].snapshot[c] = self.lines[base + c].dp_backlog();
        }
        let end = now + self.report_ns;
        if end > self.onus[o].burst.alloc_end {
            self.c.burst_overruns += 1;
        }
        let tau = self.onus[o].tau;
        self.push(end + tau, Ev::ReportAtOlt(o as u32));
    }

    fn report_at_olt(&mut self, o: usize) {
        let now = self.now;
        let e = self.e;
        let base = o * e;
        let gated = self.cfg.protocol.schedule_mode();
        let backlogs: Vec<u64> = (0..e)
            .map(|c| {
                let dp = self.onus[o].snapshot[c];
                if gated.is_some() {
                    dp + self.lines[base + c].report
                } else {
                    dp
                }
            })
            .collect();
        let request: u64 = backlogs.iter().sum();
        let d = size_onu_grant(&self.policy, request, self.pool);
        self.pool = d.new_pool;
        if !self.births_done && self.next_id > self.warmup_id {
            self.c.cycles += 1;
            if d.grant > self.policy.limit {
                self.c.excess_cycles += 1;
            }
        }
        self.c.max_onu_grant = self.c.max_onu_grant.max(d.grant);
        let quota = distribute_to_cpes(d.grant, &backlogs);
        let tau = self.onus[o].tau;
        let net = &self.cfg.net;
        let guard = net.guard.as_nanos();
        let data_ns = self.pon_ns(d.grant);

        let (start, slots, wait) = match gated {
            None => {
                let lead = net.pon_gate_time.as_nanos() + 2 * tau;
                let origin = now.max(self.channel_free.saturating_sub(lead));
                let start = origin + net.pon_gate_time.as_nanos() + tau;
                let slots = vec![Slot {
                    cpe: None,
                    offset: 0,
                    used: 0,
                }];
                (start, slots, false)
            }
            Some(mode) => {
                // A CPE with nothing to send still gets a report-only window,
                // but it carries no data the ONU has to wait for.
                let payloads: Vec<u64> = (0..e)
                    .map(|c| quota[c].saturating_sub(self.onus[o].snapshot[c]))
                    .collect();
                let demands: Vec<Demand> = (0..e)
                    .map(|c| Demand {
                        cpe: c,
                        pon_bits: quota[c],
                        dsl_bits: if payloads[c] == 0 {
                            0
                        } else {
                            self.cfg.framing.window_bits(payloads[c])
                        },
                    })
                    .collect();
                let link = net.link(SimTime::from_nanos(tau));
                let mut cycle = build_gated_cycle(mode, &link, &demands)
                    .expect("validated configuration always schedules");
                for g in &mut cycle.gates {
                    g.dsl_bits = self.cfg.framing.window_bits(payloads[g.cpe]);
                }
                let onu_start = cycle.schedule.onu_start.as_nanos();
                let origin = now.max(self.channel_free.saturating_sub(onu_start + tau));
                for g in &cycle.gates {
                    self.push(
                        origin + g.start.as_nanos(),
                        Ev::Window((base + g.cpe) as u32, g.dsl_bits),
                    );
                }
                let slots = match mode {
                    crate::schedule::ScheduleMode::Segregated => {
                        let mut off = 0;
                        cycle
                            .schedule
                            .order
                            .iter()
                            .map(|&c| {
                                let s = Slot {
                                    cpe: Some(c),
                                    offset: off,
                                    used: 0,
                                };
                                off += quota[c];
                                s
                            })
                            .collect()
                    }
                    crate::schedule::ScheduleMode::Multiplexed => vec![Slot {
                        cpe: None,
                        offset: 0,
                        used: 0,
                    }],
                };
                (origin + onu_start, slots, true)
            }
        };
        let alloc_end = start + data_ns + self.report_ns;
        self.channel_free = alloc_end + tau + guard;
        self.onus[o].burst = Burst {
            start,
            slots,
            cur: 0,
            quota,
            wait_for_arrivals: wait,
            next_free: start,
            serving: None,
            data_end: start + data_ns,
            alloc_end,
            finished: false,
        };
        self.push(start, Ev::BurstStart(o as u32));
    }

    fn metrics(&self) -> MetricsRecord {
        let max_cpe = self.lines.iter().map(|l| l.meter.peak).max().unwrap_or(0);
        let max_onu = self.onus.iter().map(|o| o.meter.peak).max().unwrap_or(0);
        let to_bits = |u: i128| (u.max(0) + UNITS_PER_BIT - 1) / UNITS_PER_BIT;
        let counted = self.c.generated.saturating_sub(self.warmup_id);
        let span = if self.c.births_end > SimTime::ZERO {
            self.c.births_end
        } else {
            self.c.end
        };
        let n = self.delay_count.max(1) as f64;
        MetricsRecord {
            max_cpe_occupancy: to_bits(max_cpe) as u64,
            max_onu_occupancy: to_bits(max_onu) as u64,
            loss_rate: if counted == 0 {
                0.0
            } else {
                self.dropped_post_warmup as f64 / counted as f64
            },
            mean_dsl_delay: self.dsl_delay_sum / n / NANOS_PER_SEC as f64,
            mean_pon_delay: self.pon_delay_sum / n / NANOS_PER_SEC as f64,
            packets_delivered: self.c.delivered,
            throughput: if span > SimTime::ZERO {
                self.c.delivered_bits as f64 / span.as_secs_f64()
            } else {
                0.0
            },
            counters: self.c,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(protocol: Protocol, dba: DbaKind, load: f64, hurst: f64) -> RunConfig {
        RunConfig {
            protocol,
            dba,
            packets: 20_000,
            traffic: TrafficConfig {
                load,
                hurst,
                seed: 11,
                ..TrafficConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn packetize_puts_remainder_first() {
        assert_eq!(packetize(30_000, 12_144), vec![5_712, 12_144, 12_144]);
        assert_eq!(packetize(12_144, 12_144), vec![12_144]);
        assert!(packetize(0, 12_144).is_empty());
    }

    #[test]
    fn every_protocol_conserves_frames() {
        for p in Protocol::ALL {
            let m = run(&small(p, DbaKind::Excess, 0.5, 0.8)).unwrap();
            let c = m.counters;
            assert_eq!(
                c.generated,
                c.delivered + c.dropped_cpe + c.dropped_drop_point + c.in_flight,
                "{p}"
            );
            assert!(m.max_onu_occupancy >= m.max_cpe_occupancy, "{p}");
            assert!((0.0..=1.0).contains(&m.loss_rate));
            assert_eq!(c.burst_overruns, 0, "{p}");
            assert_eq!(c.pon_stalls, 0, "{p}");
            assert_eq!(c.in_flight, 0, "{p}");
        }
    }

    #[test]
    fn identical_configs_give_identical_records() {
        let cfg = small(Protocol::GatedMux, DbaKind::Limited, 0.4, 0.5);
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }

    #[test]
    fn invalid_configs_fail_before_running() {
        let mut cfg = small(Protocol::Pause, DbaKind::Excess, 0.5, 0.5);
        cfg.buffer_capacity = None;
        assert!(matches!(run(&cfg), Err(EngineError::Config(_))));
        let mut cfg = small(Protocol::None, DbaKind::Excess, 0.5, 0.5);
        cfg.packets = 10;
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn single_cycle_peak_matches_closed_form() {
        let net = NetworkConfig::default();
        for g in [12_144, 50_000, 233_250] {
            let m = measure_single_cpe_cycle(&net, SimTime::from_micros(40), g).unwrap();
            assert!(m.within_one_dsl_nanosecond(), "G = {g}: off by {}", m.excess_bits());
        }
    }

    #[test]
    fn sweep_single_row_equals_run() {
        let base = small(Protocol::GatedSeg, DbaKind::Excess, 0.3, 0.5);
        let axes = SweepAxes {
            protocols: vec![Protocol::GatedSeg],
            dbas: vec![DbaKind::Excess],
            hursts: vec![0.5],
            loads: vec![0.3],
        };
        let rows = sweep(&base, &axes);
        assert_eq!(rows.len(), 1);
        let cfg = &sweep_configs(&base, &axes)[0];
        assert_eq!(rows[0].result, run(cfg));
    }
}
