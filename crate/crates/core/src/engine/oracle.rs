//! Bit-level replay of one gated cycle, used to certify schedules.
//!
//! Every CPE sends its grant as frames `[r, M, ..., M]` (remainder first)
//! from its scheduled start; the ONU forwards complete frames at R_p from
//! its scheduled start. The replay checks, in exact ticks, that every frame
//! is fully received before the ONU is due to send it, and that the ONU
//! never idles between its start and the end of its data.

use crate::flowcontrol::build_gated_cycle;
use crate::model::OnuLink;
use crate::schedule::{BitVolume, CycleSchedule, Demand, ScheduleError, ScheduleMode};
use crate::time::{ExactTime, TimeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OracleOptions {
    /// Also step the cycle at 1 ns and cross-check the exact results.
    pub dense: bool,
    /// Start the ONU this many nanoseconds before its scheduled start.
    pub onu_early_ns: u64,
}

/// A frame the ONU was due to send before it was fully received.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Underrun {
    pub cpe: usize,
    /// Frame index within the CPE's grant.
    pub frame: usize,
    pub late_by: ExactTime,
}

/// First and last bit instants of one CPE, relative to the cycle origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpeTrace {
    pub cpe: usize,
    pub dsl_start: ExactTime,
    pub dp_first: ExactTime,
    pub dp_last: ExactTime,
    pub pon_first: ExactTime,
    pub pon_last: ExactTime,
    pub peak: BitVolume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub schedule: CycleSchedule,
    pub onu_start: ExactTime,
    pub onu_end: ExactTime,
    pub cpes: Vec<CpeTrace>,
    pub underruns: Vec<Underrun>,
    /// Idle stretches of an ONU that waits for late frames.
    pub gaps: usize,
    pub idle: ExactTime,
    /// Mean time a frame waits at the drop-point between complete
    /// reception and the start of its PON transmission, ns.
    pub mean_wait_ns: f64,
    /// Dense replay: nanoseconds in which the frame on the PON was not yet
    /// fully received, and idle nanoseconds.
    pub dense_underrun_ns: Option<u64>,
    pub dense_idle_ns: Option<u64>,
    /// Dense replay: per-CPE peak, whole bits.
    pub dense_peaks: Option<Vec<u64>>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.underruns.is_empty()
            && self.gaps == 0
            && self.dense_underrun_ns.unwrap_or(0) == 0
            && self.dense_idle_ns.unwrap_or(0) == 0
    }
}

struct Pkt {
    cpe: usize,
    idx: usize,
    bits: i128,
    /// Complete reception at the drop-point.
    done: ExactTime,
}

/// Replays one cycle carrying `grants` (indexed by CPE, unframed) under
/// the schedule for `mode`.
pub fn oracle_replay(
    link: &OnuLink<'_>,
    grants: &[u64],
    mode: ScheduleMode,
    opts: OracleOptions,
) -> Result<OracleReport, ScheduleError> {
    let net = link.net;
    let m = net.max_packet_bits;
    for &g in grants {
        if g < m {
            return Err(ScheduleError::GrantBelowMax { grant: g, max: m });
        }
    }
    let demands: Vec<Demand> = grants
        .iter()
        .enumerate()
        .map(|(c, &g)| Demand::plain(c, g))
        .collect();
    let cycle = build_gated_cycle(mode, link, &demands)?;
    let base = net.time_base();
    let delta = |c: usize| base.from_nanos(net.cpe_delays[c].as_nanos());

    let mut per_cpe: Vec<Vec<Pkt>> = Vec::with_capacity(grants.len());
    for (c, &g) in grants.iter().enumerate() {
        let alpha = base.from_nanos(cycle.gates[c].start.as_nanos()) + delta(c);
        let mut sent = 0i128;
        let pkts = crate::engine::packetize(g, m as u32)
            .into_iter()
            .enumerate()
            .map(|(idx, bits)| {
                sent += bits as i128;
                Pkt {
                    cpe: c,
                    idx,
                    bits: bits as i128,
                    done: alpha + base.dsl(sent),
                }
            })
            .collect();
        per_cpe.push(pkts);
    }
    let order: Vec<Pkt> = match mode {
        ScheduleMode::Segregated => cycle
            .schedule
            .order
            .iter()
            .flat_map(|&c| std::mem::take(&mut per_cpe[c]))
            .collect(),
        ScheduleMode::Multiplexed => {
            let mut all: Vec<Pkt> = per_cpe.into_iter().flatten().collect();
            all.sort_by(|a, b| a.done.cmp(&b.done).then(a.cpe.cmp(&b.cpe)));
            all
        }
    };

    let start_ns = cycle.schedule.onu_start.as_nanos();
    let mu = base.from_ticks(
        (start_ns as i128 - opts.onu_early_ns as i128) * base.ticks_per_ns(),
    );
    // Nominal service: back to back from mu.
    let mut starts = Vec::with_capacity(order.len());
    let mut t = mu;
    for p in &order {
        starts.push(t);
        t = t + base.pon(p.bits);
    }
    let onu_end = t;

    let mut underruns = Vec::new();
    let (mut gaps, mut idle) = (0usize, base.zero());
    let mut free = mu;
    for (p, &s) in order.iter().zip(&starts) {
        if p.done > s {
            underruns.push(Underrun {
                cpe: p.cpe,
                frame: p.idx,
                late_by: p.done - s,
            });
        }
        if p.done > free {
            gaps += 1;
            idle = idle + (p.done - free);
            free = p.done;
        }
        free = free + base.pon(p.bits);
    }

    let mean_wait_ns = order
        .iter()
        .zip(&starts)
        .map(|(p, &s)| (s - p.done).as_nanos_f64())
        .sum::<f64>()
        / order.len().max(1) as f64;

    let mut cpes = Vec::with_capacity(grants.len());
    for (c, &g) in grants.iter().enumerate() {
        let dsl_start = base.from_nanos(cycle.gates[c].start.as_nanos());
        let dp_first = dsl_start + delta(c);
        let dp_last = dp_first + base.dsl(g as i128);
        let mine: Vec<(ExactTime, ExactTime)> = order
            .iter()
            .zip(&starts)
            .filter(|(p, _)| p.cpe == c)
            .map(|(p, &s)| (s, s + base.pon(p.bits)))
            .collect();
        let pon_first = mine.first().expect("grant is at least one frame").0;
        let pon_last = mine.last().expect("grant is at least one frame").1;
        let mut instants = vec![dp_first, dp_last];
        for &(s, e) in &mine {
            instants.push(s);
            instants.push(e);
        }
        let peak = instants
            .iter()
            .map(|&t| occupancy(base, g, dp_first, &mine, t))
            .fold(BitVolume::new(0, base), |a, b| if b > a { b } else { a });
        cpes.push(CpeTrace {
            cpe: c,
            dsl_start,
            dp_first,
            dp_last,
            pon_first,
            pon_last,
            peak,
        });
    }

    let (mut dense_underrun_ns, mut dense_idle_ns, mut dense_peaks) = (None, None, None);
    if opts.dense {
        let (u, i, p) = dense_replay(base, grants, &cpes, &order, &starts, mu, onu_end);
        dense_underrun_ns = Some(u);
        dense_idle_ns = Some(i);
        dense_peaks = Some(p);
    }

    Ok(OracleReport {
        schedule: cycle.schedule,
        onu_start: mu,
        onu_end,
        cpes,
        underruns,
        gaps,
        idle,
        mean_wait_ns,
        dense_underrun_ns,
        dense_idle_ns,
        dense_peaks,
    })
}

/// Bits of one CPE held at the drop-point at `t`: received at R_d from
/// `first`, forwarded at R_p during each of `service`.
fn occupancy(
    base: TimeBase,
    grant: u64,
    first: ExactTime,
    service: &[(ExactTime, ExactTime)],
    t: ExactTime,
) -> BitVolume {
    let den = base.ticks_per_ns() * crate::time::NANOS_PER_SEC as i128;
    let rd = base.dsl_rate() as i128;
    let rp = base.pon_rate() as i128;
    let received = ((t - first).ticks().max(0) * rd).min(grant as i128 * den);
    let sent: i128 = service
        .iter()
        .map(|&(s, e)| (t.min(e) - s).ticks().max(0) * rp)
        .sum();
    BitVolume::new(received - sent, base)
}

/// Steps the cycle in whole nanoseconds. Received bits are rounded down and
/// forwarded bits up, so the sampled occupancy never overstates.
fn dense_replay(
    base: TimeBase,
    grants: &[u64],
    cpes: &[CpeTrace],
    order: &[Pkt],
    starts: &[ExactTime],
    mu: ExactTime,
    end: ExactTime,
) -> (u64, u64, Vec<u64>) {
    let tpn = base.ticks_per_ns();
    let den = tpn * crate::time::NANOS_PER_SEC as i128;
    let rd = base.dsl_rate() as i128;
    let rp = base.pon_rate() as i128;
    let first_ns = cpes
        .iter()
        .map(|c| c.dsl_start.floor_nanos().as_nanos())
        .min()
        .unwrap_or(0)
        .min(mu.floor_nanos().as_nanos());
    let last_ns = end.ceil_nanos().as_nanos();
    let (mut underrun_ns, mut idle_ns) = (0u64, 0u64);
    let mut peaks = vec![0u64; grants.len()];
    let mut k = 0usize;
    let mut free = mu;
    let mut waiting_done: Vec<ExactTime> = Vec::with_capacity(order.len());
    for p in order.iter() {
        let s = free.max(p.done);
        waiting_done.push(s);
        free = s + base.pon(p.bits);
    }
    for ns in first_ns..=last_ns {
        let t = base.from_nanos(ns);
        while k + 1 < starts.len() && starts[k + 1] <= t {
            k += 1;
        }
        if t >= mu && t < end && starts[k] <= t && order[k].done > t {
            underrun_ns += 1;
        }
        // Waiting model: idle if no frame has started by now.
        if t >= mu && t < free {
            let busy = waiting_done
                .iter()
                .zip(order.iter())
                .any(|(&s, p)| s <= t && t < s + base.pon(p.bits));
            if !busy {
                idle_ns += 1;
            }
        }
        for (c, tr) in cpes.iter().enumerate() {
            let rx_ticks = (t - tr.dp_first).ticks().max(0);
            let rx = ((rx_ticks * rd) / den).min(grants[c] as i128);
            let tx: i128 = order
                .iter()
                .zip(starts)
                .filter(|(p, _)| p.cpe == c)
                .map(|(p, &s)| {
                    let span = (t - s).ticks().clamp(0, base.pon(p.bits).ticks());
                    (span * rp + den - 1) / den
                })
                .sum();
            peaks[c] = peaks[c].max((rx - tx).max(0) as u64);
        }
    }
    (underrun_ns, idle_ns, peaks)
}
