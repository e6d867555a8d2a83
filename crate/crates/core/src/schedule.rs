//! Closed-form polling schedules for one ONU and its CPEs.
//!
//! Everything here is exact: instants are [`ExactTime`] values relative to
//! the cycle origin (the instant the OLT starts sending the gate). Rounding
//! to the nanosecond clock happens once, in [`CycleSchedule`]: the ONU start
//! is rounded up and every CPE start is re-derived from that rounded ONU
//! start and rounded down. Starting the ONU late or a CPE early only adds
//! slack, so the rounded schedule keeps the gapless/no-underrun guarantees.

use crate::model::OnuLink;
use crate::time::{div_ceil_i128, ExactTime, SimTime, TimeBase, NANOS_PER_SEC};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("grant of {grant} bits is below the maximum packet size {max} bits")]
    GrantBelowMax { grant: u64, max: u64 },
    #[error("CPE index {0} out of range")]
    CpeOutOfRange(usize),
    #[error("multiplexing infeasible: {cpes} x R_d exceeds R_p")]
    MuxInfeasible { cpes: usize },
    #[error("no CPE grants given")]
    Empty,
}

/// Timing of one isolated CPE transmission.
///
/// `sigma`: CPE starts sending; `alpha`: data starts arriving at the
/// drop-point; `omega`: data completely received; `mu`: ONU starts
/// forwarding (and the drop-point buffer peaks); `beta`: ONU finishes;
/// `cycle_end`: the last bit reaches the OLT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleCpeTimeline {
    pub sigma: ExactTime,
    pub alpha: ExactTime,
    pub omega: ExactTime,
    pub mu: ExactTime,
    pub beta: ExactTime,
    pub cycle_end: ExactTime,
    pub grant_bits: u64,
}

/// What one CPE must move in a cycle: `pon_bits` leave the ONU for this
/// CPE, `dsl_bits` is the line time (in DSL bit-times) the CPE needs to
/// deliver its part of them. The textbook case has both equal to the grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Demand {
    pub cpe: usize,
    pub pon_bits: u64,
    pub dsl_bits: u64,
}

impl Demand {
    pub fn plain(cpe: usize, grant_bits: u64) -> Self {
        Demand {
            cpe,
            pon_bits: grant_bits,
            dsl_bits: grant_bits,
        }
    }
}

/// Earliest instant CPE `cpe` can start sending when the OLT sends `gates`
/// gate messages back to back on the PON: gates*g_p + tau + g_d + delta_c.
fn earliest_start(link: &OnuLink<'_>, gates: usize, cpe: usize) -> ExactTime {
    let base = link.net.time_base();
    let ns = gates as u64 * link.net.pon_gate_time.as_nanos()
        + link.tau.as_nanos()
        + link.net.dsl_gate_time.as_nanos()
        + link.net.cpe_delays[cpe].as_nanos();
    base.from_nanos(ns)
}

fn delta(link: &OnuLink<'_>, cpe: usize) -> ExactTime {
    link.net
        .time_base()
        .from_nanos(link.net.cpe_delays[cpe].as_nanos())
}

fn timeline_with_gates(link: &OnuLink<'_>, gates: usize, d: &Demand) -> SingleCpeTimeline {
    let base = link.net.time_base();
    let m = link.net.max_packet_bits as i128;
    let sigma = earliest_start(link, gates, d.cpe);
    let alpha = sigma + delta(link, d.cpe);
    let omega = alpha + base.dsl(d.dsl_bits as i128);
    // The last frame is never longer than the grant itself.
    let beta = omega + base.pon(m.min(d.pon_bits as i128));
    let mu = beta - base.pon(d.pon_bits as i128);
    let cycle_end = beta + base.from_nanos(link.tau.as_nanos());
    SingleCpeTimeline {
        sigma,
        alpha,
        omega,
        mu,
        beta,
        cycle_end,
        grant_bits: d.pon_bits,
    }
}

fn check_cpe(link: &OnuLink<'_>, cpe: usize) -> Result<(), ScheduleError> {
    if cpe >= link.net.cpe_delays.len() {
        Err(ScheduleError::CpeOutOfRange(cpe))
    } else {
        Ok(())
    }
}

fn check_grant(link: &OnuLink<'_>, grant: u64) -> Result<(), ScheduleError> {
    if grant < link.net.max_packet_bits {
        Err(ScheduleError::GrantBelowMax {
            grant,
            max: link.net.max_packet_bits,
        })
    } else {
        Ok(())
    }
}

/// Timing of a single polled CPE that starts at its earliest instant.
pub fn single_cpe_timeline(
    link: &OnuLink<'_>,
    cpe: usize,
    grant_bits: u64,
) -> Result<SingleCpeTimeline, ScheduleError> {
    check_cpe(link, cpe)?;
    check_grant(link, grant_bits)?;
    Ok(timeline_with_gates(
        link,
        2,
        &Demand::plain(cpe, grant_bits),
    ))
}

/// An amount of data measured exactly, as `num / den` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitVolume {
    num: i128,
    den: i128,
}

impl BitVolume {
    pub(crate) fn new(num: i128, base: TimeBase) -> Self {
        // den = ticks per second; R_d * span(ticks) / den gives bits.
        BitVolume {
            num,
            den: base.ticks_per_ns() * NANOS_PER_SEC as i128,
        }
    }

    pub fn zero_like(&self) -> Self {
        BitVolume {
            num: 0,
            den: self.den,
        }
    }

    pub fn bits_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn ceil_bits(&self) -> u64 {
        div_ceil_i128(self.num, self.den).max(0) as u64
    }

    /// Exact comparison against a whole number of bits.
    pub fn cmp_bits(&self, bits: i128) -> std::cmp::Ordering {
        self.num.cmp(&(bits * self.den))
    }

    /// Absolute difference from `other`, in bits.
    pub fn abs_diff_bits(&self, other: &BitVolume) -> f64 {
        debug_assert_eq!(self.den, other.den);
        (self.num - other.num).abs() as f64 / self.den as f64
    }
}

impl std::ops::Add for BitVolume {
    type Output = BitVolume;
    fn add(self, rhs: BitVolume) -> BitVolume {
        debug_assert_eq!(self.den, rhs.den);
        BitVolume {
            num: self.num + rhs.num,
            den: self.den,
        }
    }
}

impl PartialOrd for BitVolume {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        debug_assert_eq!(self.den, other.den);
        Some(self.num.cmp(&other.num))
    }
}

/// Largest drop-point occupancy of one CPE, G - (R_d/R_p)(G - M), rounded up
/// to whole bits.
pub fn max_buffer_occupancy(link: &OnuLink<'_>, grant_bits: u64) -> Result<u64, ScheduleError> {
    check_grant(link, grant_bits)?;
    Ok(peak_bits_ceil(
        link.net.dsl_rate,
        link.net.pon_rate,
        grant_bits,
        link.net.max_packet_bits,
    ))
}

/// Same closed form without the grant check, for any rates.
pub(crate) fn peak_bits_ceil(dsl_rate: u64, pon_rate: u64, grant: u64, max_packet: u64) -> u64 {
    let (rd, rp, g, m) = (
        dsl_rate as i128,
        pon_rate as i128,
        grant as i128,
        max_packet as i128,
    );
    div_ceil_i128(g * rp - rd * (g - m), rp).max(0) as u64
}

/// Drop-point occupancy of one CPE over a cycle: filled at R_d between
/// `alpha` and `omega`, drained at R_p between `mu` and `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyEnvelope {
    pub alpha: ExactTime,
    pub mu: ExactTime,
    pub omega: ExactTime,
    pub beta: ExactTime,
    dsl_rate: i128,
    pon_rate: i128,
}

impl OccupancyEnvelope {
    pub fn from_timeline(t: &SingleCpeTimeline) -> Self {
        let base = t.alpha.base();
        OccupancyEnvelope {
            alpha: t.alpha,
            mu: t.mu,
            omega: t.omega,
            beta: t.beta,
            dsl_rate: base.dsl_rate() as i128,
            pon_rate: base.pon_rate() as i128,
        }
    }

    /// Envelope of a CPE that starts at `sigma` instead of its earliest
    /// instant, with the ONU serving it from `mu`.
    pub fn shifted(link: &OnuLink<'_>, d: &Demand, sigma: ExactTime, mu: ExactTime) -> Self {
        let base = link.net.time_base();
        let alpha = sigma + delta(link, d.cpe);
        let omega = alpha + base.dsl(d.dsl_bits as i128);
        let beta = mu + base.pon(d.pon_bits as i128);
        OccupancyEnvelope {
            alpha,
            mu,
            omega,
            beta,
            dsl_rate: base.dsl_rate() as i128,
            pon_rate: base.pon_rate() as i128,
        }
    }

    fn base(&self) -> TimeBase {
        self.alpha.base()
    }

    pub fn breakpoints(&self) -> [ExactTime; 4] {
        [self.alpha, self.mu, self.omega, self.beta]
    }

    /// Occupancy at `t`: bits arrived minus bits forwarded, zero outside
    /// `[alpha, beta]`.
    pub fn at(&self, t: ExactTime) -> BitVolume {
        let base = self.base();
        if t < self.alpha || t > self.beta {
            return BitVolume::new(0, base);
        }
        let arrived = (t.min(self.omega) - self.alpha).ticks().max(0) * self.dsl_rate;
        let served = if t > self.mu {
            (t.min(self.beta) - self.mu).ticks() * self.pon_rate
        } else {
            0
        };
        BitVolume::new(arrived - served, base)
    }

    /// Largest value of the envelope (attained at `mu` when the ONU starts
    /// before the data has fully arrived).
    pub fn peak(&self) -> BitVolume {
        self.breakpoints().iter().map(|&t| self.at(t)).fold(
            BitVolume::new(0, self.base()),
            |a, b| if b > a { b } else { a },
        )
    }
}

/// Occupancy of a single envelope at `t`.
pub fn occupancy_at(envelope: &OccupancyEnvelope, t: ExactTime) -> BitVolume {
    envelope.at(t)
}

/// Sum of the per-CPE occupancies at `t`: the shared ONU buffer.
pub fn aggregate_occupancy(envelopes: &[OccupancyEnvelope], t: ExactTime) -> Option<BitVolume> {
    let first = envelopes.first()?;
    Some(
        envelopes
            .iter()
            .map(|e| e.at(t))
            .fold(first.at(t).zero_like(), |a, b| a + b),
    )
}

/// Maximum of the aggregate occupancy and where it occurs. A sum of
/// piecewise-linear functions peaks at one of their breakpoints.
pub fn aggregate_peak(envelopes: &[OccupancyEnvelope]) -> Option<(ExactTime, BitVolume)> {
    let mut best: Option<(ExactTime, BitVolume)> = None;
    for e in envelopes {
        for t in e.breakpoints() {
            let v = aggregate_occupancy(envelopes, t)?;
            match best {
                Some((_, b)) if b >= v => {}
                _ => best = Some((t, v)),
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleMode {
    Segregated,
    Multiplexed,
}

/// Start instants of one gated cycle, relative to the cycle origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleSchedule {
    pub mode: ScheduleMode,
    /// CPE indices in PON transmission order (segregated); input order for
    /// multiplexed.
    pub order: Vec<usize>,
    /// Exact earliest ONU start (mu_(E) or mu^m).
    pub onu_start_exact: ExactTime,
    /// ONU start on the nanosecond clock (rounded up).
    pub onu_start: SimTime,
    /// Per transmission slot: CPE start instant derived from `onu_start`.
    pub cpe_starts_exact: Vec<ExactTime>,
    /// Per transmission slot: CPE start on the clock (rounded down).
    pub cpe_starts: Vec<SimTime>,
    /// Per transmission slot: start of the CPE's PON sub-window
    /// (segregated), or the shared window start (multiplexed).
    pub sub_window_starts: Vec<ExactTime>,
    pub demands: Vec<Demand>,
    /// End of the ONU data transmission.
    pub onu_end: ExactTime,
}

impl CycleSchedule {
    pub fn total_pon_bits(&self) -> u64 {
        self.demands.iter().map(|d| d.pon_bits).sum()
    }

    /// Start instant of `cpe`, if it takes part in this cycle.
    pub fn cpe_start(&self, cpe: usize) -> Option<SimTime> {
        self.order
            .iter()
            .position(|&c| c == cpe)
            .map(|i| self.cpe_starts[i])
    }
}

/// The recursion for the earliest back-to-back ONU start, returning every
/// prefix value: element k is the start for slots `0..=k`.
pub fn back_to_back_starts(link: &OnuLink<'_>, demands: &[Demand]) -> Vec<ExactTime> {
    let base = link.net.time_base();
    let gates = demands.len() + 1;
    let mut out = Vec::with_capacity(demands.len());
    let mut sent_before = 0i128;
    let mut current: Option<ExactTime> = None;
    for d in demands {
        let mu_c = timeline_with_gates(link, gates, d).mu;
        let next = match current {
            None => mu_c,
            Some(prev) => {
                let slack = mu_c - prev - base.pon(sent_before);
                if slack.is_negative() {
                    prev
                } else {
                    prev + slack
                }
            }
        };
        out.push(next);
        current = Some(next);
        sent_before += d.pon_bits as i128;
    }
    out
}

/// Segregated schedule for textbook grants: slot `i` is CPE `i`.
pub fn segregated_schedule(
    link: &OnuLink<'_>,
    grants: &[u64],
) -> Result<CycleSchedule, ScheduleError> {
    for (c, &g) in grants.iter().enumerate() {
        check_cpe(link, c)?;
        check_grant(link, g)?;
    }
    let demands: Vec<Demand> = grants
        .iter()
        .enumerate()
        .map(|(c, &g)| Demand::plain(c, g))
        .collect();
    segregated_schedule_for(link, &demands)
}

/// Segregated schedule for demands already in PON transmission order.
pub fn segregated_schedule_for(
    link: &OnuLink<'_>,
    demands: &[Demand],
) -> Result<CycleSchedule, ScheduleError> {
    if demands.is_empty() {
        return Err(ScheduleError::Empty);
    }
    for d in demands {
        check_cpe(link, d.cpe)?;
    }
    let base = link.net.time_base();
    let m = link.net.max_packet_bits as i128;
    let onu_start_exact = *back_to_back_starts(link, demands).last().expect("nonempty");
    let onu_start = onu_start_exact.ceil_nanos();
    let start = base.from_nanos(onu_start.as_nanos());

    let mut sub_window_starts = Vec::with_capacity(demands.len());
    let mut cpe_starts_exact = Vec::with_capacity(demands.len());
    let mut offset = 0i128;
    for d in demands {
        let window = start + base.pon(offset);
        let sigma = window + base.pon(d.pon_bits as i128 - m)
            - base.dsl(d.dsl_bits as i128)
            - delta(link, d.cpe);
        sub_window_starts.push(window);
        cpe_starts_exact.push(sigma);
        offset += d.pon_bits as i128;
    }
    let cpe_starts = cpe_starts_exact.iter().map(|s| s.floor_nanos()).collect();
    Ok(CycleSchedule {
        mode: ScheduleMode::Segregated,
        order: demands.iter().map(|d| d.cpe).collect(),
        onu_start_exact,
        onu_start,
        cpe_starts_exact,
        cpe_starts,
        sub_window_starts,
        demands: demands.to_vec(),
        onu_end: start + base.pon(offset),
    })
}

/// Multiplexed schedule for textbook grants: slot `i` is CPE `i`.
pub fn multiplexed_schedule(
    link: &OnuLink<'_>,
    grants: &[u64],
) -> Result<CycleSchedule, ScheduleError> {
    for (c, &g) in grants.iter().enumerate() {
        check_cpe(link, c)?;
        check_grant(link, g)?;
    }
    let demands: Vec<Demand> = grants
        .iter()
        .enumerate()
        .map(|(c, &g)| Demand::plain(c, g))
        .collect();
    multiplexed_schedule_for(link, &demands)
}

/// Multiplexed schedule. Only CPEs that send data on their line
/// (`dsl_bits > 0`) count towards the trailing one-frame-per-CPE term, and
/// a CPE granted less than M contributes its grant instead of M.
pub fn multiplexed_schedule_for(
    link: &OnuLink<'_>,
    demands: &[Demand],
) -> Result<CycleSchedule, ScheduleError> {
    if demands.is_empty() {
        return Err(ScheduleError::Empty);
    }
    for d in demands {
        check_cpe(link, d.cpe)?;
    }
    let n = demands.len();
    if (n as u128) * (link.net.dsl_rate as u128) > link.net.pon_rate as u128 {
        return Err(ScheduleError::MuxInfeasible { cpes: n });
    }
    let base = link.net.time_base();
    let m = link.net.max_packet_bits as i128;
    let gates = n + 1;
    // One trailing frame per sending CPE, no longer than its grant.
    let trailing: i128 = demands
        .iter()
        .filter(|d| d.dsl_bits > 0)
        .map(|d| m.min(d.pon_bits as i128))
        .sum();
    let total: i128 = demands.iter().map(|d| d.pon_bits as i128).sum();

    // Latest complete reception at the drop-point if every CPE starts as
    // early as it can.
    let last_arrival = demands
        .iter()
        .map(|d| {
            earliest_start(link, gates, d.cpe) + delta(link, d.cpe) + base.dsl(d.dsl_bits as i128)
        })
        .max()
        .expect("nonempty");
    let onu_start_exact = last_arrival + base.pon(trailing - total);
    let onu_start = onu_start_exact.ceil_nanos();
    let start = base.from_nanos(onu_start.as_nanos());

    let cpe_starts_exact: Vec<ExactTime> = demands
        .iter()
        .map(|d| {
            start + base.pon(total - trailing)
                - base.dsl(d.dsl_bits as i128)
                - delta(link, d.cpe)
        })
        .collect();
    let cpe_starts = cpe_starts_exact.iter().map(|s| s.floor_nanos()).collect();
    Ok(CycleSchedule {
        mode: ScheduleMode::Multiplexed,
        order: demands.iter().map(|d| d.cpe).collect(),
        onu_start_exact,
        onu_start,
        cpe_starts_exact,
        cpe_starts,
        sub_window_starts: vec![start; n],
        demands: demands.to_vec(),
        onu_end: start + base.pon(total),
    })
}

/// Delay on the PON segment for one CPE's maximum-size packets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PonDelayStats {
    /// Waiting time of the first packet at the drop-point, (B_max - M)/R_d.
    pub first_queueing: ExactTime,
    /// The last packet is forwarded as soon as it arrives.
    pub last_queueing: ExactTime,
    pub first_packet_delay: ExactTime,
    pub last_packet_delay: ExactTime,
    /// Mean over the packets of the transmission; queueing decays linearly
    /// from first to last.
    pub mean_delay_secs: f64,
}

pub fn pon_delay_stats(
    link: &OnuLink<'_>,
    cpe: usize,
    grant_bits: u64,
) -> Result<PonDelayStats, ScheduleError> {
    let tl = single_cpe_timeline(link, cpe, grant_bits)?;
    let base = link.net.time_base();
    let m = link.net.max_packet_bits as i128;
    let first_queueing = tl.mu - tl.alpha - base.dsl(m);
    let last_queueing = tl.beta - base.pon(m) - tl.omega;
    let hop = base.pon(m) + base.from_nanos(link.tau.as_nanos());
    let mean_queueing = (first_queueing.as_secs_f64() + last_queueing.as_secs_f64()) / 2.0;
    Ok(PonDelayStats {
        first_queueing,
        last_queueing,
        first_packet_delay: first_queueing + hop,
        last_packet_delay: last_queueing + hop,
        mean_delay_secs: mean_queueing + hop.as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    fn zero_delay_config() -> NetworkConfig {
        NetworkConfig {
            pon_gate_time: SimTime::ZERO,
            dsl_gate_time: SimTime::ZERO,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn zero_delay_single_packet_timeline() {
        let cfg = zero_delay_config();
        let link = cfg.link(SimTime::ZERO);
        let base = cfg.time_base();
        let m = cfg.max_packet_bits;
        let tl = single_cpe_timeline(&link, 0, m).unwrap();
        assert_eq!(tl.sigma, base.zero());
        assert_eq!(tl.alpha, base.zero());
        assert_eq!(tl.omega, base.dsl(m as i128));
        assert_eq!(tl.mu, tl.omega);
        assert_eq!(tl.beta, tl.omega + base.pon(m as i128));
    }

    #[test]
    fn earliest_start_substitution() {
        let cfg = NetworkConfig {
            pon_gate_time: SimTime::from_micros(1),
            dsl_gate_time: SimTime::from_micros(2),
            cpe_delays: vec![SimTime::from_nanos(500); 8],
            ..NetworkConfig::default()
        };
        let link = cfg.link(SimTime::from_micros(100));
        let tl = single_cpe_timeline(&link, 3, 100_000).unwrap();
        assert_eq!(tl.sigma.floor_nanos(), SimTime::from_nanos(104_500));
        assert_eq!(tl.sigma.ceil_nanos(), SimTime::from_nanos(104_500));
        assert_eq!(tl.alpha.floor_nanos(), SimTime::from_nanos(105_000));
    }

    #[test]
    fn timeline_ordering_and_tail() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::from_micros(50));
        let base = cfg.time_base();
        let tl = single_cpe_timeline(&link, 0, 100_000).unwrap();
        assert!(tl.sigma <= tl.alpha);
        assert!(tl.alpha <= tl.mu);
        assert!(tl.mu <= tl.omega);
        assert!(tl.omega <= tl.beta);
        assert!(tl.beta <= tl.cycle_end);
        assert_eq!(tl.beta - tl.omega, base.pon(cfg.max_packet_bits as i128));
    }

    #[test]
    fn grant_below_max_packet_rejected() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::ZERO);
        assert!(matches!(
            single_cpe_timeline(&link, 0, 100),
            Err(ScheduleError::GrantBelowMax { .. })
        ));
        assert!(matches!(
            max_buffer_occupancy(&link, 100),
            Err(ScheduleError::GrantBelowMax { .. })
        ));
        assert!(matches!(
            single_cpe_timeline(&link, 8, 100_000),
            Err(ScheduleError::CpeOutOfRange(8))
        ));
    }

    #[test]
    fn peak_of_single_packet_is_one_packet() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::ZERO);
        assert_eq!(
            max_buffer_occupancy(&link, cfg.max_packet_bits).unwrap(),
            12_144
        );
        // Equal rates: the ONU drains as fast as data arrives.
        assert_eq!(peak_bits_ceil(1_000, 1_000, 500_000, 12_144), 12_144);
        assert_eq!(peak_bits_ceil(1_000, 1_000, 12_144, 12_144), 12_144);
    }

    #[test]
    fn peak_for_limited_grant() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::ZERO);
        // 233250 - (77/2488) * 221106 = 226407.09..., rounded up.
        assert_eq!(max_buffer_occupancy(&link, 233_250).unwrap(), 226_408);
    }

    #[test]
    fn envelope_matches_piecewise_definition() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::from_micros(10));
        let tl = single_cpe_timeline(&link, 0, 60_000).unwrap();
        let env = OccupancyEnvelope::from_timeline(&tl);
        let base = cfg.time_base();
        let (rd, rp) = (cfg.dsl_rate as f64, cfg.pon_rate as f64);
        let bmax = 60_000.0 - rd / rp * (60_000.0 - cfg.max_packet_bits as f64);
        let m = cfg.max_packet_bits as f64;
        assert_eq!(env.at(tl.alpha).bits_f64(), 0.0);
        assert!((env.at(tl.mu).bits_f64() - bmax).abs() < 1e-6);
        assert!((env.at(tl.omega).bits_f64() - m).abs() < 1e-6);
        assert!(env.at(tl.beta).bits_f64().abs() < 1e-6);
        assert_eq!(env.at(tl.beta + base.pon(1)).bits_f64(), 0.0);
        // Sample each branch.
        let steps = 40;
        let span = tl.beta - tl.alpha;
        for k in 0..=steps {
            let t = tl.alpha + base.from_ticks(span.ticks() * k / steps);
            let secs = |x: ExactTime| x.as_secs_f64();
            let expected = if t <= tl.mu {
                rd * (secs(t) - secs(tl.alpha))
            } else if t <= tl.omega {
                bmax - (rp - rd) * (secs(t) - secs(tl.mu))
            } else {
                m - rp * (secs(t) - secs(tl.omega))
            };
            assert!((env.at(t).bits_f64() - expected).abs() < 1e-3, "k={k}");
        }
        assert!((env.peak().bits_f64() - bmax).abs() < 1e-6);
    }

    #[test]
    fn aggregate_of_one_is_itself_and_disjoint_sum_keeps_peak() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::ZERO);
        let base = cfg.time_base();
        let d = Demand::plain(0, 50_000);
        let tl = single_cpe_timeline(&link, 0, 50_000).unwrap();
        let e1 = OccupancyEnvelope::from_timeline(&tl);
        assert_eq!(aggregate_occupancy(&[e1], tl.mu), Some(e1.at(tl.mu)));

        let shift = tl.beta - tl.sigma + base.from_nanos(1_000);
        let e2 = OccupancyEnvelope::shifted(&link, &d, tl.sigma + shift, tl.mu + shift);
        let (_, peak) = aggregate_peak(&[e1, e2]).unwrap();
        assert_eq!(peak, e1.peak());
        assert!(aggregate_occupancy(&[], tl.mu).is_none());
    }

    #[test]
    fn segregated_single_cpe_reduces_to_timeline() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::from_micros(20));
        let tl = single_cpe_timeline(&link, 0, 40_000).unwrap();
        let cfg1 = NetworkConfig {
            cpes_per_onu: 1,
            cpe_delays: vec![SimTime::ZERO],
            ..cfg.clone()
        };
        let link1 = cfg1.link(SimTime::from_micros(20));
        let s = segregated_schedule(&link1, &[40_000]).unwrap();
        assert_eq!(s.onu_start_exact, tl.mu);
        assert_eq!(s.onu_start, tl.mu.ceil_nanos());
    }

    #[test]
    fn segregated_two_identical_cpes_start_at_first() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::from_micros(20));
        let starts =
            back_to_back_starts(&link, &[Demand::plain(0, 30_000), Demand::plain(1, 30_000)]);
        assert_eq!(starts[0], starts[1]);
        let s = segregated_schedule(&link, &[30_000, 30_000]).unwrap();
        let base = cfg.time_base();
        assert_eq!(
            s.sub_window_starts[1] - s.sub_window_starts[0],
            base.pon(30_000)
        );
    }

    #[test]
    fn multiplexed_single_cpe_matches_individual_start() {
        let cfg = NetworkConfig {
            cpes_per_onu: 1,
            cpe_delays: vec![SimTime::from_nanos(700)],
            ..NetworkConfig::default()
        };
        let link = cfg.link(SimTime::from_micros(33));
        let tl = single_cpe_timeline(&link, 0, 77_777).unwrap();
        let s = multiplexed_schedule(&link, &[77_777]).unwrap();
        assert_eq!(s.onu_start_exact, tl.mu);
    }

    #[test]
    fn multiplexed_rejects_oversubscription() {
        let cfg = NetworkConfig {
            cpes_per_onu: 40,
            cpe_delays: vec![SimTime::ZERO; 40],
            ..NetworkConfig::default()
        };
        let link = cfg.link(SimTime::ZERO);
        let grants = vec![20_000; 40];
        assert_eq!(
            multiplexed_schedule(&link, &grants),
            Err(ScheduleError::MuxInfeasible { cpes: 40 })
        );
    }

    #[test]
    fn multiplexed_equal_grants_start_together() {
        let cfg = NetworkConfig {
            cpes_per_onu: 4,
            cpe_delays: vec![SimTime::ZERO; 4],
            ..NetworkConfig::default()
        };
        let link = cfg.link(SimTime::from_micros(40));
        let s = multiplexed_schedule(&link, &[50_000; 4]).unwrap();
        assert!(s.cpe_starts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn pon_delay_first_and_last() {
        let cfg = NetworkConfig::default();
        let link = cfg.link(SimTime::from_micros(5));
        let base = cfg.time_base();
        let one = pon_delay_stats(&link, 0, cfg.max_packet_bits).unwrap();
        assert_eq!(one.first_queueing, base.zero());
        assert_eq!(one.last_queueing, base.zero());
        let many = pon_delay_stats(&link, 0, 10 * cfg.max_packet_bits).unwrap();
        assert_eq!(many.last_queueing, base.zero());
        let bmax = max_buffer_occupancy(&link, 10 * cfg.max_packet_bits).unwrap() as f64;
        let expected_first = (bmax - cfg.max_packet_bits as f64) / cfg.dsl_rate as f64;
        // The peak was rounded up to a whole bit.
        let bit_time = 1.0 / cfg.dsl_rate as f64;
        assert!((many.first_queueing.as_secs_f64() - expected_first).abs() < bit_time);
    }
}
