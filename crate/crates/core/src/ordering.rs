//! Transmission order of two segregated CPEs, and the ascending-grant rule
//! used for more.
//!
//! Completion times are measured from the cycle origin to the instant the
//! last bit reaches the OLT, for an ONU that serves two CPEs back to back
//! (three gate messages on the PON).

use crate::model::OnuLink;
use crate::time::{ExactTime, SimTime, NANOS_PER_SEC};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("delta_1 must not exceed delta_2; swap the CPE labels")]
    DelayOrder,
    #[error("grant of {grant} bits is below the maximum packet size {max} bits")]
    GrantBelowMax { grant: u64, max: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    /// CPE 1 first.
    Twelve,
    /// CPE 2 first.
    TwentyOne,
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::Twelve => "12",
            Order::TwentyOne => "21",
        })
    }
}

/// A grant size in bits held as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitThreshold {
    num: i128,
    den: i128,
}

impl BitThreshold {
    pub fn bits_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Compares a whole number of bits against the threshold.
    pub fn cmp_bits(&self, bits: u64) -> Ordering {
        (bits as i128 * self.den).cmp(&self.num)
    }
}

impl PartialOrd for BitThreshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        // Whole parts first; the fractional cross products stay within i128.
        let (q1, r1) = (self.num.div_euclid(self.den), self.num.rem_euclid(self.den));
        let (q2, r2) = (
            other.num.div_euclid(other.den),
            other.num.rem_euclid(other.den),
        );
        Some(
            q1.cmp(&q2)
                .then_with(|| (r1 * other.den).cmp(&(r2 * self.den))),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    /// Below this, CPE 1 finishes early enough not to delay CPE 2.
    pub th1: BitThreshold,
    /// Above this, the reverse order finishes sooner.
    pub th2: BitThreshold,
}

/// Grant thresholds for CPE 1 given CPE 2's grant. Requires
/// `delta_1 <= delta_2`.
pub fn thresholds(
    link: &OnuLink<'_>,
    g2: u64,
    delta_1: SimTime,
    delta_2: SimTime,
) -> Result<Thresholds, OrderingError> {
    if delta_1 > delta_2 {
        return Err(OrderingError::DelayOrder);
    }
    Ok(thresholds_unchecked(link, g2, delta_1, delta_2))
}

fn thresholds_unchecked(
    link: &OnuLink<'_>,
    g2: u64,
    delta_1: SimTime,
    delta_2: SimTime,
) -> Thresholds {
    let rd = link.net.dsl_rate as i128;
    let rp = link.net.pon_rate as i128;
    let g2 = g2 as i128;
    let ns = NANOS_PER_SEC as i128;
    let dd = delta_2.as_nanos() as i128 - delta_1.as_nanos() as i128;
    // G2 (1 - R_d/R_p) + 2 R_d dd
    let den1 = rp * ns;
    let th1 = BitThreshold {
        num: g2 * (rp - rd) * ns + 2 * rd * rp * dd,
        den: den1,
    };
    // G2 + 2 dd / (1/R_d - 1/R_p) = G2 + 2 dd R_d R_p / (R_p - R_d)
    let den2 = (rp - rd) * ns;
    let th2 = BitThreshold {
        num: g2 * den2 + 2 * rd * rp * dd,
        den: den2,
    };
    Thresholds { th1, th2 }
}

fn check_grants(link: &OnuLink<'_>, grants: [u64; 2]) -> Result<(), OrderingError> {
    let max = link.net.max_packet_bits;
    match grants.iter().find(|&&g| g < max) {
        Some(&grant) => Err(OrderingError::GrantBelowMax { grant, max }),
        None => Ok(()),
    }
}

/// Earliest ONU start for one CPE's data with three gates on the PON.
fn solo_start(link: &OnuLink<'_>, grant: u64, delta: SimTime) -> ExactTime {
    let net = link.net;
    let base = net.time_base();
    let fixed = 3 * net.pon_gate_time.as_nanos()
        + link.tau.as_nanos()
        + net.dsl_gate_time.as_nanos()
        + 2 * delta.as_nanos();
    base.from_nanos(fixed)
        + base.dsl(grant as i128)
        + base.pon(net.max_packet_bits as i128 - grant as i128)
}

/// Completion time of one order: the ONU sends the first CPE's data, then
/// the second's, back to back or with a gap if the second is not ready.
pub fn completion_time(
    link: &OnuLink<'_>,
    order: Order,
    g1: u64,
    g2: u64,
    delta_1: SimTime,
    delta_2: SimTime,
) -> Result<ExactTime, OrderingError> {
    check_grants(link, [g1, g2])?;
    let ((ga, da), (gb, db)) = match order {
        Order::Twelve => ((g1, delta_1), (g2, delta_2)),
        Order::TwentyOne => ((g2, delta_2), (g1, delta_1)),
    };
    let base = link.net.time_base();
    let first_done = solo_start(link, ga, da) + base.pon(ga as i128);
    let second = first_done.max(solo_start(link, gb, db));
    Ok(second + base.pon(gb as i128) + base.from_nanos(link.tau.as_nanos()))
}

/// The three-branch closed form of the minimum completion time over both
/// orders (requires `delta_1 <= delta_2`). Exact up to the upper threshold;
/// above it the last branch ignores a possible wait for CPE 2's data, so it
/// can undershoot the true minimum by up to G2/R_p.
pub fn min_completion_time_piecewise(
    link: &OnuLink<'_>,
    g1: u64,
    g2: u64,
    delta_1: SimTime,
    delta_2: SimTime,
) -> Result<ExactTime, OrderingError> {
    check_grants(link, [g1, g2])?;
    let th = thresholds(link, g2, delta_1, delta_2)?;
    let net = link.net;
    let base = net.time_base();
    let m = net.max_packet_bits as i128;
    let constant = base.from_nanos(
        3 * net.pon_gate_time.as_nanos() + net.dsl_gate_time.as_nanos() + 2 * link.tau.as_nanos(),
    );
    let t = if th.th1.cmp_bits(g1) == Ordering::Less {
        constant + base.from_nanos(2 * delta_2.as_nanos()) + base.dsl(g2 as i128) + base.pon(m)
    } else if th.th2.cmp_bits(g1) != Ordering::Greater {
        constant
            + base.from_nanos(2 * delta_1.as_nanos())
            + base.dsl(g1 as i128)
            + base.pon(m + g2 as i128)
    } else {
        constant + base.from_nanos(2 * delta_1.as_nanos()) + base.dsl(g1 as i128) + base.pon(m)
    };
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDecision {
    pub order: Order,
    /// Thresholds of the pair labelled so that the first CPE has the smaller
    /// delay; `relabeled` says whether that swapped the inputs.
    pub thresholds: Thresholds,
    pub relabeled: bool,
    pub t12: ExactTime,
    pub t21: ExactTime,
    /// Both orders finish at the same instant.
    pub tie: bool,
}

/// Picks the order with the shorter cycle: CPE 1 first iff its grant does
/// not exceed the upper threshold. Exact ties go to order 12.
pub fn best_order(
    link: &OnuLink<'_>,
    g1: u64,
    g2: u64,
    delta_1: SimTime,
    delta_2: SimTime,
) -> Result<OrderDecision, OrderingError> {
    check_grants(link, [g1, g2])?;
    let t12 = completion_time(link, Order::Twelve, g1, g2, delta_1, delta_2)?;
    let t21 = completion_time(link, Order::TwentyOne, g1, g2, delta_1, delta_2)?;
    let relabeled = delta_1 > delta_2;
    let (thresholds, order) = if relabeled {
        let th = thresholds_unchecked(link, g1, delta_2, delta_1);
        let second_first = th.th2.cmp_bits(g2) != Ordering::Greater;
        (
            th,
            if second_first {
                Order::TwentyOne
            } else {
                Order::Twelve
            },
        )
    } else {
        let th = thresholds_unchecked(link, g2, delta_1, delta_2);
        let first_first = th.th2.cmp_bits(g1) != Ordering::Greater;
        (
            th,
            if first_first {
                Order::Twelve
            } else {
                Order::TwentyOne
            },
        )
    };
    let tie = t12 == t21;
    Ok(OrderDecision {
        order: if tie { Order::Twelve } else { order },
        thresholds,
        relabeled,
        t12,
        t21,
        tie,
    })
}

/// Transmission order for a segregated cycle: CPE indices sorted by
/// ascending grant, equal grants kept in index order.
pub fn sort_cpes(grants: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grants.len()).collect();
    idx.sort_by_key(|&i| grants[i]);
    idx
}
