//! Grant sizing at the OLT, grant distribution at the ONU, and PTM framing
//! of CPE grants.

use crate::model::NetworkConfig;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DbaKind {
    /// Every ONU gets its full request.
    Gated,
    /// Requests are capped at Z R_p / O.
    Limited,
    /// Limited plus a 1/O share of a pool of unused allowance.
    Excess,
}

impl DbaKind {
    pub fn name(self) -> &'static str {
        match self {
            DbaKind::Gated => "gated",
            DbaKind::Limited => "limited",
            DbaKind::Excess => "excess",
        }
    }
}

impl fmt::Display for DbaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DbaKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gated" => Ok(DbaKind::Gated),
            "limited" => Ok(DbaKind::Limited),
            "excess" => Ok(DbaKind::Excess),
            other => Err(format!(
                "unknown DBA `{other}` (expected gated, limited or excess)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DbaPolicy {
    pub kind: DbaKind,
    /// Per-ONU cap of the limited policy, Z R_p / O.
    pub limit: u64,
    /// Upper bound of the shared excess pool, Z R_p.
    pub pool_cap: u64,
    pub onus: u64,
}

impl DbaPolicy {
    pub fn new(kind: DbaKind, net: &NetworkConfig) -> Self {
        DbaPolicy {
            kind,
            limit: net.limit_bits(),
            pool_cap: net.cycle_capacity_bits(),
            onus: net.onus as u64,
        }
    }

    /// Largest grant the policy can ever hand out (`None` when unbounded).
    pub fn max_onu_grant(&self) -> Option<u64> {
        match self.kind {
            DbaKind::Gated => None,
            DbaKind::Limited => Some(self.limit),
            DbaKind::Excess => Some(2 * self.limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrantDecision {
    pub grant: u64,
    pub new_pool: u64,
}

/// Sizes one ONU grant from its reported backlog and updates the excess
/// pool.
pub fn size_onu_grant(policy: &DbaPolicy, backlog: u64, pool: u64) -> GrantDecision {
    let limit = policy.limit;
    match policy.kind {
        DbaKind::Gated => GrantDecision {
            grant: backlog,
            new_pool: pool,
        },
        DbaKind::Limited => {
            let grant = backlog.min(limit);
            GrantDecision {
                grant,
                new_pool: (pool + (limit - grant)).min(policy.pool_cap),
            }
        }
        DbaKind::Excess => {
            let allowance = limit + (pool / policy.onus).min(limit);
            let grant = backlog.min(allowance);
            let new_pool = if grant <= limit {
                (pool + (limit - grant)).min(policy.pool_cap)
            } else {
                pool.saturating_sub(grant - limit)
            };
            GrantDecision { grant, new_pool }
        }
    }
}

/// Splits an ONU grant among CPEs by water-filling: repeatedly give every
/// unsatisfied CPE an equal share, capped at its backlog. Bits that do not
/// divide evenly go to the lowest-indexed CPEs still wanting more.
pub fn distribute_to_cpes(onu_grant: u64, backlogs: &[u64]) -> Vec<u64> {
    let mut grants = vec![0u64; backlogs.len()];
    let mut remaining = onu_grant;
    loop {
        let hungry: Vec<usize> = (0..backlogs.len())
            .filter(|&c| grants[c] < backlogs[c])
            .collect();
        if hungry.is_empty() || remaining == 0 {
            break;
        }
        let share = remaining / hungry.len() as u64;
        if share == 0 {
            for &c in &hungry {
                if remaining == 0 {
                    break;
                }
                grants[c] += 1;
                remaining -= 1;
            }
            continue;
        }
        for &c in &hungry {
            let take = share.min(backlogs[c] - grants[c]);
            grants[c] += take;
            remaining -= take;
        }
    }
    grants
}

pub const PTM_PAYLOAD_BYTES: u64 = 64;
pub const PTM_CODEWORD_BYTES: u64 = 65;
pub const PTM_CODEWORD_BITS: u64 = PTM_CODEWORD_BYTES * 8;

/// DSL line bits the OLT reserves for a CPE grant of `pon_bits`: one PTM
/// codeword per started 64 payload bytes plus one for control characters.
pub fn ptm_expand(pon_bits: u64) -> u64 {
    let bytes = pon_bits.div_ceil(8);
    (bytes.div_ceil(PTM_PAYLOAD_BYTES) + 1) * PTM_CODEWORD_BITS
}

/// Backlog a CPE reports: all queued bits, counting only what is left of a
/// partially sent frame.
pub fn report_backlog<I>(queued_frame_bits: I, partial_remaining: u64) -> u64
where
    I: IntoIterator<Item = u64>,
{
    partial_remaining + queued_frame_bits.into_iter().sum::<u64>()
}
