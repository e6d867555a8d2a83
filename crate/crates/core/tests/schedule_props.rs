use pondsl::engine::{oracle_replay, OracleOptions};
use pondsl::model::NetworkConfig;
use pondsl::schedule::{
    max_buffer_occupancy, segregated_schedule, single_cpe_timeline, OccupancyEnvelope,
    ScheduleMode,
};
use pondsl::time::SimTime;
use proptest::prelude::*;

const M: u64 = 12_144;

fn net(delays: &[u64]) -> NetworkConfig {
    NetworkConfig {
        cpes_per_onu: delays.len(),
        cpe_delays: delays.iter().map(|&d| SimTime::from_nanos(d)).collect(),
        ..NetworkConfig::default()
    }
    .validate()
    .unwrap()
}

fn instance() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64)> {
    (1usize..=8).prop_flat_map(|e| {
        (
            prop::collection::vec(M..=20 * M, e),
            prop::collection::vec(0u64..=5_000, e),
            2_500u64..=100_000,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_cpe_timeline_is_ordered(g in M..=40 * M, d in 0u64..=5_000, tau in 2_500u64..=100_000) {
        let n = net(&[d]);
        let link = n.link(SimTime::from_nanos(tau));
        let t = single_cpe_timeline(&link, 0, g).unwrap();
        prop_assert!(t.sigma <= t.alpha);
        prop_assert!(t.alpha <= t.mu);
        prop_assert!(t.mu <= t.omega);
        prop_assert!(t.omega <= t.beta);
        prop_assert!(t.beta <= t.cycle_end);
        let base = n.time_base();
        prop_assert_eq!(t.beta - t.omega, base.pon(M as i128));
    }

    #[test]
    fn envelope_is_zero_outside_and_peaks_at_mu(g in M..=40 * M, tau in 2_500u64..=100_000) {
        let n = net(&[0]);
        let link = n.link(SimTime::from_nanos(tau));
        let env = OccupancyEnvelope::from_timeline(&single_cpe_timeline(&link, 0, g).unwrap());
        let base = n.time_base();
        let one = base.from_ticks(1);
        prop_assert_eq!(env.at(env.alpha - one).cmp_bits(0), std::cmp::Ordering::Equal);
        prop_assert_eq!(env.at(env.beta + one).cmp_bits(0), std::cmp::Ordering::Equal);
        prop_assert_eq!(env.at(env.beta).cmp_bits(0), std::cmp::Ordering::Equal);
        prop_assert!(env.at(env.mu) == env.peak());
        // Continuity: one tick either side of each breakpoint moves the
        // value by at most R_p bits per tick.
        for t in env.breakpoints() {
            let step = base.pon_rate() as f64 / (base.ticks_per_ns() as f64 * 1e9);
            prop_assert!(env.at(t).abs_diff_bits(&env.at(t - one)) <= step + 1e-9);
            prop_assert!(env.at(t).abs_diff_bits(&env.at(t + one)) <= step + 1e-9);
        }
        // The closed form rounds the same peak up to whole bits.
        let ceil = max_buffer_occupancy(&link, g).unwrap();
        prop_assert_eq!(env.peak().ceil_bits(), ceil);
    }

    #[test]
    fn segregated_sub_windows_are_contiguous(grants in prop::collection::vec(M..=20 * M, 1..=8)) {
        let n = net(&vec![0; grants.len()]);
        let link = n.link(SimTime::from_micros(20));
        let s = segregated_schedule(&link, &grants).unwrap();
        let base = n.time_base();
        for i in 1..grants.len() {
            let prev = s.order[i - 1];
            prop_assert_eq!(
                s.sub_window_starts[i],
                s.sub_window_starts[i - 1] + base.pon(grants[prev] as i128)
            );
        }
        prop_assert_eq!(
            s.onu_end,
            s.sub_window_starts[0] + base.pon(grants.iter().sum::<u64>() as i128)
        );
    }

    #[test]
    fn onu_start_is_monotone_in_delays_and_last_grant(
        (grants, delays, tau) in instance(),
        pick in any::<prop::sample::Index>(),
        extra_bits in 1u64..50_000,
        extra_delay in 1u64..2_000,
    ) {
        let link_net = net(&delays);
        let link = link_net.link(SimTime::from_nanos(tau));
        let s = segregated_schedule(&link, &grants).unwrap();
        let c = pick.index(grants.len());

        let mut later = delays.clone();
        later[c] += extra_delay;
        let later_net = net(&later);
        let later_link = later_net.link(SimTime::from_nanos(tau));
        prop_assert!(segregated_schedule(&later_link, &grants).unwrap().onu_start_exact >= s.onu_start_exact);

        // No grant can pull the end of the ONU burst in; only the last
        // slot's grant is sure to push its start.
        let mut bigger = grants.clone();
        bigger[c] += extra_bits;
        let b = segregated_schedule(&link, &bigger).unwrap();
        let base = link_net.time_base();
        let end = |x: &pondsl::schedule::CycleSchedule| {
            x.onu_start_exact + base.pon(x.total_pon_bits() as i128)
        };
        prop_assert!(end(&b) >= end(&s));
        if c == grants.len() - 1 {
            prop_assert!(b.onu_start_exact >= s.onu_start_exact);
        }
    }

    #[test]
    fn oracle_replays_cleanly_and_delayed_start_never_raises_the_peak(
        (grants, delays, tau) in instance(),
        mux in any::<bool>(),
    ) {
        let n = net(&delays);
        let link = n.link(SimTime::from_nanos(tau));
        let mode = if mux { ScheduleMode::Multiplexed } else { ScheduleMode::Segregated };
        let r = oracle_replay(&link, &grants, mode, OracleOptions::default()).unwrap();
        prop_assert!(r.is_clean(), "{:?}", r.underruns);
        for c in &r.cpes {
            // Started at its earliest instant the CPE would peak at the
            // closed-form value; the scheduled start can only lower it.
            let own = OccupancyEnvelope::from_timeline(
                &single_cpe_timeline(&link, c.cpe, grants[c.cpe]).unwrap(),
            );
            // The ONU start is rounded up to the clock, which may add up to
            // R_d * 1 ns of bits.
            if !mux {
                prop_assert!(c.peak.bits_f64() <= own.peak().bits_f64() + 0.077);
            }
        }
    }
}

#[test]
fn single_cpe_oracle_peak_equals_closed_form() {
    let n = net(&[0]);
    for g in [M, 2 * M, 50_000, 233_250, 20 * M] {
        let link = n.link(SimTime::from_micros(30));
        let r = oracle_replay(
            &link,
            &[g],
            ScheduleMode::Segregated,
            OracleOptions {
                dense: g <= 50_000,
                onu_early_ns: 0,
            },
        )
        .unwrap();
        let predicted = g as f64 - 77.0 / 2488.0 * (g - M) as f64;
        // Within R_d * 1 ns of bits.
        assert!((r.cpes[0].peak.bits_f64() - predicted).abs() <= 0.077, "G = {g}");
    }
}

#[test]
fn larger_early_grant_can_start_the_onu_sooner() {
    // Growing the first slot delays the second sub-window, which was the
    // binding one, by more than the first CPE's readiness moves.
    let n = net(&[0, 786]);
    let link = n.link(SimTime::from_nanos(2_500));
    let a = segregated_schedule(&link, &[12_144, 22_455]).unwrap();
    let b = segregated_schedule(&link, &[22_192, 22_455]).unwrap();
    assert!(b.onu_start_exact < a.onu_start_exact);
    let base = n.time_base();
    assert!(
        b.onu_start_exact + base.pon(44_647) > a.onu_start_exact + base.pon(34_599)
    );
}
