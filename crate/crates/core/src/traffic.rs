//! Upstream packet generation per CPE.
//!
//! H = 0.5 gives Poisson arrivals. For H > 0.5 each CPE superposes several
//! on/off sub-sources whose period lengths are Pareto distributed with shape
//! 3 - 2H: during an on period the sub-source emits frames back to back at
//! a fixed peak rate, then stays silent for an off period. Both lengths are
//! capped so their moments are finite, which bounds the time scale up to
//! which the traffic is self-similar.
//!
//! By default sub-sources emit at R_d and every on period carries at least
//! 100 frames. At R_d the duty cycle is a fraction of a percent; with
//! one-frame on periods the bursts are shorter than any useful bin and the
//! trace looks like white noise up to seconds. Longer on periods put the
//! self-similar range at 10 ms and above.

use crate::model::{ConfigError, NetworkConfig};
use crate::time::{SimTime, NANOS_PER_SEC};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};

/// Frame size distribution: (bytes, probability) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeMix {
    entries: Vec<(u32, f64)>,
    cumulative: Vec<f64>,
}

impl Default for SizeMix {
    /// The quad-mode mix: 64, 300, 580 and 1518 byte frames.
    fn default() -> Self {
        SizeMix::new(vec![(64, 0.60), (300, 0.04), (580, 0.11), (1518, 0.25)])
            .expect("valid default mix")
    }
}

impl SizeMix {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self, ConfigError> {
        if entries.is_empty() {
            return Err(ConfigError::new("size_mix", "empty"));
        }
        if entries
            .iter()
            .any(|&(b, p)| b == 0 || !(0.0..=1.0).contains(&p))
        {
            return Err(ConfigError::new(
                "size_mix",
                "sizes must be positive and probabilities in [0, 1]",
            ));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new(
                "size_mix",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        let mut acc = 0.0;
        let cumulative = entries
            .iter()
            .map(|e| {
                acc += e.1;
                acc
            })
            .collect();
        Ok(SizeMix {
            entries,
            cumulative,
        })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn mean_bits(&self) -> f64 {
        self.entries.iter().map(|&(b, p)| b as f64 * 8.0 * p).sum()
    }

    pub fn max_bits(&self) -> u32 {
        self.entries.iter().map(|e| e.0 * 8).max().unwrap_or(0)
    }

    /// Draws one frame size in bits.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let i = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.entries.len() - 1);
        self.entries[i].0 * 8
    }
}

/// Parameters of the on/off construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnOffShape {
    pub sub_sources: usize,
    /// Shortest on period, in frames.
    pub on_min: u32,
    /// Longest on period, in frames.
    pub on_cap: u32,
    /// Longest off period as a multiple of the shortest.
    pub off_cap_ratio: f64,
    /// Emission rate during on periods as a multiple of the sub-source
    /// mean rate, never above R_d. `None` emits at R_d.
    pub peak_factor: Option<f64>,
}

impl Default for OnOffShape {
    fn default() -> Self {
        OnOffShape {
            sub_sources: 16,
            on_min: 100,
            on_cap: 30_000,
            off_cap_ratio: 100.0,
            peak_factor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficConfig {
    /// Offered load as a fraction of R_p, summed over all CPEs.
    pub load: f64,
    pub hurst: f64,
    pub seed: u64,
    pub size_mix: SizeMix,
    pub shape: OnOffShape,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            load: 0.5,
            hurst: 0.5,
            seed: 1,
            size_mix: SizeMix::default(),
            shape: OnOffShape::default(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(self, net: &NetworkConfig) -> Result<Self, ConfigError> {
        if !(self.load > 0.0 && self.load < 1.0) {
            return Err(ConfigError::new("load", "must lie in (0, 1)"));
        }
        if !(0.5..1.0).contains(&self.hurst) {
            return Err(ConfigError::new("hurst", "must lie in [0.5, 1)"));
        }
        if self.shape.sub_sources == 0
            || self.shape.on_min == 0
            || self.shape.on_cap < self.shape.on_min
            || self.shape.off_cap_ratio < 1.0 {
            return Err(ConfigError::new("shape", "degenerate on/off parameters"));
        }
        if let Some(f) = self.shape.peak_factor {
            if !(f > 1.0) {
                return Err(ConfigError::new("peak_factor", "must exceed 1"));
            }
        }
        let per_source = self.cpe_rate(net) / self.shape.sub_sources as f64;
        if self.hurst > 0.5 && per_source >= net.dsl_rate as f64 {
            return Err(ConfigError::new(
                "load",
                "per-CPE rate too high for on/off sources at the DSL rate",
            ));
        }
        Ok(self)
    }

    /// Mean offered bit rate of one CPE: load R_p / (O E).
    pub fn cpe_rate(&self, net: &NetworkConfig) -> f64 {
        self.load * net.pon_rate as f64 / (net.onus * net.cpes_per_onu) as f64
    }

    /// Pareto shape of the on and off periods, 3 - 2H.
    pub fn pareto_shape(&self) -> f64 {
        3.0 - 2.0 * self.hurst
    }
}

/// SplitMix64 finalizer, used to derive independent per-CPE seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn cpe_seed(seed: u64, onu: usize, cpe: usize) -> u64 {
    seed ^ mix64(((onu as u64) << 32) | cpe as u64)
}

/// Mean of min(X, cap) for X Pareto with minimum `xm` and shape `a`.
fn capped_pareto_mean(xm: f64, a: f64, cap: f64) -> f64 {
    if (a - 1.0).abs() < 1e-12 {
        xm * (1.0 + (cap / xm).ln())
    } else {
        xm * (1.0 + (1.0 - (xm / cap).powf(a - 1.0)) / (a - 1.0))
    }
}

/// Mean of min(floor(X), cap) for X Pareto with minimum `min`: the sum
/// of P(X >= n) = min(1, (min/n)^a).
fn capped_count_mean(a: f64, min: u32, cap: u32) -> f64 {
    let k = min as f64;
    min as f64 + (min + 1..=cap).map(|n| (k / n as f64).powf(a)).sum::<f64>()
}

#[derive(Debug, Clone)]
struct OffModel {
    xm: f64,
    cap: f64,
    mean: f64,
    dist: Pareto<f64>,
}

impl OffModel {
    fn new(mean: f64, a: f64, ratio: f64) -> Self {
        let unit = capped_pareto_mean(1.0, a, ratio);
        let xm = mean / unit;
        OffModel {
            xm,
            cap: xm * ratio,
            mean,
            dist: Pareto::new(xm, a).expect("positive pareto parameters"),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng).min(self.cap)
    }

    /// Remaining off time seen from a random instant inside an off period.
    fn residual<R: Rng + ?Sized>(&self, rng: &mut R, a: f64) -> f64 {
        let v = rng.random::<f64>() * self.mean;
        if v <= self.xm {
            return v;
        }
        let inner = 1.0 - (v - self.xm) * (a - 1.0) / self.xm;
        if inner <= 0.0 {
            return self.cap;
        }
        (self.xm * inner.powf(-1.0 / (a - 1.0))).min(self.cap)
    }
}

#[derive(Debug, Clone)]
struct SubSource {
    /// Next emission instant, ns.
    next: f64,
    /// Frames left in the current on period, including the next one.
    left: u32,
}

#[derive(Debug, Clone)]
enum Generator {
    Poisson {
        next: f64,
        gap: Exp<f64>,
    },
    OnOff {
        sources: Vec<SubSource>,
        on: Pareto<f64>,
        on_cap: u32,
        off: OffModel,
        ns_per_bit: f64,
    },
}

/// Lazily generated (birth, size) sequence of one CPE. Births are strictly
/// increasing whole nanoseconds.
#[derive(Debug, Clone)]
pub struct PacketStream {
    rng: ChaCha8Rng,
    mix: SizeMix,
    gen: Generator,
    last: Option<u64>,
}

impl PacketStream {
    fn on_count<R: Rng + ?Sized>(rng: &mut R, on: &Pareto<f64>, cap: u32) -> u32 {
        (on.sample(rng).floor() as u64).min(cap as u64).max(1) as u32
    }
}

impl Iterator for PacketStream {
    type Item = (SimTime, u32);

    fn next(&mut self) -> Option<(SimTime, u32)> {
        let size = self.mix.sample(&mut self.rng);
        let t = match &mut self.gen {
            Generator::Poisson { next, gap } => {
                let t = *next;
                *next += gap.sample(&mut self.rng);
                t
            }
            Generator::OnOff {
                sources,
                on,
                on_cap,
                off,
                ns_per_bit,
            } => {
                let (i, _) = sources
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.next.total_cmp(&b.1.next))
                    .expect("at least one sub-source");
                let s = &mut sources[i];
                let t = s.next;
                s.next += size as f64 * *ns_per_bit;
                s.left -= 1;
                if s.left == 0 {
                    s.next += off.sample(&mut self.rng);
                    s.left = PacketStream::on_count(&mut self.rng, on, *on_cap);
                }
                t
            }
        };
        let mut ns = t.ceil() as u64;
        if let Some(last) = self.last {
            ns = ns.max(last + 1);
        }
        self.last = Some(ns);
        Some((SimTime::from_nanos(ns), size))
    }
}

/// Builds the stream of CPE `cpe` under ONU `onu`.
pub fn make_stream(
    traffic: &TrafficConfig,
    net: &NetworkConfig,
    onu: usize,
    cpe: usize,
) -> PacketStream {
    let mut rng = ChaCha8Rng::seed_from_u64(cpe_seed(traffic.seed, onu, cpe));
    let mean_bits = traffic.size_mix.mean_bits();
    let rate = traffic.cpe_rate(net);
    let ns = NANOS_PER_SEC as f64;
    let gen = if traffic.hurst <= 0.5 {
        let gap = Exp::new(rate / mean_bits / ns).expect("positive rate");
        let next = gap.sample(&mut rng);
        Generator::Poisson { next, gap }
    } else {
        let a = traffic.pareto_shape();
        let shape = traffic.shape;
        let sub_rate = rate / shape.sub_sources as f64;
        let peak = shape.peak_factor.map_or(net.dsl_rate as f64, |f| {
            (f * sub_rate).min(net.dsl_rate as f64)
        });
        let ns_per_bit = ns / peak;
        let mean_frames = capped_count_mean(a, shape.on_min, shape.on_cap);
        let mean_on_bits = mean_frames * mean_bits;
        // Off time that makes the long-run sub-source rate exactly sub_rate.
        let mean_off = mean_on_bits * (ns / sub_rate - ns_per_bit);
        let off = OffModel::new(mean_off, a, shape.off_cap_ratio);
        let on = Pareto::new(shape.on_min as f64, a).expect("positive pareto parameters");
        let p_on = mean_on_bits * ns_per_bit / (mean_on_bits * ns_per_bit + mean_off);
        // Start in equilibrium: a source caught inside an on period has a
        // length-biased remainder, one caught in an off period waits out the
        // residual off time.
        let on_residual = OffModel::new(
            capped_pareto_mean(shape.on_min as f64, a, shape.on_cap as f64),
            a,
            shape.on_cap as f64 / shape.on_min as f64,
        );
        let sources = (0..shape.sub_sources)
            .map(|_| {
                if rng.random::<f64>() < p_on {
                    let left = on_residual
                        .residual(&mut rng, a)
                        .ceil()
                        .clamp(1.0, shape.on_cap as f64);
                    SubSource {
                        next: 0.0,
                        left: left as u32,
                    }
                } else {
                    SubSource {
                        next: off.residual(&mut rng, a),
                        left: PacketStream::on_count(&mut rng, &on, shape.on_cap),
                    }
                }
            })
            .collect();
        Generator::OnOff {
            sources,
            on,
            on_cap: shape.on_cap,
            off,
            ns_per_bit,
        }
    };
    PacketStream {
        rng,
        mix: traffic.size_mix.clone(),
        gen,
        last: None,
    }
}

/// Bits born in consecutive bins of `bin` width.
pub fn bin_bits(packets: &[(SimTime, u32)], bin: SimTime) -> Vec<f64> {
    let Some(last) = packets.last() else {
        return Vec::new();
    };
    let n = (last.0.as_nanos() / bin.as_nanos()) as usize + 1;
    let mut bins = vec![0.0; n];
    for &(t, size) in packets {
        bins[(t.as_nanos() / bin.as_nanos()) as usize] += size as f64;
    }
    // The last bin is partial.
    bins.pop();
    bins
}

/// Statistics of the network-wide trace: every CPE stream merged in birth
/// order and cut after a fixed number of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStats {
    pub frames: usize,
    pub span: SimTime,
    /// Offered bits per second over the span, as a fraction of the target.
    pub load_ratio: f64,
    /// Observed frequency of each size of the mix, in mix order.
    pub size_freqs: Vec<f64>,
    /// Aggregated-variance estimate over the per-ONU bit counts.
    pub hurst: Option<f64>,
}

/// Generates the first `frames` frames of the whole network and measures
/// them. Bits are binned per ONU at `bin`; the Hurst estimate averages the
/// log variances over the ONUs and uses blocks of up to a twentieth of the
/// series.
pub fn network_trace_stats(
    traffic: &TrafficConfig,
    net: &NetworkConfig,
    frames: usize,
    bin: SimTime,
) -> TraceStats {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let e = net.cpes_per_onu;
    let mut streams: Vec<PacketStream> = (0..net.onus * e)
        .map(|l| make_stream(traffic, net, l / e, l % e))
        .collect();
    let mut heap = BinaryHeap::with_capacity(streams.len());
    for (l, s) in streams.iter_mut().enumerate() {
        if let Some((t, bits)) = s.next() {
            heap.push(Reverse((t, l, bits)));
        }
    }
    let mix = traffic.size_mix.entries();
    let mut counts = vec![0usize; mix.len()];
    let mut per_onu: Vec<Vec<f64>> = vec![Vec::new(); net.onus];
    let mut total_bits = 0.0;
    let mut span = SimTime::ZERO;
    let mut taken = 0;
    while taken < frames {
        let Some(Reverse((t, l, bits))) = heap.pop() else {
            break;
        };
        taken += 1;
        span = t;
        total_bits += bits as f64;
        if let Some(i) = mix.iter().position(|&(b, _)| b * 8 == bits) {
            counts[i] += 1;
        }
        let k = (t.as_nanos() / bin.as_nanos()) as usize;
        let series = &mut per_onu[l / e];
        if series.len() <= k {
            series.resize(k + 1, 0.0);
        }
        series[k] += bits as f64;
        if let Some((t, b)) = streams[l].next() {
            heap.push(Reverse((t, l, b)));
        }
    }
    // Only whole bins before the cut.
    let whole = (span.as_nanos() / bin.as_nanos()) as usize;
    for s in &mut per_onu {
        s.resize(whole, 0.0);
    }
    let refs: Vec<&[f64]> = per_onu.iter().map(|s| s.as_slice()).collect();
    let target = traffic.cpe_rate(net) * (net.onus * e) as f64;
    TraceStats {
        frames: taken,
        span,
        load_ratio: if span > SimTime::ZERO {
            total_bits / span.as_secs_f64() / target
        } else {
            0.0
        },
        size_freqs: counts
            .iter()
            .map(|&c| c as f64 / taken.max(1) as f64)
            .collect(),
        hurst: aggregated_variance_hurst(&refs, 20),
    }
}

/// Hurst estimate by the aggregated-variance method over one or more
/// independent series of equal length.
///
/// The variance of block means falls as m^(2H-2) with block size m. Blocks
/// run from 1 to `n / min_blocks` samples, growing by half each step. The
/// log variances are averaged over the series, and H is fitted on a 0.001
/// grid against the expected sample variance, which for b blocks carries
/// the factor (b - b^(2H-1)) / (b - 1). Without that factor the subtracted
/// sample mean drags the estimate down at large m.
pub fn aggregated_variance_hurst(series: &[&[f64]], min_blocks: usize) -> Option<f64> {
    let n = series.iter().map(|s| s.len()).min()?;
    let max_m = n / min_blocks.max(2);
    if max_m < 4 {
        return None;
    }
    // (ln m, blocks, mean ln variance)
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    let mut m = 1usize;
    while m <= max_m {
        let blocks = n / m;
        let mut acc = 0.0;
        for s in series {
            let means: Vec<f64> = s[..blocks * m]
                .chunks_exact(m)
                .map(|c| c.iter().sum::<f64>() / m as f64)
                .collect();
            let mu = means.iter().sum::<f64>() / blocks as f64;
            let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (blocks - 1) as f64;
            if var <= 0.0 {
                return None;
            }
            acc += var.ln();
        }
        points.push(((m as f64).ln(), blocks as f64, acc / series.len() as f64));
        m = (m * 3).div_ceil(2).max(m + 1);
    }
    if points.len() < 3 {
        return None;
    }
    // For a given H the model is ln v = c + (2H-2) ln m + ln bias(b, H); the
    // offset c drops out by centering the residuals.
    let misfit = |h: f64| {
        let r: Vec<f64> = points
            .iter()
            .map(|&(lm, b, lv)| {
                let bias = (b - b.powf(2.0 * h - 1.0)) / (b - 1.0);
                lv - (2.0 * h - 2.0) * lm - bias.ln()
            })
            .collect();
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|x| (x - mu).powi(2)).sum::<f64>()
    };
    (0..500)
        .map(|k| 0.5 + k as f64 * 0.001)
        .map(|h| (misfit(h), h))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, h)| h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_mean_and_degenerate_mix() {
        let mix = SizeMix::default();
        assert!((mix.mean_bits() - 3_949.6).abs() < 1e-9);
        assert_eq!(mix.max_bits(), 12_144);
        let one = SizeMix::new(vec![(64, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1_000).all(|_| one.sample(&mut rng) == 512));
        assert!(SizeMix::new(vec![(64, 0.5)]).is_err());
        assert!(SizeMix::new(vec![]).is_err());
    }

    #[test]
    fn pareto_shape_from_hurst() {
        let t = TrafficConfig {
            hurst: 0.925,
            ..TrafficConfig::default()
        };
        assert!((t.pareto_shape() - 1.15).abs() < 1e-12);
    }

    #[test]
    fn hurst_out_of_range_rejected() {
        let net = NetworkConfig::default();
        for h in [0.4, 1.0, 1.2] {
            let t = TrafficConfig {
                hurst: h,
                ..TrafficConfig::default()
            };
            assert_eq!(t.validate(&net).unwrap_err().field, "hurst");
        }
        let t = TrafficConfig {
            load: 1.0,
            ..TrafficConfig::default()
        };
        assert_eq!(t.validate(&net).unwrap_err().field, "load");
    }

    #[test]
    fn capped_means() {
        // Closed form against a direct numeric integral of the survival function.
        let (xm, a, cap) = (2.0, 1.3, 50.0);
        let steps = 2_000_000;
        let h = cap / steps as f64;
        let integral: f64 = (0..steps)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                if t < xm {
                    1.0
                } else {
                    (xm / t).powf(a)
                }
            })
            .sum::<f64>()
            * h;
        assert!((capped_pareto_mean(xm, a, cap) - integral).abs() < 1e-4);
        assert_eq!(capped_count_mean(2.0, 1, 1), 1.0);
        assert!((capped_count_mean(2.0, 1, 2) - 1.25).abs() < 1e-12);
        assert!((capped_count_mean(2.0, 2, 3) - (2.0 + 4.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn residual_off_stays_in_support() {
        let off = OffModel::new(1e6, 1.4, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let r = off.residual(&mut rng, 1.4);
            assert!((0.0..=off.cap).contains(&r));
        }
    }

    #[test]
    fn streams_are_deterministic_and_increasing() {
        let net = NetworkConfig::default();
        for h in [0.5, 0.8] {
            let t = TrafficConfig {
                hurst: h,
                seed: 42,
                ..TrafficConfig::default()
            };
            let a: Vec<_> = make_stream(&t, &net, 3, 5).take(5_000).collect();
            let b: Vec<_> = make_stream(&t, &net, 3, 5).take(5_000).collect();
            assert_eq!(a, b);
            assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
            let other: Vec<_> = make_stream(&t, &net, 3, 6).take(5_000).collect();
            assert_ne!(a, other);
        }
    }

    #[test]
    fn poisson_interarrivals_have_unit_cv() {
        let net = NetworkConfig::default();
        let mix = SizeMix::default();
        // Per-CPE rate of 1000 frames/s.
        let load = 1_000.0 * mix.mean_bits() * 256.0 / net.pon_rate as f64;
        let t = TrafficConfig {
            load,
            ..TrafficConfig::default()
        };
        let births: Vec<f64> = make_stream(&t, &net, 0, 0)
            .take(1_000_000)
            .map(|p| p.0.as_nanos() as f64)
            .collect();
        let gaps: Vec<f64> = births.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
        let cv = var.sqrt() / mean;
        assert!((cv - 1.0).abs() < 0.05, "cv = {cv}");
        assert!((mean - 1e6).abs() / 1e6 < 0.01, "mean gap = {mean}");
    }

    #[test]
    fn white_noise_hurst_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let series: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>()).collect();
        let h = aggregated_variance_hurst(&[&series], 10).unwrap();
        assert!((h - 0.5).abs() < 0.05, "h = {h}");
    }
}
