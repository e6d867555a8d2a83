//! Command-line front end.
//!
//! Settings come from a flat `key = value` file, `--set key=value` and the
//! dedicated flags, in rising precedence over the built-in defaults.
//! `PONDSL_SEED` replaces the default seed. Network keys are the symbols of
//! the analysis: rates in bit/s, times in seconds, `M` in bits; buffer sizes
//! are in bytes or `unbounded`.
//!
//! Exit status is 0 on success, 1 for configuration errors and 2 when a run
//! fails.

use crate::dba::DbaKind;
use crate::engine::{oracle_replay, OracleOptions};
use crate::engine::{run, sweep, sweep_configs, MetricsRecord, RunConfig, SweepAxes};
use crate::flowcontrol::{Framing, Protocol};
use crate::ordering::{best_order, completion_time, Order};
use crate::schedule::ScheduleMode;
use crate::time::{ExactTime, SimTime};
use crate::traffic::{make_stream, SizeMix};
use clap::{Args, Parser, Subcommand};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Keys applied to a [`RunConfig`], in application order (`E` before
/// `delta`).
pub const RUN_KEYS: &[&str] = &[
    "R_d",
    "R_p",
    "E",
    "O",
    "tau_min",
    "tau_max",
    "g_p",
    "g_d",
    "M",
    "Z",
    "guard",
    "delta",
    "load",
    "hurst",
    "seed",
    "packets",
    "warmup",
    "protocol",
    "dba",
    "pause_threshold",
    "pause_duration",
    "cpe_capacity",
    "modem_capacity",
    "framing",
    "preload",
    "size_mix",
    "sub_sources",
    "on_min",
    "on_cap",
    "off_cap_ratio",
    "peak_factor",
];

/// Keys read by individual subcommands.
pub const COMMAND_KEYS: &[&str] = &[
    "loads", "hursts", "protocols", "dbas", "output", "gnuplot", "grants", "mode", "tau", "g1",
    "g2", "frames",
];

pub const CSV_HEADER: &str = "protocol,dba,load,hurst,seed,max_cpe_bytes,max_onu_bytes,loss_rate,mean_dsl_delay_s,mean_pon_delay_s,packets";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

fn io_err(e: io::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "pondsl", version, about = "Hybrid PON/xDSL drop-point simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    pub config: Option<PathBuf>,
    /// Overrides one key, e.g. `--set load=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulates one configuration and prints one CSV row.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the CSV here instead of standard output (key `output`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulates every combination of the axes, one CSV row each.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated loads (key `loads`; default: `load`).
        #[arg(long)]
        loads: Option<String>,
        /// Comma-separated Hurst parameters (key `hursts`).
        #[arg(long)]
        hursts: Option<String>,
        /// Comma-separated protocols (key `protocols`).
        #[arg(long)]
        protocols: Option<String>,
        /// Comma-separated DBA kinds (key `dbas`).
        #[arg(long)]
        dbas: Option<String>,
        /// Write the CSV here instead of standard output (key `output`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write a gnuplot script that plots the CSV (key `gnuplot`).
        /// Needs `--output`.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Prints the instants of one gated cycle.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Comma-separated grants in bits, one per CPE (key `grants`).
        /// `E` follows the number of grants.
        #[arg(long)]
        grants: Option<String>,
        /// `seg` or `mux` (key `mode`).
        #[arg(long)]
        mode: Option<String>,
        /// ONU round-trip half, seconds (key `tau`; default `tau_min`).
        #[arg(long)]
        tau: Option<String>,
    },
    /// Compares the two transmission orders of a pair of CPEs.
    Order {
        #[command(flatten)]
        common: Common,
        /// Grant of CPE 1 in bits (key `g1`).
        #[arg(long)]
        g1: Option<String>,
        /// Grant of CPE 2 in bits (key `g2`).
        #[arg(long)]
        g2: Option<String>,
        /// Seconds (key `tau`; default `tau_min`).
        #[arg(long)]
        tau: Option<String>,
    },
    /// Dumps the generated traffic as `birth_ns,cpe,onu,bytes`.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Frames to dump, network-wide (key `frames`; default 10000).
        #[arg(long)]
        frames: Option<String>,
        /// Write the CSV here instead of standard output (key `output`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Runs the command line `args` (program name first) and returns the exit
/// status. `env_seed` is the value of `PONDSL_SEED`.
pub fn main_with(
    args: impl IntoIterator<Item = String>,
    env_seed: Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command, env_seed, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "pondsl: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command, env_seed: Option<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let path = |p: Option<PathBuf>| p.map(|p| p.to_string_lossy().into_owned());
    match cmd {
        Command::Run { common, output } => {
            let s = settings(&common, env_seed, &[("output", path(output))])?;
            cmd_run(&s, out)
        }
        Command::Sweep {
            common,
            loads,
            hursts,
            protocols,
            dbas,
            output,
            gnuplot,
        } => {
            let flags = [
                ("loads", loads),
                ("hursts", hursts),
                ("protocols", protocols),
                ("dbas", dbas),
                ("output", path(output)),
                ("gnuplot", path(gnuplot)),
            ];
            let s = settings(&common, env_seed, &flags)?;
            cmd_sweep(&s, out)
        }
        Command::Schedule {
            common,
            grants,
            mode,
            tau,
        } => {
            let s = settings(&common, env_seed, &[("grants", grants), ("mode", mode), ("tau", tau)])?;
            cmd_schedule(&s, out)
        }
        Command::Order { common, g1, g2, tau } => {
            let s = settings(&common, env_seed, &[("g1", g1), ("g2", g2), ("tau", tau)])?;
            cmd_order(&s, out)
        }
        Command::Trace {
            common,
            frames,
            output,
        } => {
            let s = settings(&common, env_seed, &[("frames", frames), ("output", path(output))])?;
            cmd_trace(&s, out)
        }
    }
}

/// Merged settings, by key.
pub type Settings = BTreeMap<String, String>;

/// Parses a flat configuration text: `key = value` per line, `#` starts a
/// comment. A key may appear once.
pub fn parse_config_text(text: &str) -> Result<Settings, CliError> {
    let mut map = Settings::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        check_key(k)?;
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(config_err(format!("line {}: `{k}` given twice", n + 1)));
        }
    }
    Ok(map)
}

fn check_key(k: &str) -> Result<(), CliError> {
    if RUN_KEYS.contains(&k) || COMMAND_KEYS.contains(&k) {
        Ok(())
    } else {
        Err(config_err(format!("unknown key `{k}`")))
    }
}

fn settings(
    common: &Common,
    env_seed: Option<String>,
    flags: &[(&str, Option<String>)],
) -> Result<Settings, CliError> {
    let mut map = Settings::new();
    if let Some(seed) = env_seed {
        map.insert("seed".into(), seed);
    }
    if let Some(p) = &common.config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        map.extend(parse_config_text(&text)?);
    }
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set `{s}`: expected key=value")))?;
        check_key(k.trim())?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| config_err(format!("`{key}`: cannot parse `{v}`")))
}

fn secs(key: &str, v: &str) -> Result<SimTime, CliError> {
    SimTime::from_secs_exact(num(key, v)?)
        .ok_or_else(|| config_err(format!("`{key}`: `{v}` is not a whole number of nanoseconds")))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Capacity in bytes, returned in bits.
fn capacity(key: &str, v: &str) -> Result<Option<u64>, CliError> {
    if v == "unbounded" {
        Ok(None)
    } else {
        Ok(Some(num::<u64>(key, v)? * 8))
    }
}

/// Applies the run keys of `s` on top of the defaults and validates.
pub fn run_config(s: &Settings) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    for &key in RUN_KEYS {
        if let Some(v) = s.get(key) {
            apply(&mut cfg, key, v)?;
        }
    }
    cfg.validate().map_err(|e| config_err(e.to_string()))
}

fn apply(cfg: &mut RunConfig, key: &str, v: &str) -> Result<(), CliError> {
    let net = &mut cfg.net;
    let t = &mut cfg.traffic;
    match key {
        "R_d" => net.dsl_rate = num(key, v)?,
        "R_p" => net.pon_rate = num(key, v)?,
        "E" => {
            net.cpes_per_onu = num(key, v)?;
            net.cpe_delays = vec![SimTime::ZERO; net.cpes_per_onu];
        }
        "O" => net.onus = num(key, v)?,
        "tau_min" => net.tau_min = secs(key, v)?,
        "tau_max" => net.tau_max = secs(key, v)?,
        "g_p" => net.pon_gate_time = secs(key, v)?,
        "g_d" => net.dsl_gate_time = secs(key, v)?,
        "M" => net.max_packet_bits = num(key, v)?,
        "Z" => net.max_cycle = secs(key, v)?,
        "guard" => net.guard = secs(key, v)?,
        "delta" => {
            net.cpe_delays = list(v).map(|d| secs(key, d)).collect::<Result<_, _>>()?;
        }
        "load" => t.load = num(key, v)?,
        "hurst" => t.hurst = num(key, v)?,
        "seed" => t.seed = num(key, v)?,
        "packets" => cfg.packets = num(key, v)?,
        "warmup" => cfg.warmup = num(key, v)?,
        "protocol" => cfg.protocol = v.parse().map_err(config_err)?,
        "dba" => cfg.dba = v.parse().map_err(config_err)?,
        "pause_threshold" => cfg.pause.threshold = num(key, v)?,
        "pause_duration" => cfg.pause.duration = secs(key, v)?,
        "cpe_capacity" => cfg.buffer_capacity = capacity(key, v)?,
        "modem_capacity" => cfg.modem_capacity = capacity(key, v)?,
        "framing" => {
            cfg.framing = match v {
                "ptm" => Framing::Ptm,
                "plain" => Framing::Plain,
                _ => return Err(config_err(format!("`framing`: expected ptm or plain, got `{v}`"))),
            }
        }
        "preload" => cfg.preload_bits = num::<u64>(key, v)? * 8,
        "size_mix" => {
            let entries = list(v)
                .map(|e| {
                    let (b, p) = e
                        .split_once(':')
                        .ok_or_else(|| config_err("`size_mix`: expected bytes:probability,..."))?;
                    Ok((num(key, b.trim())?, num(key, p.trim())?))
                })
                .collect::<Result<Vec<(u32, f64)>, CliError>>()?;
            t.size_mix = SizeMix::new(entries).map_err(|e| config_err(e.to_string()))?;
        }
        "sub_sources" => t.shape.sub_sources = num(key, v)?,
        "on_min" => t.shape.on_min = num(key, v)?,
        "on_cap" => t.shape.on_cap = num(key, v)?,
        "off_cap_ratio" => t.shape.off_cap_ratio = num(key, v)?,
        "peak_factor" => {
            t.shape.peak_factor = if v == "line" { None } else { Some(num(key, v)?) }
        }
        _ => unreachable!("only run keys are applied"),
    }
    Ok(())
}

/// Formats with six significant digits, fixed-point where that stays
/// short and exponent notation otherwise.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = format!("{x:.5e}");
    let (mant, exp) = e.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// One CSV row; metric fields stay empty when the run failed.
pub fn csv_row(
    protocol: Protocol,
    dba: DbaKind,
    load: f64,
    hurst: f64,
    seed: u64,
    m: Option<&MetricsRecord>,
) -> String {
    let mut row = format!("{protocol},{dba},{},{},{seed}", sig6(load), sig6(hurst));
    match m {
        Some(m) => {
            let _ = write!(
                row,
                ",{},{},{},{},{},{}",
                m.max_cpe_occupancy.div_ceil(8),
                m.max_onu_occupancy.div_ceil(8),
                sig6(m.loss_rate),
                sig6(m.mean_dsl_delay),
                sig6(m.mean_pon_delay),
                m.packets_delivered
            );
        }
        None => row.push_str(",,,,,,"),
    }
    row
}

fn sink<'a>(s: &Settings, out: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    Ok(match s.get("output") {
        Some(p) => Box::new(io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::Runtime(format!("{p}: {e}")))?,
        )),
        None => Box::new(out),
    })
}

pub fn cmd_run(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = run_config(s)?;
    let m = run(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut w = sink(s, out)?;
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    writeln!(
        w,
        "{}",
        csv_row(cfg.protocol, cfg.dba, cfg.traffic.load, cfg.traffic.hurst, cfg.traffic.seed, Some(&m))
    )
    .map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn axis<T>(s: &Settings, key: &str, single: T, parse: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    match s.get(key) {
        None => Ok(vec![single]),
        Some(v) => {
            let items = list(v).map(parse).collect::<Result<Vec<T>, _>>()?;
            if items.is_empty() {
                Err(config_err(format!("`{key}` is empty")))
            } else {
                Ok(items)
            }
        }
    }
}

pub fn cmd_sweep(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let base = run_config(s)?;
    let axes = SweepAxes {
        loads: axis(s, "loads", base.traffic.load, |v| num("loads", v))?,
        hursts: axis(s, "hursts", base.traffic.hurst, |v| num("hursts", v))?,
        protocols: axis(s, "protocols", base.protocol, |v| v.parse().map_err(config_err))?,
        dbas: axis(s, "dbas", base.dba, |v| v.parse().map_err(config_err))?,
    };
    if s.contains_key("gnuplot") && !s.contains_key("output") {
        return Err(config_err("`gnuplot` needs `output` for the script to read"));
    }
    for cfg in sweep_configs(&base, &axes) {
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
    }
    let rows = sweep(&base, &axes);
    let mut w = sink(s, out)?;
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    let mut failures = Vec::new();
    for r in &rows {
        let m = r.result.as_ref().ok();
        if let Err(e) = &r.result {
            failures.push(format!("{} {} H={} load={}: {e}", r.protocol, r.dba, r.hurst, r.load));
        }
        writeln!(w, "{}", csv_row(r.protocol, r.dba, r.load, r.hurst, r.seed, m)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    drop(w);
    if let (Some(script), Some(csv)) = (s.get("gnuplot"), s.get("output")) {
        let mut series: Vec<(Protocol, DbaKind, f64)> = Vec::new();
        for r in &rows {
            if !series.iter().any(|&(p, d, h)| p == r.protocol && d == r.dba && h == r.hurst) {
                series.push((r.protocol, r.dba, r.hurst));
            }
        }
        std::fs::write(script, gnuplot_script(Path::new(csv), &series))
            .map_err(|e| CliError::Runtime(format!("{script}: {e}")))?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}

/// A gnuplot script drawing the four metrics of a sweep CSV against load,
/// one line per (protocol, DBA, Hurst) series, into `<csv stem>.png`.
pub fn gnuplot_script(csv: &Path, series: &[(Protocol, DbaKind, f64)]) -> String {
    let png = csv.with_extension("png");
    let mut g = String::new();
    let _ = writeln!(g, "set datafile separator \",\"");
    let _ = writeln!(g, "set terminal pngcairo size 1400,1000");
    let _ = writeln!(g, "set output \"{}\"", png.display());
    let _ = writeln!(g, "set multiplot layout 2,2");
    let _ = writeln!(g, "set xlabel \"load\"");
    let _ = writeln!(g, "set key top left");
    let panels = [
        (6, "max CPE occupancy (bytes)"),
        (7, "max ONU occupancy (bytes)"),
        (8, "loss rate"),
        (10, "mean PON delay (s)"),
    ];
    for (col, label) in panels {
        let _ = writeln!(g, "set ylabel \"{label}\"");
        let plots: Vec<String> = series
            .iter()
            .map(|(p, d, h)| {
                format!(
                    "\"{}\" skip 1 using 3:((strcol(1) eq \"{p}\" && strcol(2) eq \"{d}\" && abs($4 - {h}) < 1e-9) ? ${col} : 1/0) with linespoints title \"{p} {d} H={h}\"",
                    csv.display()
                )
            })
            .collect();
        let _ = writeln!(g, "plot {}", plots.join(", \\\n     "));
    }
    let _ = writeln!(g, "unset multiplot");
    g
}

fn ns(t: ExactTime) -> String {
    format!("{:.3}", t.as_nanos_f64())
}

fn tau_of(s: &Settings, cfg: &RunConfig) -> Result<SimTime, CliError> {
    match s.get("tau") {
        Some(v) => secs("tau", v),
        None => Ok(cfg.net.tau_min),
    }
}

pub fn cmd_schedule(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let grants: Vec<u64> = list(s.get("grants").ok_or_else(|| config_err("`grants` is required"))?)
        .map(|g| num("grants", g))
        .collect::<Result<_, _>>()?;
    if grants.is_empty() {
        return Err(config_err("`grants` is empty"));
    }
    let mode = match s.get("mode").map(String::as_str).unwrap_or("seg") {
        "seg" => ScheduleMode::Segregated,
        "mux" => ScheduleMode::Multiplexed,
        other => return Err(config_err(format!("`mode`: expected seg or mux, got `{other}`"))),
    };
    let mut s = s.clone();
    s.insert("E".into(), grants.len().to_string());
    let cfg = run_config(&s)?;
    let tau = tau_of(&s, &cfg)?;
    let link = cfg.net.link(tau);
    let r = oracle_replay(&link, &grants, mode, OracleOptions::default())
        .map_err(|e| config_err(e.to_string()))?;
    let w = out;
    let cycle_end = r.onu_end + cfg.net.time_base().from_nanos(tau.as_nanos());
    let order: Vec<String> = r.schedule.order.iter().map(|c| c.to_string()).collect();
    let line = |w: &mut dyn Write, t: String| writeln!(w, "# {t}").map_err(io_err);
    line(w, format!("mode {mode:?}, E = {}, tau = {} ns", grants.len(), tau.as_nanos()))?;
    line(w, format!("PON order {}", order.join(" ")))?;
    if mode == ScheduleMode::Segregated && r.schedule.order.windows(2).any(|p| p[0] > p[1]) {
        line(w, "grants sorted ascending; the order above is the applied permutation".into())?;
    }
    line(w, format!("ONU start {} ns, ONU end {} ns, T {} ns", ns(r.onu_start), ns(r.onu_end), ns(cycle_end)))?;
    line(w, format!("gaps {}, underruns {}", r.gaps, r.underruns.len()))?;
    writeln!(w, "cpe,slot,grant_bits,sigma_ns,alpha_ns,omega_ns,mu_ns,beta_ns,peak_bits").map_err(io_err)?;
    for c in &r.cpes {
        let slot = r.schedule.order.iter().position(|&x| x == c.cpe).unwrap_or(c.cpe);
        writeln!(
            w,
            "{},{slot},{},{},{},{},{},{},{}",
            c.cpe,
            grants[c.cpe],
            ns(c.dsl_start),
            ns(c.dp_first),
            ns(c.dp_last),
            ns(c.pon_first),
            ns(c.pon_last),
            sig6(c.peak.bits_f64())
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn cmd_order(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let g = |k: &str| -> Result<u64, CliError> {
        num(k, s.get(k).ok_or_else(|| config_err(format!("`{k}` is required")))?)
    };
    let (g1, g2) = (g("g1")?, g("g2")?);
    let mut s2 = s.clone();
    // Applied before `delta`, which may then set both delays.
    s2.insert("E".into(), "2".into());
    let cfg = run_config(&s2)?;
    let tau = tau_of(s, &cfg)?;
    let link = cfg.net.link(tau);
    let (d1, d2) = (cfg.net.cpe_delays[0], cfg.net.cpe_delays[1]);
    let e = |e: crate::ordering::OrderingError| config_err(e.to_string());
    let d = best_order(&link, g1, g2, d1, d2).map_err(e)?;
    let t12 = completion_time(&link, Order::Twelve, g1, g2, d1, d2).map_err(e)?;
    let t21 = completion_time(&link, Order::TwentyOne, g1, g2, d1, d2).map_err(e)?;
    let (th1, th2) = (d.thresholds.th1.bits_f64(), d.thresholds.th2.bits_f64());
    let w = out;
    let line = |w: &mut dyn Write, t: String| writeln!(w, "# {t}").map_err(io_err);
    if d.relabeled {
        line(w, "CPE 2 has the smaller delay; thresholds refer to CPE 2's grant".into())?;
    }
    line(w, format!("thresholds: th1 {th1:.3} bits, th2 {th2:.3} bits"))?;
    line(w, format!("T12 {} ns, T21 {} ns", ns(t12), ns(t21)))?;
    line(
        w,
        format!("order {}{}", d.order, if d.tie { " (tie)" } else { "" }),
    )?;
    writeln!(w, "g1_bits,g2_bits,delta1_ns,delta2_ns,tau_ns,th1_bits,th2_bits,t12_ns,t21_ns,order").map_err(io_err)?;
    writeln!(
        w,
        "{g1},{g2},{},{},{},{th1:.3},{th2:.3},{},{},{}",
        d1.as_nanos(),
        d2.as_nanos(),
        tau.as_nanos(),
        ns(t12),
        ns(t21),
        d.order
    )
    .map_err(io_err)
}

pub fn cmd_trace(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    use std::cmp::Reverse;
    let cfg = run_config(s)?;
    let frames: u64 = match s.get("frames") {
        Some(v) => num("frames", v)?,
        None => 10_000,
    };
    let e = cfg.net.cpes_per_onu;
    let mut streams: Vec<_> = (0..cfg.net.onus * e)
        .map(|l| make_stream(&cfg.traffic, &cfg.net, l / e, l % e))
        .collect();
    let mut heap = BinaryHeap::new();
    for (l, st) in streams.iter_mut().enumerate() {
        if let Some((t, b)) = st.next() {
            heap.push(Reverse((t, l, b)));
        }
    }
    let mut w = sink(s, out)?;
    writeln!(w, "birth_ns,cpe,onu,bytes").map_err(io_err)?;
    for _ in 0..frames {
        let Some(Reverse((t, l, bits))) = heap.pop() else {
            break;
        };
        writeln!(w, "{},{},{},{}", t.as_nanos(), l % e, l / e, bits / 8).map_err(io_err)?;
        if let Some((t, b)) = streams[l].next() {
            heap.push(Reverse((t, l, b)));
        }
    }
    w.flush().map_err(io_err)
}
