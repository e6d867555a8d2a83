use std::path::Path;
use std::process::{Command, Output};

fn pondsl(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pondsl"));
    c.args(args).env_remove("PONDSL_SEED");
    if let Some(s) = seed_env {
        c.env("PONDSL_SEED", s);
    }
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const MINIMAL: &str = "# small network\nO = 4\npackets = 10000\nload = 0.3\n";

fn field<'a>(csv: &'a str, row: usize, name: &str) -> &'a str {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.nth(row).unwrap().split(',').nth(col).unwrap()
}

#[test]
fn run_missing_file_is_a_config_error() {
    let o = pondsl(&["run", "/no/such/file.conf"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
}

#[test]
fn run_prints_header_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = pondsl(&["run", &cfg], None);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert_eq!(
        out.lines().next().unwrap(),
        "protocol,dba,load,hurst,seed,max_cpe_bytes,max_onu_bytes,loss_rate,mean_dsl_delay_s,mean_pon_delay_s,packets"
    );
    assert_eq!(field(&out, 0, "load"), "0.300000");
    assert_eq!(field(&out, 0, "protocol"), "gated_seg");
}

#[test]
fn flag_beats_file_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = pondsl(&["run", &cfg, "--set", "load=0.5"], Some("9"));
    assert_eq!(field(&stdout(&o), 0, "load"), "0.500000");
    assert_eq!(field(&stdout(&o), 0, "seed"), "9");

    let with_seed = write_config(dir.path(), &format!("{MINIMAL}seed = 4\n"));
    let o = pondsl(&["run", &with_seed], Some("9"));
    assert_eq!(field(&stdout(&o), 0, "seed"), "4");
    let o = pondsl(&["run", &with_seed, "--set", "seed=5"], Some("9"));
    assert_eq!(field(&stdout(&o), 0, "seed"), "5");
}

#[test]
fn bad_keys_and_values_exit_1() {
    for args in [
        vec!["run", "--set", "lod=0.5"],
        vec!["run", "--set", "load=1.5"],
        vec!["run", "--set", "protocol=token_ring"],
        vec!["run", "--set", "packets"],
        vec!["sweep", "--loads", "0.2,x"],
        vec!["sweep", "--gnuplot", "plot.gp"],
        vec!["schedule", "--grants", "100"],
        vec!["order", "--g1", "20000"],
        vec!["frobnicate"],
    ] {
        let o = pondsl(&args, None);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let o = pondsl(
        &["run", "--set", "packets=10000", "--set", "O=2", "--output", "/no/such/dir/out.csv"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_rows_follow_the_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = pondsl(
        &[
            "sweep",
            &cfg,
            "--loads",
            "0.2,0.4",
            "--hursts",
            "0.5,0.8",
            "--protocols",
            "gated_seg,none",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let rows: Vec<(String, String, String)> = (0..8)
        .map(|r| {
            (
                field(&out, r, "protocol").to_string(),
                field(&out, r, "hurst").to_string(),
                field(&out, r, "load").to_string(),
            )
        })
        .collect();
    assert_eq!(out.lines().count(), 9);
    assert_eq!(rows[0], ("gated_seg".into(), "0.500000".into(), "0.200000".into()));
    assert_eq!(rows[1], ("gated_seg".into(), "0.500000".into(), "0.400000".into()));
    assert_eq!(rows[2], ("gated_seg".into(), "0.800000".into(), "0.200000".into()));
    assert_eq!(rows[4], ("none".into(), "0.500000".into(), "0.200000".into()));
}

#[test]
fn sweep_missing_file_and_single_point() {
    assert_eq!(pondsl(&["sweep", "/no/such.conf"], None).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = pondsl(&["sweep", &cfg, "--set", "load=0.6"], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert_eq!(field(&stdout(&o), 0, "load"), "0.600000");
}

#[test]
fn sweep_writes_csv_and_gnuplot_script() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{MINIMAL}loads = 0.2,0.3\n"));
    let csv = dir.path().join("out.csv");
    let gp = dir.path().join("plot.gp");
    let o = pondsl(
        &[
            "sweep",
            &cfg,
            "--output",
            csv.to_str().unwrap(),
            "--gnuplot",
            gp.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
    let script = std::fs::read_to_string(&gp).unwrap();
    assert!(script.contains(csv.to_str().unwrap()));
    assert!(script.contains("set datafile separator"));
}

fn csv_after_comments(out: &str) -> Vec<Vec<String>> {
    out.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn schedule_of_one_cpe_is_self_consistent() {
    let o = pondsl(&["schedule", "--grants", "50000", "--tau", "0.00004"], None);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let rows = csv_after_comments(&out);
    assert_eq!(rows.len(), 1);
    let t: Vec<f64> = rows[0][3..8].iter().map(|v| v.parse().unwrap()).collect();
    // sigma <= alpha <= mu <= omega <= beta
    let (sigma, alpha, omega, mu, beta) = (t[0], t[1], t[2], t[3], t[4]);
    assert!(sigma <= alpha && alpha <= mu && mu <= omega && omega <= beta);
    let cycle: f64 = out
        .lines()
        .find(|l| l.contains(" T "))
        .and_then(|l| l.split(" T ").nth(1))
        .and_then(|s| s.trim_end_matches(" ns").parse().ok())
        .unwrap();
    assert!((cycle - beta - 40_000.0).abs() < 1e-3);
    assert!(out.contains("gaps 0, underruns 0"));
}

#[test]
fn schedule_reports_the_sort_permutation() {
    let o = pondsl(&["schedule", "--grants", "40000,20000,30000"], None);
    let out = stdout(&o);
    assert!(out.contains("PON order 1 2 0"));
    assert!(out.contains("applied permutation"));
    let sorted = stdout(&pondsl(&["schedule", "--grants", "20000,30000,40000"], None));
    assert!(!sorted.contains("applied permutation"));
    let mux = stdout(&pondsl(&["schedule", "--grants", "40000,20000", "--mode", "mux"], None));
    assert!(mux.contains("gaps 0, underruns 0"));
}

#[test]
fn order_of_symmetric_cpes_ties() {
    let o = pondsl(&["order", "--g1", "30000", "--g2", "30000"], None);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_after_comments(&stdout(&o));
    assert_eq!(rows[0][7], rows[0][8]);
    assert!(stdout(&o).contains("(tie)"));
    let o = pondsl(
        &["order", "--g1", "200000", "--g2", "30000", "--set", "delta=0,0.000001"],
        None,
    );
    let rows = csv_after_comments(&stdout(&o));
    assert_eq!(rows[0][3], "1000");
    assert_eq!(rows[0][9], "21");
}

#[test]
fn trace_dumps_the_requested_frames() {
    let o = pondsl(&["trace", "--frames", "25", "--set", "seed=3"], None);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("birth_ns,cpe,onu,bytes"));
    assert_eq!(out.lines().count(), 26);
    let births: Vec<u64> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(births.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(out, stdout(&pondsl(&["trace", "--frames", "25", "--set", "seed=3"], None)));
}

#[test]
fn help_lists_the_subcommands() {
    let o = pondsl(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8_lossy(&o.stderr).into_owned() + &stdout(&o);
    for cmd in ["run", "sweep", "schedule", "order", "trace"] {
        assert!(s.contains(cmd), "{cmd}");
    }
}

#[test]
fn shipped_default_config_spells_out_the_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");
    let text = std::fs::read_to_string(path).unwrap();
    let s = pondsl::cli::parse_config_text(&text).unwrap();
    for key in pondsl::cli::RUN_KEYS {
        assert!(s.contains_key(*key), "{key} missing");
    }
    let cfg = pondsl::cli::run_config(&s).unwrap();
    assert_eq!(cfg, pondsl::engine::RunConfig::default().validate().unwrap());
    // Gate messages are minimum-size frames.
    assert_eq!(cfg.net.pon_gate_time.as_nanos(), 206);
    assert_eq!(cfg.net.dsl_gate_time.as_nanos(), 6650);
}

#[test]
fn shipped_sweep_configs_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for name in ["no_flow_control", "pause", "gated"] {
        let path = format!("{dir}/{name}.conf");
        let o = pondsl(
            &["sweep", &path, "--set", "packets=10000", "--set", "O=2", "--loads", "0.3"],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
