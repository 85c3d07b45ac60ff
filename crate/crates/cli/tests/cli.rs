use std::path::Path;
use std::process::{Command, Output};

use prts::ModelName;
use prts_cli::commands::{evaluate, key_rate, row_channel};
use prts_cli::RunConfig;

fn prts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prts")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn keys(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn value(text: &str, key: &str) -> f64 {
    keys(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .1
        .parse()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Row {
    loss_db: f64,
    model: String,
    fields: Vec<f64>,
}

fn parse_csv(text: &str) -> (String, Vec<Row>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            Row {
                loss_db: cols[0].parse().unwrap(),
                model: cols[3].to_string(),
                fields: cols.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, c)| c.parse().unwrap()).collect(),
            }
        })
        .collect();
    (header, rows)
}

#[test]
fn threshold_single_photon() {
    let out = stdout(&prts(&["threshold", "--protocol", "single-photon"]));
    let t = value(&out, "threshold");
    assert!((t - 1.9492e-4).abs() < 1e-7, "{t}");
    assert!((value(&out, "eta_critical_numeric") / t - 1.0).abs() < 1e-9);
}

#[test]
fn threshold_decoy_reports_both_estimates() {
    let out = stdout(&prts(&["threshold"]));
    let analytic = value(&out, "eta_critical_analytic");
    let numeric = value(&out, "eta_critical_numeric");
    assert!(analytic < numeric);
    assert!((numeric / analytic - 1.0).abs() < 0.05);
    assert_eq!(value(&out, "threshold"), numeric);
}

#[test]
fn excessive_misalignment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "[device]\ne_d = 0.12\n");
    let out = prts(&["threshold", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("misalignment exceeds e_critical"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing").join("out.csv");
    let out = prts(&["rate-curve", "--out", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "[channel]\nloss = 30\n");
    assert_eq!(prts(&["threshold", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn single_point_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "one.cfg",
        "model = static\n[scan]\naxis = loss_db\nstart = 30\nstop = 30\nsteps = 1\n",
    );
    let (header, rows) = parse_csv(&stdout(&prts(&["rate-curve", "--config", &cfg])));
    assert_eq!(header, "loss_db,eta0,sigma,model,eta_T,pass_fraction,mean_eta,rate");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].loss_db, 30.0);
}

#[test]
fn pulse_rate_adds_a_column() {
    let out = stdout(&prts(&["rate-curve", "--pulse-rate-hz", "1e9"]));
    let (header, rows) = parse_csv(&out);
    assert!(header.ends_with(",rate_bps"));
    let f = &rows[0].fields;
    assert!((f[7] - f[6] * 1e9).abs() <= 1e-12 * f[7].abs());
}

fn crossing(rows: &[Row], model: &str, floor: f64) -> f64 {
    let pts: Vec<&Row> = rows.iter().filter(|r| r.model == model).collect();
    let i = pts.iter().position(|r| r.fields[6] < floor).expect("rate never drops below floor");
    assert!(i > 0);
    let (a, b) = (pts[i - 1], pts[i]);
    let (la, lb) = (a.fields[6].log10(), b.fields[6].max(1e-300).log10());
    let t = (la - floor.log10()) / (la - lb);
    a.loss_db + t * (b.loss_db - a.loss_db)
}

#[test]
fn decoy_curve_reaches_expected_losses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "curve.cfg",
        "model = static,simplified\n[channel]\nsigma = 0.6\n[scan]\naxis = loss_db\nstart = 20\nstop = 40\nsteps = 201\n",
    );
    let (_, rows) = parse_csv(&stdout(&prts(&["rate-curve", "--config", &cfg])));
    let st = crossing(&rows, "static", 1e-7);
    let si = crossing(&rows, "simplified", 1e-7);
    assert!((st - 29.5).abs() < 0.3, "static reaches 1e-7 at {st} dB");
    assert!((si - 34.4).abs() < 0.3, "simplified reaches 1e-7 at {si} dB");
}

#[test]
fn csv_rows_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let text = "model = static,simplified,ratewise,pulsewise\n[channel]\nsigma = 0.9\n\
                [scan]\naxis = loss_db\nstart = 24\nstop = 38\nsteps = 8\n";
    let path = write_config(dir.path(), "lib.cfg", text);
    let (_, rows) = parse_csv(&stdout(&prts(&["rate-curve", "--config", &path])));
    assert_eq!(rows.len(), 32);
    let cfg = RunConfig::parse(text).unwrap();
    let rate = key_rate(&cfg);
    for row in &rows {
        let model: ModelName = row.model.parse().unwrap();
        let lib_row = prts_cli::commands::CurveRow {
            loss_db: row.loss_db,
            eta0: row.fields[1],
            sigma: row.fields[2],
            model,
            eta_t: row.fields[3],
            pass_fraction: row.fields[4],
            mean_eta: row.fields[5],
            rate: row.fields[6],
        };
        let ch = row_channel(&lib_row).unwrap();
        let expect = evaluate(&cfg, rate.as_ref(), &ch, model, row.fields[3], &cfg.finite).unwrap();
        let got = row.fields[6];
        assert!(
            (got - expect.rate).abs() <= 1e-12 * expect.rate.abs().max(1e-30),
            "{} at {} dB: {got} vs {}",
            row.model,
            row.loss_db,
            expect.rate
        );
    }
}

#[test]
fn ratewise_tracks_simplified_under_strong_turbulence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rw.cfg",
        "model = simplified,ratewise\n[channel]\nsigma = 0.9\n[scan]\naxis = loss_db\nstart = 20\nstop = 36\nsteps = 9\n",
    );
    let (_, rows) = parse_csv(&stdout(&prts(&["rate-curve", "--config", &cfg])));
    for pair in rows.chunks(2) {
        let (s, r) = (pair[0].fields[6], pair[1].fields[6]);
        assert!(s <= r && (r - s) <= 0.1 * r, "{} dB: {s} vs {r}", pair[0].loss_db);
    }
}

#[test]
fn stream_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", "seed = 7\n[stream]\nn_windows = 20000\nworkers = 3\n");
    let a = stdout(&prts(&["stream", "--config", &cfg]));
    let b = stdout(&prts(&["stream", "--config", &cfg]));
    assert_eq!(a, b);
    let c = stdout(&prts(&["stream", "--config", &cfg, "--seed", "8"]));
    assert_ne!(a, c);
}

#[test]
fn stream_agrees_with_the_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "[channel]\nloss_db = 30\nsigma = 0.9\n[stream]\nn_windows = 200000\n\
         [scan]\naxis = eta_t\nstart = 0\nstop = 3e-3\nsteps = 31\n",
    );
    let scan = dir.path().join("scan.csv");
    let out = stdout(&prts(&["stream", "--config", &cfg, "--scan-out", scan.to_str().unwrap()]));
    let f = value(&out, "empirical_pass_fraction");
    let se = value(&out, "pass_fraction_se");
    let exact = value(&out, "analytic_pass_fraction");
    assert!((f - exact).abs() <= 4.0 * se, "{f} vs {exact} (se {se})");
    assert_eq!(value(&out, "peak_buffer_windows"), 1.0);

    let text = std::fs::read_to_string(&scan).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "eta_T,pass_fraction,mean_eta,rate,rate_se,analytic_rate");
    let pts: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(pts.len(), 31);
    let argmax = |col: usize| {
        pts.iter()
            .enumerate()
            .max_by(|a, b| a.1[col].total_cmp(&b.1[col]))
            .unwrap()
            .0
    };
    let (emp, ana) = (argmax(3), argmax(5));
    assert!(emp.abs_diff(ana) <= 2, "empirical argmax {emp}, analytic {ana}");
    assert_eq!(value(&out, "scan_argmax_eta_t"), pts[emp][0]);
}

#[test]
fn stream_export_writes_every_window() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", "[stream]\nn_windows = 500\n");
    let dump = dir.path().join("eta.txt");
    stdout(&prts(&["stream", "--config", &cfg, "--export-stream", dump.to_str().unwrap()]));
    let text = std::fs::read_to_string(dump).unwrap();
    assert_eq!(text.lines().count(), 500);
    assert!(text.lines().all(|l| l.parse::<f64>().is_ok_and(|v| v > 0.0)));
}

#[test]
fn finite_protocol_runs_end_to_end() {
    let out = stdout(&prts(&["threshold", "--protocol", "decoy-finite"]));
    let limit = value(&out, "eta_critical_finite_limit");
    assert!(limit > 0.0 && limit < value(&out, "threshold"));
    let csv = stdout(&prts(&["rate-curve", "--protocol", "decoy-finite", "--model", "static,simplified"]));
    let (_, rows) = parse_csv(&csv);
    assert_eq!(rows.len(), 2);
    let pulsewise = prts(&["rate-curve", "--protocol", "decoy-finite", "--model", "pulsewise"]);
    assert_eq!(pulsewise.status.code(), Some(2));
}
