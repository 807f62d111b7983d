use std::path::Path;
use std::process::{Command, Output};

fn tvgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvgraph"))
        .args(args)
        .env_remove("TVGRAPH_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a `rows x cols` CSV of deterministic, non-constant values.
fn write_csv(p: &Path, rows: usize, cols: usize) {
    let mut body: String = (1..=cols).map(|c| format!("n{c}")).collect::<Vec<_>>().join(",");
    body.push('\n');
    for r in 0..rows {
        let cells: Vec<String> = (0..cols)
            .map(|c| format!("{}", ((r * 7 + c * 13) % 17) as f64 / 5.0 + (r as f64 * 0.37 + c as f64).sin()))
            .collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    std::fs::write(p, body).unwrap();
}

#[test]
fn missing_model_prints_usage() {
    let o = tvgraph(&["synth", "--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = tvgraph(&["synth", "--model", "sem", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_hyperparameter_fails_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tvgraph(&["synth", "--model", "sbm", "--lambda1", "0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn zero_row_csv_is_a_clean_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "a,b,c\n").unwrap();
    let out = dir.path().join("out");
    let o = tvgraph(&["run", "--model", "sem", "--csv", path(&csv), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no data rows"));
    assert!(!out.exists(), "no partial outputs");
}

#[test]
fn bad_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    write_csv(&csv, 10, 3);
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text = text
        .lines()
        .enumerate()
        .map(|(k, l)| if k == 7 { "1,oops,2".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&csv, text).unwrap();
    let o = tvgraph(&["run", "--model", "sem", "--csv", path(&csv), "--out", path(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("row 7") && err.contains("column n2"), "{err}");
}

#[test]
fn stock_shaped_file_streams_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("stocks.csv");
    write_csv(&csv, 504, 7);
    let out = dir.path().join("out");
    let o = tvgraph(&[
        "run", "--model", "sem", "--lambda", "0.05", "--csv", path(&csv), "--standardize", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 504);
}

#[test]
fn snapshots_write_one_edge_list_each() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ecog.csv");
    write_csv(&csv, 2000, 6);
    let out = dir.path().join("out");
    let o = tvgraph(&[
        "run", "--model", "sbm", "--lambda1", "1", "--lambda2", "10", "--csv", path(&csv), "--standardize",
        "--snapshot", "1500", "--snapshot", "1800", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for t in [1500, 1800] {
        let text = std::fs::read_to_string(out.join(format!("snapshot_t{t}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,weight");
        assert_eq!(lines.len(), 1 + 15);
        assert!(lines[1].starts_with("2,1,"));
    }
    let manifest = std::fs::read_to_string(out.join("MANIFEST.sha256")).unwrap();
    assert!(manifest.contains("snapshot_t1500.csv") && manifest.contains("snapshot_t1800.csv"));
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sweep cell\nmodel = sem\nlambda=0.2\nn=6\nt=50\nseed=4\noracle=true\n").unwrap();
    let a = dir.path().join("a");
    let o = tvgraph(&["synth", "--config", path(&cfg), "--t", "30", "--out", path(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_to_string(a.join("run.txt")).unwrap();
    assert!(run.contains("lambda=0.2") && run.contains("t=30") && run.contains("seed=4"), "{run}");
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 31);

    std::fs::write(&cfg, "model=sem\nno_such_key=1\n").unwrap();
    let o = tvgraph(&["synth", "--config", path(&cfg), "--out", path(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_tvgraph"))
            .args(["synth", "--model", "ggm", "--n", "5", "--t", "40", "--seed", seed, "--out", path(out)])
            .env("TVGRAPH_SEED", "11")
            .output()
            .unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("1", &a).status.success());
    assert!(run("2", &b).status.success());
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
    assert!(std::fs::read_to_string(a.join("run.txt")).unwrap().contains("seed=11"));
}

#[test]
fn rank_one_variant_runs_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = tvgraph(&[
        "synth", "--model", "sem", "--variant", "pc-1", "--n", "5", "--t", "30", "--out", path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn diagnose_static_drift_vanishes_and_reports_c0() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diag");
    let o = tvgraph(&[
        "diagnose", "--model", "sem", "--lambda", "0.05", "--scenario", "static", "--n", "6", "--t", "400",
        "--infinite-memory", "--alpha", "0.002", "--beta", "0.002", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let d_col = header.iter().position(|h| *h == "d").unwrap();
    let d: Vec<f64> = lines.map(|l| l.split(',').nth(d_col).unwrap().parse().unwrap()).collect();
    // Under infinite memory the drift of the optimum decays like 1/t.
    let early = d[..20].iter().cloned().fold(0.0, f64::max);
    let late = d[300..].iter().cloned().fold(0.0, f64::max);
    assert!(late < 0.1 * early, "late {late} vs early {early}");
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("c0_estimate="));
    assert!(String::from_utf8_lossy(&o.stdout).contains("bound violations"));
}
