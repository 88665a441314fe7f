use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faas-scale-lab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("FAAS_LAB_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Columns of an evaluation CSV, parsed without the library.
fn columns(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column_mean(path: &Path, name: &str) -> f64 {
    let (header, rows) = columns(path);
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse::<f64>().unwrap()).sum::<f64>() / rows.len() as f64
}

fn eval_csv(dir: &Path, policy: &str, seed: u64) -> PathBuf {
    dir.join(format!("eval_{policy}_s{seed}.csv"))
}

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = lab(dir.path(), &["config"]);
    ok(&first);
    let path = dir.path().join("cfg.json");
    fs::write(&path, &first.stdout).unwrap();
    let second = lab(dir.path(), &["config", "--config", path.to_str().unwrap()]);
    ok(&second);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    for key in ["\"alpha\"", "\"r_min\"", "\"target_cpu\"", "\"rps_threshold\"", "\"lstm_hidden\"", "\"episode_windows\""] {
        assert!(text.contains(key), "dump lacks {key}");
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["train", "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("episodes"));
    let out = lab(dir.path(), &["baseline", "--policy", "rps", "--windows", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"workload": {"kind": "file", "path": "/no/such/trace.csv"}}"#).unwrap();
    let out = lab(dir.path(), &["config", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/trace.csv"));
    let out = lab(dir.path(), &["eval", "--agent", "ppo"]);
    assert_eq!(out.status.code(), Some(2), "missing checkpoint: {}", stderr(&out));
}

#[test]
fn training_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(&lab(dir.path(), &["train", "--agent", "rppo", "--episodes", "200", "--seed", "42"]));
    }
    let csv_a = fs::read(a.path().join("train_rppo_s42.csv")).unwrap();
    let csv_b = fs::read(b.path().join("train_rppo_s42.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(2) == Some("10")));
    assert_eq!(
        fs::read(a.path().join("rppo_s42.ckpt")).unwrap(),
        fs::read(b.path().join("rppo_s42.ckpt")).unwrap()
    );
}

#[test]
fn eval_writes_one_row_per_window() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab(dir.path(), &["train", "--agent", "ppo", "--episodes", "20", "--seed", "3"]));
    let out = lab(dir.path(), &["eval", "--agent", "ppo", "--seed", "3", "--windows", "200"]);
    ok(&out);
    let csv = eval_csv(dir.path(), "ppo", 3);
    let (header, rows) = columns(&csv);
    assert_eq!(header.join(","), "window,policy,tau,phi,q,n,c,m,action,reward,valid");
    assert_eq!(rows.len(), 200);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    // Reals carry exactly six fractional digits.
    let phi = &rows[0][3];
    assert_eq!(phi.split('.').nth(1).map(str::len), Some(6), "{phi}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let reported: f64 = stdout
        .split("mean throughput ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((reported - column_mean(&csv, "phi")).abs() < 5e-5, "{reported}");
}

#[test]
fn checkpoint_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab(dir.path(), &["train", "--agent", "ppo", "--episodes", "10", "--seed", "1"]));
    let ckpt = dir.path().join("ppo_s1.ckpt");
    let out = lab(dir.path(), &["eval", "--agent", "rppo", "--seed", "1", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let broken = dir.path().join("broken.ckpt");
    fs::write(&broken, bytes).unwrap();
    let out = lab(dir.path(), &["eval", "--agent", "ppo", "--seed", "1", "--checkpoint", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn rps_never_leaves_one_replica_on_the_default_workload() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab(dir.path(), &["baseline", "--policy", "rps", "--seed", "5"]));
    let csv = eval_csv(dir.path(), "rps", 5);
    let (header, rows) = columns(&csv);
    let n = header.iter().position(|h| h == "n").unwrap();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[n] == "1"));
}

#[test]
fn hpa_scales_up_fast_and_down_slowly_on_a_step_load() {
    let dir = tempfile::tempdir().unwrap();
    // Every ten-window block: warm-up window idle, five busy windows, four idle.
    let mut trace = String::from("window,count\n");
    for w in 0..501 {
        let busy = (1..=5).contains(&(w % 10));
        trace.push_str(&format!("{w},{}\n", if busy { 60 } else { 0 }));
    }
    let trace_path = dir.path().join("step.csv");
    fs::write(&trace_path, trace).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(r#"{{"workload": {{"kind": "file", "path": "{}"}}, "eval_windows": 100}}"#, trace_path.display()),
    )
    .unwrap();
    ok(&lab(dir.path(), &["baseline", "--policy", "hpa", "--config", cfg.to_str().unwrap()]));
    let (header, rows) = columns(&eval_csv(dir.path(), "hpa", 42));
    let n = header.iter().position(|h| h == "n").unwrap();
    let q = header.iter().position(|h| h == "q").unwrap();
    assert_eq!(rows.len(), 100);
    for episode in rows.chunks(10) {
        let n: Vec<u32> = episode.iter().map(|r| r[n].parse().unwrap()).collect();
        assert!(episode[..5].iter().all(|r| r[q] != "0"));
        assert!(episode[5..].iter().all(|r| r[q] == "0"));
        // Up within the first busy window, no step down in the 150 s of calm.
        assert!(n[0] > 1, "{n:?}");
        let peak = *n[..5].iter().max().unwrap();
        assert!(n[5..].iter().all(|&k| k == peak), "{n:?}");
    }
}

#[test]
fn compare_reports_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lab(d, &["baseline", "--policy", "hpa", "--seed", "9"]));
    ok(&lab(d, &["baseline", "--policy", "rps", "--seed", "9"]));
    let hpa = eval_csv(d, "hpa", 9);
    let rps = eval_csv(d, "rps", 9);

    let out = lab(d, &["compare", hpa.to_str().unwrap(), hpa.to_str().unwrap()]);
    ok(&out);
    let report = String::from_utf8(out.stdout).unwrap();
    let pair = report.lines().find(|l| l.starts_with("| hpa | hpa |")).unwrap();
    assert_eq!(pair, "| hpa | hpa | +0.00 | +0.00 | +0.00 | +0.00 |");

    let out = lab(d, &["compare", hpa.to_str().unwrap(), rps.to_str().unwrap()]);
    ok(&out);
    assert!(d.join("report.md").is_file());
    let report = String::from_utf8(out.stdout).unwrap();
    let cells: Vec<f64> = report
        .lines()
        .find(|l| l.starts_with("| hpa | rps |"))
        .unwrap()
        .split('|')
        .skip(3)
        .filter_map(|c| c.trim().parse().ok())
        .collect();
    // Recompute the deltas straight from the two CSVs.
    let (phi_h, phi_r) = (column_mean(&hpa, "phi"), column_mean(&rps, "phi"));
    let (n_h, n_r) = (column_mean(&hpa, "n"), column_mean(&rps, "n"));
    let served_tau = |p: &Path| {
        let (h, rows) = columns(p);
        let (t, f, q) = (
            h.iter().position(|x| x == "tau").unwrap(),
            h.iter().position(|x| x == "phi").unwrap(),
            h.iter().position(|x| x == "q").unwrap(),
        );
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r[f].parse::<f64>().unwrap() > 0.0 && r[q] != "0")
            .map(|r| r[t].parse().unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (t_h, t_r) = (served_tau(&hpa), served_tau(&rps));
    let expected = [
        (phi_h - phi_r) * 100.0,
        (phi_h - phi_r) / phi_r * 100.0,
        (n_h - n_r) / n_r * 100.0,
        (t_h - t_r) / t_r * 100.0,
    ];
    assert_eq!(cells.len(), 4);
    for (got, want) in cells.iter().zip(expected) {
        assert!((got - want).abs() <= 0.005 + 1e-9, "{got} vs {want}");
    }

    // Other seed: different evaluation arrivals, so a different workload hash.
    ok(&lab(d, &["baseline", "--policy", "rps", "--seed", "10"]));
    let out = lab(d, &["compare", hpa.to_str().unwrap(), eval_csv(d, "rps", 10).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("workload"), "{}", stderr(&out));

    ok(&lab(d, &["baseline", "--policy", "random", "--seed", "9", "--windows", "100"]));
    let out = lab(d, &["compare", hpa.to_str().unwrap(), eval_csv(d, "random", 9).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("windows"), "{}", stderr(&out));
}
