use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sste(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sste"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sste(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small simulated dataset in `dir/data`.
fn simulate(dir: &Path, weeks: usize) -> PathBuf {
    let data = dir.join("data");
    let weeks = weeks.to_string();
    ok(&[
        "simulate",
        "--n-users",
        "12",
        "--weeks",
        &weeks,
        "--seed",
        "7",
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "simulate",
            "--n-users",
            "8",
            "--weeks",
            "20",
            "--seed",
            "3",
            "--out",
            s(out),
        ]);
    }
    for name in [
        "checkins.csv",
        "friends.csv",
        "sites.csv",
        "ground_truth_events.jsonl",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn usage_errors_exit_1() {
    let out = sste(&["simulate", "--n-users", "0", "--out", "/tmp/never-written"]);
    assert_eq!(out.status.code(), Some(1));

    let out = sste(&[
        "detect",
        "--checkins",
        "c.csv",
        "--friends",
        "f.csv",
        "--epsilon-time",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon_time"));

    assert_eq!(
        sste(&["detect", "--no-such-flag", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(sste(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = sste(&[
        "detect",
        "--checkins",
        s(&missing),
        "--friends",
        s(&missing),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn detect_fit_predict_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 40);
    let (checkins, friends, sites) = (
        data.join("checkins.csv"),
        data.join("friends.csv"),
        data.join("sites.csv"),
    );
    let events = dir.path().join("events.jsonl");
    let stdout = ok(&[
        "detect",
        "--checkins",
        s(&checkins),
        "--friends",
        s(&friends),
        "--out",
        s(&events),
    ]);
    let n_events = std::fs::read_to_string(&events).unwrap().lines().count();
    assert!(n_events > 0);
    assert!(
        stdout.starts_with(&format!("{n_events} events")),
        "{stdout}"
    );

    let models = dir.path().join("models.jsonl");
    ok(&["fit", "--events", s(&events), "--out", s(&models)]);
    for line in std::fs::read_to_string(&models).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["user"].is_string());
    }

    let preds = dir.path().join("predictions.jsonl");
    ok(&[
        "predict",
        "--checkins",
        s(&checkins),
        "--friends",
        s(&friends),
        "--events",
        s(&events),
        "--sites",
        s(&sites),
        "--xi",
        "1.0",
        "--top-n",
        "4",
        "--out",
        s(&preds),
    ]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    for line in &lines {
        assert!(line["tau_hat"].is_i64());
        let ranked = line["predictions"].as_array().unwrap();
        assert!(!ranked.is_empty() && ranked.len() <= 4);
        for r in ranked {
            assert_eq!(r["g"], r["g_temporal"]);
        }
    }
}

#[test]
fn evaluate_report_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 100);
    let report = dir.path().join("report");
    ok(&[
        "evaluate",
        "--checkins",
        s(&data.join("checkins.csv")),
        "--friends",
        s(&data.join("friends.csv")),
        "--sites",
        s(&data.join("sites.csv")),
        "--proportions",
        "0.2,0.5,0.8",
        "--xi-values",
        "0,0.8,1",
        "--top-n-values",
        "1,5",
        "--out",
        s(&report),
    ]);

    let mse = std::fs::read_to_string(report.join("mse_by_proportion.csv")).unwrap();
    let rows: Vec<&str> = mse.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, p) in rows.iter().zip(["0.2", "0.5", "0.8"]) {
        assert!(row.starts_with(&format!("{p},")), "{row}");
    }

    let acc = std::fs::read_to_string(report.join("accuracy_by_xi_n.csv")).unwrap();
    let rows: Vec<Vec<f64>> = acc
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 3 * 2);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[3])));

    // traces are written for users with a long enough test segment at the trace proportion
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap())
            .unwrap();
    let traces = summary["traces"].as_object().unwrap();
    assert!(!traces.is_empty());
    let n_intervals = 100 - 1;
    let n_train = (0.2f64 * 100.0).ceil() as usize - 1;
    for (user, trace) in traces {
        let file = report.join(format!("convergence_{user}.csv"));
        let steps = std::fs::read_to_string(&file).unwrap().lines().count() - 1;
        assert_eq!(steps, trace.as_array().unwrap().len());
        assert!(
            (60..=n_intervals - n_train).contains(&steps),
            "{user}: {steps} steps"
        );
    }
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "n_users = 0\nweeks = 10\n").unwrap();
    let out = sste(&[
        "simulate",
        "--config",
        s(&conf),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let data = dir.path().join("y");
    ok(&[
        "simulate",
        "--config",
        s(&conf),
        "--n-users",
        "4",
        "--out",
        s(&data),
    ]);
    let checkins = std::fs::read_to_string(data.join("checkins.csv")).unwrap();
    assert!(checkins.lines().count() > 1);

    std::fs::write(&conf, "bogus_key = 1\n").unwrap();
    let out = sste(&["simulate", "--config", s(&conf)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}
