use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qkd_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkd-sim"))
        .args(args)
        .env_remove("QKD_SIM_THREADS")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const REFERENCE_KEYRATE: [&str; 11] = [
    "keyrate", "--nx", "1395", "--nz", "22300", "--ebx", "0.069", "--ebz", "0.065", "--raw", "34644",
];

#[test]
fn keyrate_reports_every_field() {
    let v = json(&qkd_sim(&REFERENCE_KEYRATE));
    for key in ["theta_x", "theta_z", "k_ec", "k_pr", "n_sift", "final_key_len", "rate_per_raw", "eps_ph", "flags"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["n_sift"], 23_695);
    assert_eq!(v["final_key_len"], 4212);
    let rate = v["rate_per_raw"].as_f64().unwrap();
    assert!((rate - 4212.0 / 34644.0).abs() < 1e-12);
    assert!(v["eps_ph"].as_f64().unwrap() <= 0.006);

    let asym = json(&qkd_sim(&[&REFERENCE_KEYRATE[..], &["--asymptotic"]].concat()));
    assert_eq!(asym["theta_x"], 0.0);
    assert!(asym["final_key_len"].as_u64().unwrap() > 4212);
}

#[test]
fn invalid_inputs_exit_with_config_code() {
    let bad_rate = qkd_sim(&["keyrate", "--nx", "10", "--nz", "10", "--ebx", "1.5", "--ebz", "0.1"]);
    assert_eq!(bad_rate.status.code(), Some(2));
    assert!(!bad_rate.stderr.is_empty());
    assert_eq!(qkd_sim(&["keyrate", "--nx", "10"]).status.code(), Some(2));
    assert_eq!(qkd_sim(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qkd_sim(&["run-e2e", "--bias-z", "1.5"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"config_version": 1, "unknown": true}"#).unwrap();
    assert_eq!(qkd_sim(&["run-e2e", "--config", path(&config)]).status.code(), Some(2));
    assert_eq!(
        qkd_sim(&["run-e2e", "--config", path(&dir.path().join("missing.json"))]).status.code(),
        Some(2)
    );
}

#[test]
fn thread_cap_is_validated() {
    let bin = env!("CARGO_BIN_EXE_qkd-sim");
    for bad in ["0", "many", "-3"] {
        let out = Command::new(bin).args(["table1"]).env("QKD_SIM_THREADS", bad).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let capped = Command::new(bin)
        .args(["optimize", "--raw", "34644", "--ebx", "0.069", "--ebz", "0.065"])
        .env("QKD_SIM_THREADS", "1")
        .output()
        .unwrap();
    let free = qkd_sim(&["optimize", "--raw", "34644", "--ebx", "0.069", "--ebz", "0.065"]);
    assert_eq!(json(&capped), json(&free));
}

#[test]
fn optimize_writes_the_bias_curve() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let v = json(&qkd_sim(&[
        "optimize", "--raw", "34644", "--ebx", "0.069", "--ebz", "0.065", "--curve-out", path(&curve),
    ]));
    for key in ["q_opt", "key_at_opt", "improvement_vs_unbiased_pct", "comparator_reference", "grid_q", "flags"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let grid_q = v["grid_q"].as_f64().unwrap();
    assert_eq!(v["comparator_reference"].as_u64().unwrap(), (grid_q * 1024.0).round() as u64);

    let text = fs::read_to_string(&curve).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "q,n_x,n_z,final_key_len");
    assert_eq!(lines.len(), 1 + 1025);
    let best = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(3).unwrap().parse::<u64>().unwrap())
        .max()
        .unwrap();
    assert!(v["key_at_opt"].as_u64().unwrap() >= best);
}

#[test]
fn table1_renders_both_formats() {
    let text = qkd_sim(&["table1", "--format", "text", "--asymptotic"]);
    assert_eq!(text.status.code(), Some(0));
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.starts_with("quantity"));
    let v = json(&qkd_sim(&["table1", "--raw", "1000000"]));
    assert!(v["rows"].as_array().unwrap().len() > 5);
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    fs::create_dir(&sim_dir).unwrap();
    let offset = -3_456_789i64;
    let sim = json(&qkd_sim(&[
        "simulate",
        "--out",
        path(&sim_dir),
        "--seed",
        "5",
        "--duration-s",
        "10",
        "--clock-offset-ps",
        &offset.to_string(),
    ]));
    assert_eq!(sim["comparator_reference"], 819);
    assert!(!sim_dir.join(".qkd-sim.lock").exists());

    let alice = sim_dir.join("alice.csv");
    let bob = sim_dir.join("bob.csv");
    let pairs = dir.path().join("pairs.csv");
    let hist = dir.path().join("hist.csv");
    let s = json(&qkd_sim(&[
        "sync", "--alice", path(&alice), "--bob", path(&bob), "--pairs-out", path(&pairs), "--histogram-out", path(&hist),
    ]));
    assert!((s["offset_ps"].as_i64().unwrap() - offset).abs() <= 100);
    assert_eq!(s["window_ps"], 2500);
    let matched = s["matched_pairs"].as_u64().unwrap();
    assert!(fs::read_to_string(&hist).unwrap().starts_with("bin_center_ps,count\n"));

    let bits_z = dir.path().join("z.csv");
    let sifted = json(&qkd_sim(&["sift", "--pairs", path(&pairs), "--bits-z-out", path(&bits_z)]));
    assert_eq!(sifted["raw_count"].as_u64().unwrap(), matched);
    let n_z = sifted["n_z"].as_u64().unwrap();
    assert_eq!(fs::read_to_string(&bits_z).unwrap().lines().count() as u64, n_z + 1);
    let e_bz = sifted["e_bz"].as_f64().unwrap();
    assert!((0.03..0.12).contains(&e_bz), "{e_bz}");

    let report = json(&qkd_sim(&["analyze", "--alice", path(&alice), "--bob", path(&bob)]));
    assert_eq!(report["analysis"]["sift"]["n_z"].as_u64().unwrap(), n_z);
    assert_eq!(report["analysis"]["offset_ps"], s["offset_ps"]);
}

#[test]
fn run_e2e_writes_artifacts_and_honours_the_lock() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run-e2e", "--out", path(dir.path()), "--seed", "3", "--duration-s", "10"];
    let report = json(&qkd_sim(&args));
    for name in ["alice.csv", "bob.csv", "truth.csv", "histogram.csv", "pairs.csv", "report.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);

    fs::write(dir.path().join(".qkd-sim.lock"), "").unwrap();
    assert_eq!(qkd_sim(&args).status.code(), Some(2));

    let text = qkd_sim(&["run-e2e", "--seed", "3", "--duration-s", "10", "--format", "text"]);
    assert_eq!(text.status.code(), Some(0));
    assert!(!text.stdout.is_empty());
}

#[test]
fn stage_failures_exit_with_stage_code() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "time_ps,channel\n").unwrap();
    fs::write(&b, "time_ps,channel\n").unwrap();
    let out = qkd_sim(&["sync", "--alice", path(&a), "--bob", path(&b)]);
    assert_eq!(out.status.code(), Some(3));

    fs::write(&b, "time_ps,channel\n5,0\n4,1\n").unwrap();
    assert_eq!(qkd_sim(&["analyze", "--alice", path(&a), "--bob", path(&b)]).status.code(), Some(3));
    assert_eq!(
        qkd_sim(&["sift", "--pairs", path(&dir.path().join("missing.csv"))]).status.code(),
        Some(3)
    );

    let dark = dir.path().join("dark.json");
    fs::write(&dark, r#"{"config_version": 1, "link_b": {"loss_db": "inf"}}"#).unwrap();
    let out = qkd_sim(&["run-e2e", "--config", path(&dark), "--duration-s", "1"]);
    assert_eq!(out.status.code(), Some(3));
}
