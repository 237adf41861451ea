use std::io::Write;
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn oboxkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oboxkit")).args(args).output().unwrap()
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_oboxkit"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn convert_obb_to_lgbb() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("boxes.json");
    std::fs::write(&input, r#"[{"cx": 0, "cy": 0, "w": 2, "h": 1, "theta": 0}]"#).unwrap();
    let out = oboxkit(&["convert", "--from", "obb", "--to", "lgbb", input.to_str().unwrap()]);
    assert_eq!(stdout_json(&out), json!([{"mu": [0.0, 0.0], "l": [0.625, 1.0, 0.625]}]));
}

#[test]
fn convert_round_trip_and_bad_records() {
    let input = r#"[{"cx": 3.5, "cy": -1.0, "w": 7, "h": 2, "theta": 0.3}]"#;
    let v = stdout_json(&with_stdin(&["convert", "--to", "gbb", "--roundtrip"], input));
    let back = &v[0]["roundtrip"];
    assert!((back["theta"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert!((back["w"].as_f64().unwrap() - 7.0).abs() < 1e-9);

    let v = stdout_json(&with_stdin(&["convert", "--from", "gbb", "--to", "obb"], r#"[{"mu": [0, 0], "g": [1, 5, 1]}]"#));
    assert_eq!(v[0]["index"], 0);
    assert!(v[0]["error"].is_string());
}

#[test]
fn convert_empty_array() {
    let out = with_stdin(&["convert"], "[]");
    assert_eq!(stdout_json(&out), json!([]));
}

#[test]
fn profile_csv_header_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = oboxkit(&["profile", "--samples", "64", "--seed", "9", "--sizes", "1,10,100", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next(), Some("size,loss_kind,mean_abs_grad,p95_abs_grad"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn boundary_and_trial_are_deterministic() {
    let cfg = r#"{"trials": 3, "max_steps": 60, "eps_steps": 2}"#;
    let a = oboxkit(&["boundary", "--config", cfg, "--seed", "4"]);
    let b = oboxkit(&["boundary", "--config", cfg, "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("kind,eps,"));

    let a = oboxkit(&["trial", "--repr", "xywht", "--geometry", "boundary", "--config", cfg, "--seed", "2"]);
    let b = oboxkit(&["trial", "--repr", "xywht", "--geometry", "boundary", "--config", cfg, "--seed", "2"]);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v.as_array().unwrap().len(), 3);
    assert_eq!(v[0]["repr_kind"], "xywht");
}

#[test]
fn rrc_identity_is_exact() {
    let v = stdout_json(&oboxkit(&["rrc", "identity", "--config", r#"{"C": 8, "K": 8, "M": 4}"#]));
    assert_eq!(v["max_abs_error"], json!(0.0));
}

#[test]
fn rrc_ring_contained_and_writes_mask() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ring.json");
    let o = oboxkit(&["rrc", "ring", "--config", r#"{"C": 16, "K": 16, "M": 4, "radius": 16}"#, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["contained"], json!(true));
    let pgm = std::fs::read(dir.path().join("ring.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
}

#[test]
fn rrc_flops_grow_with_k() {
    let total = |k: u32| {
        let v = stdout_json(&oboxkit(&["rrc", "flops", "--config", &format!(r#"{{"C": 64, "K": {k}, "M": 8}}"#)]));
        v["macs"]["total"].as_u64().unwrap()
    };
    assert!(total(32) < total(64));
}

#[test]
fn rrc_roundtrip_reports_noise_failure() {
    let o = oboxkit(&["rrc", "roundtrip", "--config", r#"{"C": 8, "K": 8, "M": 4}"#]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["smooth_max_error"].as_f64().unwrap() < 1e-3);
    let failure: Value = serde_json::from_slice(&o.stderr).unwrap();
    let msgs = failure["failures"].as_array().unwrap();
    assert_eq!(msgs.len(), 1);
    assert!(msgs[0].as_str().unwrap().starts_with("white-noise"));
}

#[test]
fn bad_config_names_field() {
    let o = oboxkit(&["rrc", "ring", "--config", r#"{"K": 6, "M": 4}"#]);
    assert_eq!(o.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["field"], "M");

    let o = oboxkit(&["trial", "--config", r#"{"lr": -1}"#]);
    assert_eq!(o.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["field"], "lr");

    let o = oboxkit(&["profile", "--kinds", "kld,mse"]);
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["field"], "kinds");
}
