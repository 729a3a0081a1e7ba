use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rs-oracle"))
}

fn fixture_profile() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/reference_profile.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn rs-oracle")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_class_is_usage_error() {
    let o = run(&["calibrate", "--class", "md", "--out", "/nonexistent/p.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("md"));
}

#[test]
fn missing_profile_fails() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.json");
    let op = dir.path().join("op.json");
    std::fs::write(&obs, r#"{"subsystems":{}}"#).unwrap();
    std::fs::write(&op, r#"{"k1":["s1"]}"#).unwrap();
    let o = run(&["predict", "--profile", "/nonexistent/profile.json", "--obs", obs.to_str().unwrap(), "--op", op.to_str().unwrap()]);
    assert!(!o.status.success());
}

fn mg_row1(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    let obs = dir.join("obs.json");
    let op = dir.join("op.json");
    std::fs::write(
        &obs,
        r#"{"subsystems":{
            "s1":{"queue_class":"mm","rho":0.3,"arrivals":44926},
            "s2":{"queue_class":"mm","rho":0.3,"arrivals":44926},
            "s3":{"queue_class":"mg","rho":0.5,"arrivals":17998,"theta_ss":9.16},
            "s4":{"queue_class":"mg","rho":0.5,"arrivals":26928,"theta_ss":9.29}}}"#,
    )
    .unwrap();
    std::fs::write(&op, r#"{"k1":["s3","s4"]}"#).unwrap();
    (obs, op)
}

#[test]
fn predict_reference_row() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, op) = mg_row1(dir.path());
    let out = dir.path().join("report.json");
    let o = run(&[
        "predict",
        "--profile",
        fixture_profile().to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--op",
        op.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let phi = report["total_phi"].as_f64().unwrap();
    assert!((phi - 1.11).abs() / 1.11 < 0.05, "{phi}");
    let i_bar = report["total_i_bar"].as_f64().unwrap();
    assert!((i_bar - 325168.0).abs() / 325168.0 < 1e-3, "{i_bar}");
}

#[test]
fn predict_rejects_whole_model() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, _) = mg_row1(dir.path());
    let op = dir.path().join("all.json");
    std::fs::write(&op, r#"{"k1":["s1","s2","s3","s4"]}"#).unwrap();
    let o = run(&["predict", "--profile", fixture_profile().to_str().unwrap(), "--obs", obs.to_str().unwrap(), "--op", op.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("invalid simplification operation"), "{}", stderr(&o));
}

#[test]
fn predict_schema_error_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.json");
    let op = dir.path().join("op.json");
    std::fs::write(&obs, r#"{"subsystems":{"s1":{"queue_class":"mm","arrivals":10}}}"#).unwrap();
    std::fs::write(&op, r#"{"k1":["s1"]}"#).unwrap();
    let o = run(&["predict", "--profile", fixture_profile().to_str().unwrap(), "--obs", obs.to_str().unwrap(), "--op", op.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("rho"), "{}", stderr(&o));
}

#[test]
fn waitcurve_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(&[
            "waitcurve", "--class", "mm", "mg", "--grid-lo", "0.5", "--grid-hi", "0.9", "--grid-step", "0.4", "--reps", "2",
            "--seed", "9", "--warmup-days", "5", "--run-days", "20", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("# schema=waitcurve/1 seed=9"));
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn simplify_writes_network() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    std::fs::write(&net, two_stage_json()).unwrap();
    let op = dir.path().join("op.json");
    std::fs::write(&op, r#"{"k1":["s2"]}"#).unwrap();
    let out = dir.path().join("simple.json");
    let o = run(&[
        "simplify", "--network", net.to_str().unwrap(), "--op", op.to_str().unwrap(), "--warmup-days", "2", "--run-days", "10",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["subsystems"].as_array().unwrap().len(), 1);
    assert_eq!(v["holds"].as_array().unwrap().len(), 1);
}

fn two_stage_json() -> String {
    let spec = rs_oracle::network::build_archetype(rs_oracle::network::ArchetypeKind::TwoStage, rs_oracle::network::QueueClass::Mm, 0.5).unwrap();
    serde_json::to_string(&spec).unwrap()
}
