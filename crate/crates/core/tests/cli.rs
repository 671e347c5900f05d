use std::path::Path;
use std::process::{Command, Output};

fn headfree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headfree"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = headfree(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_filter_classify_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("default.toml"), "[scenario]\nduration_s = 15.0\n").unwrap();
    for (name, seed) in [("s1", "1"), ("s2", "2"), ("s3", "3")] {
        ok(d, &["synth", "default.toml", "-o", name, "--seed", seed]);
    }
    ok(d, &["filter", "s3.csv", "-o", "s3.trace.csv"]);
    let trained: serde_json::Value =
        serde_json::from_str(&ok(d, &["train-rf", ".", "--leave-out", "s3", "-o", "m.bin"])).unwrap();
    assert_eq!(trained["recordings"], serde_json::json!(["s1", "s2"]));
    ok(d, &["classify", "s3.csv", "--model", "m.bin", "--trace", "s3.trace.csv", "-o", "s3.pred.csv"]);
    ok(d, &["clean", "s3.pred.csv", "--recording", "s3.csv", "-o", "s3.clean.csv"]);
    let report: serde_json::Value =
        serde_json::from_str(&ok(d, &["evaluate", "s3.labels.csv", "s3.clean.csv", "--json", "-"])).unwrap();
    let kappa = report["result"]["kappa"].as_f64().unwrap();
    assert!(kappa > 0.5, "kappa {kappa}");
}

#[test]
fn self_comparison_under_elc_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "-o", "a", "--duration", "5"]);
    for extra in [&[][..], &["--symmetric"][..]] {
        let mut args = vec!["evaluate", "a.labels.csv", "a.labels.csv", "--metric", "elc", "--json", "-"];
        args.extend_from_slice(extra);
        let report: serde_json::Value = serde_json::from_str(&ok(d, &args)).unwrap();
        assert_eq!(report["result"]["kappa"].as_f64(), Some(1.0));
    }
    let table = ok(d, &["evaluate", "a.labels.csv", "a.labels.csv", "--metric", "elc"]);
    assert!(table.starts_with("ELC kappa 1.0000"), "{table}");
}

#[test]
fn malformed_csv_exits_2_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("bad.csv"),
        "t_s,eye_x,eye_y,eye_z,head_qw,head_qx,head_qy,head_qz,confidence\n\
         0,0,0,1,1,0,0,0,1\n\
         0.0033333,0,zero,1,1,0,0,0,1\n",
    )
    .unwrap();
    let out = headfree(d, &["filter", "bad.csv", "-o", "t.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "parse");
    assert_eq!(err["line"], 3);
    assert!(err["message"].as_str().unwrap().contains("bad.csv"));
}

#[test]
fn other_failures_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = headfree(dir.path(), &["filter", "missing.csv", "-o", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}
