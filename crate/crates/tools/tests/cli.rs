use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amq-bench"))
}

#[test]
fn fpr_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fpr.json");
    let status = bench()
        .args(["fpr", "--slots-log2", "12", "--remainder-bits", "6", "--fill", "0.5"])
        .args(["--variant", "seq3,lp,bloom", "--probes", "20000", "--threads", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["experiment"], "fpr");
    assert_eq!(v["settings"]["slots_log2"], 12);
    assert_eq!(v["settings"]["variants"][1], "lp");
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert!(v["violations"].as_array().unwrap().is_empty());
}

#[test]
fn scaling_writes_csv_to_stdout() {
    let out = bench()
        .args(["scaling", "--slots-log2", "10", "--threads", "1,2", "--variant", "concurrent"])
        .args(["--format", "csv"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert!(lines[0].starts_with("variant,phase,threads"));
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1].starts_with("concurrent,insert,1,"));
}

#[test]
fn invariant_violation_exits_nonzero() {
    // a sequential filter cannot reach 99% fill
    let out = bench()
        .args(["fpr", "--slots-log2", "8", "--variant", "seq3", "--fill", "0.99", "--probes", "100"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("violation"));
}

#[test]
fn bad_arguments_are_rejected() {
    let out = bench().args(["fpr", "--fill", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bench().args(["fpr", "--variant", "cuckoo"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn growing_runs_all_variants() {
    let out = bench()
        .args(["growing", "--slots-log2", "8", "--segments", "4", "--segment-size", "400"])
        .args(["--probes", "5000", "--ops", "200", "--format", "csv"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for v in ["concurrent", "expandable", "expandable-ci"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{v},"))).count(), 12, "{v}");
    }
}
