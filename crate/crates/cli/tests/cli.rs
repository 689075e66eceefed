use std::process::Command;

fn semiflow(args: &[&str], out: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_semiflow"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn laplace_roundtrip_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = semiflow(&["laplace-roundtrip"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("manifests.jsonl").exists());
}

#[test]
fn bad_parameter_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = semiflow(&["tail-fit", "--set", "map.beta=1.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("map.beta"));
}

#[test]
fn constant_roof_uni_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = semiflow(
        &["check-uni", "--set", "map.family=\"lsv\"", "--set", "map.a=1.0", "--set", "roof.value=2.0", "--set", "hypotheses.grid_n=50"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[experiment]\npipeline = \"laplace-roundtrip\"\nseed = 3\n").unwrap();
    let o = semiflow(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("manifest"));
}
