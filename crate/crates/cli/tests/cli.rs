use std::process::Command;

const CONFIG: &str = r#"
experiment = "converge-pod"

[problem]
epsilon = 0.25
T = 0.25
dt = 0.0125
fine_cells = 64

[potential]
kind = "three-scale"
m = 3

[offline]
coarse_cells = 16
samples = 8

[online]
samples = 16

[reference]
samples = 32

[sweep]
pod_modes = [1, 2]
"#;

fn msrb() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_msrb"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = msrb().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("converge-pod.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# experiment=converge-pod config_sha256="));
    assert_eq!(lines.next().unwrap(), "m_k,energy_ratio,error_l2,error_h1");
    assert_eq!(lines.count(), 2);
}

#[test]
fn overrides_change_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let ok = msrb().args(["run"]).arg(&cfg).args(["--seed", "9", "--samples", "8", "--out"]).arg(&out).status().unwrap();
    assert!(ok.success());
    let csv = std::fs::read_to_string(out.join("converge-pod.csv")).unwrap();
    assert!(csv.contains("seed=9"));
    assert!(csv.contains("samples = 8"));
}

#[test]
fn stages_reuse_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let stage = |name: &str| {
        let o = msrb().arg(name).arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(stage("basis-build").contains("built"));
    assert!(stage("basis-build").contains("cache hit"));
    assert!(stage("pod").contains("modes per node"));
    stage("solve");
    assert!(out.join("solve-summary.csv").exists());

    let o = msrb().arg("basis-build").arg(&cfg).args(["--epsilon", "0.5", "--out"]).arg(&out).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cache key mismatch"));
}

#[test]
fn invalid_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG.replace("m = 3", "m = 3\nwidth = 2")).unwrap();
    let o = msrb().arg("run").arg(&cfg).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("potential"));
    let o = msrb().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert!(!o.status.success());
}
