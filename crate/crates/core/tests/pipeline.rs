use msrb::config::Config;
use msrb::experiments::{manifest, Runner, StageOutcome};
use msrb::Error;

const SMALL: &str = r#"
experiment = "converge-h"

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
energy = 0.99

[online]
samples = 16

[reference]
samples = 32

[sweep]
coarse_cells = [8, 16]
"#;

fn small() -> Config {
    Config::from_toml(SMALL).unwrap()
}

#[test]
fn basis_build_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let runner = Runner::with_cache(&cfg, dir.path().to_path_buf());
    assert_eq!(runner.basis_build(false).unwrap(), StageOutcome::Built);
    let before = std::fs::read(dir.path().join("snapshots.bin")).unwrap();
    assert_eq!(runner.basis_build(false).unwrap(), StageOutcome::Hit);
    assert_eq!(std::fs::read(dir.path().join("snapshots.bin")).unwrap(), before);

    let (outcome, modes) = runner.pod(false).unwrap();
    assert_eq!(outcome, StageOutcome::Built);
    assert_eq!(modes.rows.len(), 16);
    assert!(modes.column("m_k").unwrap().iter().all(|&m| m >= 1.0));
    assert_eq!(runner.pod(false).unwrap().0, StageOutcome::Hit);

    let tables = runner.solve().unwrap();
    let norm = tables[0].column("l2_norm").unwrap()[0];
    assert!(norm > 0.0 && norm < 0.75, "{norm}");
}

#[test]
fn stale_cache_is_rejected_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    Runner::with_cache(&cfg, dir.path().to_path_buf()).basis_build(false).unwrap();
    let mut other = small();
    other.problem.epsilon = 0.5;
    let runner = Runner::with_cache(&other, dir.path().to_path_buf());
    assert!(matches!(runner.basis_build(false), Err(Error::CacheMismatch { .. })));
    assert_eq!(runner.basis_build(true).unwrap(), StageOutcome::Built);
    assert_eq!(runner.basis_build(false).unwrap(), StageOutcome::Hit);
}

#[test]
fn pod_needs_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let err = Runner::with_cache(&cfg, dir.path().to_path_buf()).pod(false).unwrap_err();
    assert!(err.to_string().contains("basis-build"), "{err}");
}

#[test]
fn runs_are_bit_identical() {
    let cfg = small();
    let line = manifest(&cfg, None);
    let csv = |c: &Config| Runner::new(c).run().unwrap().iter().map(|t| t.to_csv(&line)).collect::<Vec<_>>();
    let a = csv(&cfg);
    assert_eq!(a, csv(&cfg));
    assert!(a[0].lines().nth(1).unwrap().starts_with("coarse_cells,H,error_l2,order_l2"));
    assert_eq!(a[0].lines().count(), 4);
}

#[test]
fn cached_offline_stage_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let fresh = Runner::new(&cfg).run().unwrap();
    let first = Runner::with_cache(&cfg, dir.path().to_path_buf()).run().unwrap();
    let second = Runner::with_cache(&cfg, dir.path().to_path_buf()).run().unwrap();
    assert_eq!(fresh[0].to_csv(""), first[0].to_csv(""));
    assert_eq!(first[0].to_csv(""), second[0].to_csv(""));
}

#[test]
fn config_errors_name_the_field() {
    let bad = SMALL.replace("fine_cells = 64", "fine_cells = 64\nbogus = 1");
    let e = Config::from_toml(&bad).unwrap_err().to_string();
    assert!(e.contains("problem"), "{e}");
    let bad = SMALL.replace("epsilon = 0.25", "epsilon = -0.25");
    let e = Config::from_toml(&bad).unwrap_err().to_string();
    assert!(e.contains("problem.epsilon"), "{e}");
}
