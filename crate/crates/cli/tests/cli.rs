use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/demo.toml")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetcharge"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = std::fs::read_to_string(demo()).unwrap();
    assert!(text.contains(from));
    let path = dir.join("variant.toml");
    std::fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pipeline"], &demo(), dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "snapshot.csv",
        "convergence.csv",
        "prices.csv",
        "mechanisms.csv",
        "surge.csv",
        "timing.txt",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let mechanisms = std::fs::read_to_string(dir.path().join("mechanisms.csv")).unwrap();
    assert!(mechanisms.starts_with("mechanism,j_g,sigma_1,sigma_2,sigma_3,sigma_4,prices"));
    assert!(mechanisms.lines().any(|l| l.starts_with("rsg,")));
}

#[test]
fn simulate_exports_snapshot_and_demand() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate"], &demo(), dir.path());
    assert!(out.status.success());
    let snap = std::fs::read_to_string(dir.path().join("snapshot.csv")).unwrap();
    assert_eq!(
        snap.lines().next().unwrap(),
        "company,node,battery,needs_charge"
    );
    assert_eq!(snap.lines().count(), 1 + 60 + 50 + 40);
    let demand = std::fs::read_to_string(dir.path().join("demand.csv")).unwrap();
    assert_eq!(
        demand.lines().next().unwrap(),
        "time_s,origin_node,dest_node"
    );
}

#[test]
fn seed_override_changes_the_snapshot() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&["simulate"], &demo(), a.path());
    let out = Command::new(env!("CARGO_BIN_EXE_fleetcharge"))
        .args(["simulate", "--seed", "8", "--config"])
        .arg(demo())
        .arg("--out")
        .arg(b.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |d: &Path| std::fs::read(d.join("snapshot.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn stranded_fleet_exits_with_infeasibility_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "max_range_km = 80.0", "max_range_km = 2.0");
    let out = run(&["solve-upper"], &cfg, dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "beta = 1.0", "beta = 1.0\nbogus = 3");
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn grid_search_and_baseline_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["grid-search", "--resolution", "3", "--no-refine"],
        &demo(),
        dir.path(),
    );
    assert!(out.status.success());
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 81);
    let out = run(&["baseline", "--prices", "1,2,3,4"], &demo(), dir.path());
    assert!(out.status.success());
    let rows = std::fs::read_to_string(dir.path().join("mechanisms.csv")).unwrap();
    assert!(rows
        .lines()
        .any(|l| l.starts_with("custom,") && l.ends_with(",1 2 3 4")));
}
