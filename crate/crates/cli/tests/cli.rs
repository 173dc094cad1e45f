use std::fs;
use std::process::Command;

fn bonsai() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bonsai"))
}

#[test]
fn lists_benchmarks() {
    let out = bonsai().arg("list-benchmarks").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["modified_sine", "vibration_absorber", "rosenbrock", "cliff", "polynomial", "quartic_pair"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn oracle_rejects_unknown_benchmark() {
    let out = bonsai().args(["oracle", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("vibration_absorber"), "{err}");
}

#[test]
fn oracle_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig2.csv");
    let out = bonsai().args(["oracle", "quartic_pair", "--grid", "200", "--out"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 200 + 1);
    assert!(String::from_utf8(out.stdout).unwrap().contains("worst case"));
}

#[test]
fn run_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "schema_version = 1\nbenchmark = \"quartic_pair\"\nstrategies = [\"Random\", \"ARBO-GP\"]\nseeds = [1, 2]\noutput_dir = \"out\"\n\
         [options]\nbudget = 8\n[options.acquisition]\nraw = 32\nstarts = 2\nsteps = 10\n",
    )
    .unwrap();
    let out = bonsai().args(["run", "--workers", "2", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = fs::read_dir(dir.path().join("out")).unwrap().count();
    assert_eq!(files, 4 + 1);
}

#[test]
fn invalid_config_fails_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "schema_version = 1\nbenchmark = \"quartic_pair\"\nstrategies = [\"BONSAI\"]\nseeds = [1]\noutput_dir = \"o\"\n[options]\nbudget = 2\n").unwrap();
    let out = bonsai().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("budget") && err.contains("5"), "{err}");

    fs::write(&cfg, "schema_version = 1\nstrategies = [\"BONSAI\"\n").unwrap();
    let out = bonsai().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("line"));
}

#[test]
fn worker_override_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "schema_version = 1\nbenchmark = \"quartic_pair\"\nstrategies = [\"Random\"]\nseeds = [1]\noutput_dir = \"o\"\n[options]\nbudget = 6\n").unwrap();
    let out = bonsai().env("BONSAI_WORKERS", "zero").args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("BONSAI_WORKERS"));
    let out = bonsai().env("BONSAI_WORKERS", "1").args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("1 workers"));
}

#[test]
fn regret_single_node_reduction_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.toml");
    fs::write(
        &cfg,
        "schema_version = 1\nproblem = \"single_node\"\ndesigns = 20\niterations = 12\nseeds = [0, 1]\noutput_dir = \"r\"\ncheckpoints = [6, 12]\n",
    )
    .unwrap();
    let out = bonsai().args(["regret", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("single-node reduction: pass"), "{text}");
    let agg = fs::read_to_string(dir.path().join("r/regret_aggregate.csv")).unwrap();
    assert!(agg.starts_with("schema,t,instantaneous,cumulative"));
    assert_eq!(agg.lines().count(), 13);
    assert!(dir.path().join("r/regret_seed1.csv").exists());
}
