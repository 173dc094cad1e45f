use std::fs;
use std::path::Path;

use bonsai_core::bench::make_benchmark;
use bonsai_core::campaign::{
    cmd_oracle, run_campaign, ExperimentConfig, ProblemFile, RegretConfig, RUN_CSV_SCHEMA,
};
use bonsai_core::driver::Strategy;
use bonsai_core::Error;

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(
        r#"
        schema_version = 1
        benchmark = "quartic_pair"
        strategies = ["BONSAI", "Random"]
        seeds = [3, 4]
        output_dir = "unused"
        [options]
        budget = 9
        recommend_every = 2
        [options.acquisition]
        raw = 64
        starts = 2
        steps = 20
        features = 128
        "#,
    )
    .unwrap();
    c.output_dir = out.to_path_buf();
    c
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["modified_sine.toml", "vibration_absorber.toml", "quartic_pair.toml"] {
        let c = ExperimentConfig::load(&configs().join(name)).unwrap();
        c.validate(&c.problem().unwrap()).unwrap();
    }
    for name in ["regret_chain.toml", "regret_single_node.toml"] {
        RegretConfig::load(&configs().join(name)).unwrap();
    }
}

#[test]
fn config_round_trip_is_a_fixed_point() {
    let c = ExperimentConfig::load(&configs().join("modified_sine.toml")).unwrap();
    let text = c.to_toml().unwrap();
    let again = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(again, c);
    assert_eq!(again.to_toml().unwrap(), text);
}

#[test]
fn validation_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    let p = c.problem().unwrap();
    c.options.budget = 4;
    match c.validate(&p) {
        Err(Error::Config(m)) => assert!(m.contains("initialization size 5"), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut c = small_config(dir.path());
    c.seeds = vec![];
    assert!(matches!(c.validate(&p), Err(Error::Config(_))));
    let mut c = small_config(dir.path());
    c.seeds = vec![1, 1];
    assert!(matches!(c.validate(&p), Err(Error::Config(_))));
    let bad = "schema_version = 1\nbenchmark = \"quartic_pair\"\nstrategies = [\"BONSAI\"]\nseeds = [1]\noutput_dir = \"o\"\nbudgte = 3\n";
    match ExperimentConfig::from_toml_str(bad) {
        Err(Error::Config(m)) => assert!(m.contains("budgte") && m.contains("line"), "{m}"),
        other => panic!("{other:?}"),
    }
    let regret = "schema_version = 1\nproblem = \"chain\"\ndesigns = 10\niterations = 5\nseeds = []\noutput_dir = \"o\"\ncheckpoints = [5]\n";
    assert!(matches!(RegretConfig::from_toml_str(regret), Err(Error::Config(_))));
}

#[test]
fn problem_file_matches_builtin_quartic_pair() {
    let file = ProblemFile::load(&configs().join("quartic_pair_problem.toml")).unwrap().build().unwrap();
    let builtin = make_benchmark("quartic_pair").unwrap().problem;
    assert_eq!(file.set.len(), builtin.set.len());
    for (a, b) in file.set.points.iter().zip(&builtin.set.points) {
        assert!((a[0] - b[0]).abs() < 1e-12);
    }
    assert_eq!(file.bounds, builtin.bounds);
    for x in [-2.0, -0.3, 1.1, 2.235] {
        for w in &builtin.set.points {
            let a = file.objective(&[x], w).unwrap();
            let b = builtin.objective(&[x], w).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{x} {w:?}: {a} vs {b}");
        }
    }
}

#[test]
fn campaign_writes_deterministic_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s1 = run_campaign(&small_config(a.path()), 2).unwrap();
    run_campaign(&small_config(b.path()), 1).unwrap();
    assert_eq!(s1.failed_cells, 0);
    let mut csvs: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs.len(), 4);
    assert!(a.path().join("summary.json").exists());
    for name in &csvs {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
        let text = String::from_utf8(x).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("schema,iteration,stage,x1,w1,w_index,h_f1,h_f2,h_g,objective,recommendation,rec_x1,worst_case"));
        assert_eq!(text.lines().count(), 1 + 9);
        assert!(text.lines().skip(1).all(|l| l.starts_with(RUN_CSV_SCHEMA)));
    }
    let bonsai = s1.strategy(Strategy::Bonsai).unwrap();
    assert_eq!(bonsai.seeds.len(), 2);
    assert!(bonsai.final_ci_half_width >= 0.0);
}

#[test]
fn oracle_command_reports_optimum_row() {
    let (r, csv) = cmd_oracle("rosenbrock", None).unwrap();
    assert!((r.x[0] - 1.0).abs() <= 0.02);
    let last = csv.lines().last().unwrap();
    assert!(last.ends_with(",true"), "{last}");
    match cmd_oracle("rosenbrok", None) {
        Err(e) => assert!(e.to_string().contains("modified_sine")),
        Ok(_) => panic!("unknown benchmark accepted"),
    }
}
