use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use pibp_core::io::{read_binary_matrix, read_data_matrix};
use pibp_core::newick::parse_newick;
use pibp_core::tree::validate_tree;

fn pibp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pibp"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("PIBP_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) {
    let out = pibp(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file in the directory, with the manifest's timing section removed.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = if name == "manifest.json" {
            let mut m = manifest(dir);
            m.as_object_mut().unwrap().remove("timing");
            serde_json::to_vec(&m).unwrap()
        } else {
            std::fs::read(&path).unwrap()
        };
        files.insert(name, bytes);
    }
    files
}

fn simulate(dir: &Path) {
    ok(&["simulate", "--scenario", "sim1", "--n", "192", "--p", "30", "--seed", "7"], dir);
}

#[test]
fn simulate_writes_the_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let x = read_data_matrix(std::fs::File::open(dir.path().join("X.csv")).unwrap()).unwrap();
    assert_eq!((x.n(), x.p()), (192, 30));
    let z0 = read_binary_matrix(std::fs::File::open(dir.path().join("Z0.csv")).unwrap()).unwrap();
    assert_eq!((z0.n(), z0.k()), (192, 9));
    let m = manifest(dir.path());
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["master_seed"], 7);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
    assert!(m["timing"]["started"].is_string());
}

#[test]
fn simulate_rejects_indivisible_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = pibp(&["simulate", "--scenario", "sim1", "--n", "100", "--p", "5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));
}

#[test]
fn seed_from_environment_matches_flag() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "sim2", "--n", "20", "--p", "4", "--seed", "11"], a.path());
    let out = Command::new(env!("CARGO_BIN_EXE_pibp"))
        .args(["simulate", "--scenario", "sim2", "--n", "20", "--p", "4", "--out-dir"])
        .arg(b.path())
        .env("PIBP_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["X.csv", "Z0.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn build_tree_variants() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let z0 = dir.path().join("Z0.csv");
    let labels = dir.path().join("labels.csv");
    let trees = tempfile::tempdir().unwrap();
    let read = || {
        let text = std::fs::read_to_string(trees.path().join("tree.nwk")).unwrap();
        let t = parse_newick(text.trim(), false).unwrap();
        validate_tree(&t).unwrap();
        assert_eq!(t.leaf_count(), 192);
        t
    };
    ok(&["build-tree", "--input", z0.to_str().unwrap(), "--linkage", "complete", "--metric", "hamming"], trees.path());
    let clustered = read();
    assert!(clustered.shared_depth(0, 1) > clustered.shared_depth(0, 191));
    ok(&["build-tree", "--two-group", "0.8", "--partition", labels.to_str().unwrap()], trees.path());
    let grouped = read();
    assert!((grouped.shared_depth(0, 1) - 0.8).abs() < 1e-9);
    assert_eq!(grouped.shared_depth(0, 191), 0.0);
    ok(&["build-tree", "--input", z0.to_str().unwrap(), "--permute", "13"], trees.path());
    read();
    let m = manifest(trees.path());
    assert_eq!(m["settings"]["permute"], 13);
    assert_eq!(m["inputs"][0]["bytes"], std::fs::metadata(&z0).unwrap().len());
}

#[test]
fn fit_with_and_without_tree() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "sim1", "--n", "24", "--p", "10", "--seed", "3"], dir.path());
    let x = dir.path().join("X.csv");
    let z0 = dir.path().join("Z0.csv");
    let labels = dir.path().join("labels.csv");
    let fits = tempfile::tempdir().unwrap();
    let x_s = x.to_str().unwrap();
    ok(&["fit", "--x", x_s, "--steps", "40", "--burn-in", "10", "--truth", z0.to_str().unwrap()], fits.path());
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fits.path().join("map.json")).unwrap()).unwrap();
    assert!(map["f_norm"].as_f64().unwrap() >= 0.0);
    let lines = std::fs::read_to_string(fits.path().join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 30);
    let trace = std::fs::read_to_string(fits.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 41);

    let trees = tempfile::tempdir().unwrap();
    ok(&["build-tree", "--two-group", "0.8", "--partition", labels.to_str().unwrap()], trees.path());
    let tree = trees.path().join("tree.nwk");
    ok(&["fit", "--x", x_s, "--tree", tree.to_str().unwrap(), "--steps", "30", "--burn-in", "5", "--chains", "3"], fits.path());
    for c in 0..3 {
        assert!(fits.path().join(format!("samples-chain{c}.jsonl")).exists());
    }
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fits.path().join("map.json")).unwrap()).unwrap();
    assert!(map["chain"].as_u64().unwrap() < 3);

    let wrong = trees.path().join("wrong_n.nwk");
    std::fs::write(&wrong, "(1:1,2:1,3:1);").unwrap();
    let out = pibp(&["fit", "--x", x_s, "--tree", wrong.to_str().unwrap(), "--steps", "10", "--burn-in", "1"], fits.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("leaves"));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "sim1", "--n", "16", "--p", "5"], dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "steps = 25\nburn_in = 5\nthin = 2\n").unwrap();
    let fits = tempfile::tempdir().unwrap();
    let x = dir.path().join("X.csv");
    ok(&["fit", "--config", config.to_str().unwrap(), "--x", x.to_str().unwrap(), "--thin", "1"], fits.path());
    let m = manifest(fits.path());
    assert_eq!(m["settings"]["steps"], 25);
    assert_eq!(m["settings"]["thin"], 1);
    assert_eq!(m["settings"]["chains"], 1);
    let lines = std::fs::read_to_string(fits.path().join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pibp(&["experiment", "--scenario", "table9"], dir.path()).status.code(), Some(2));
    assert_eq!(pibp(&["fit", "--steps", "10"], dir.path()).status.code(), Some(2));
    let missing = pibp(&["fit", "--x", "/nonexistent/X.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn experiments_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["experiment", "--scenario", "table1", "--rows", "(16,10)", "--replicates", "2", "--steps", "30", "--burn-in", "10"],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().next().unwrap().starts_with("scenario,n,p,prior"));
    ok(&["experiment", "--scenario", "prior-mass", "--n", "6", "--draws", "2000"], dir.path());
    let csv = std::fs::read_to_string(dir.path().join("prior_mass.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let scaling = pibp(&["experiment", "--scenario", "scaling", "--p-grid", "10,20"], dir.path());
    assert_eq!(scaling.status.code(), Some(2));
}

fn repeat_is_identical(args: &[&str], setup: impl Fn(&Path)) {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--seed", "5"]);
    ok(&full, dir.path());
    let first = snapshot(dir.path());
    ok(&full, dir.path());
    assert_eq!(first, snapshot(dir.path()), "{args:?}");
}

#[test]
fn every_subcommand_is_reproducible() {
    repeat_is_identical(&["simulate", "--scenario", "sim2", "--n", "30", "--p", "6"], |_| {});
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "sim1", "--n", "16", "--p", "6", "--seed", "1"], dir.path());
    let z0 = dir.path().join("Z0.csv");
    let x = dir.path().join("X.csv");
    repeat_is_identical(&["build-tree", "--input", z0.to_str().unwrap(), "--permute", "3"], |_| {});
    repeat_is_identical(&["fit", "--x", x.to_str().unwrap(), "--steps", "30", "--burn-in", "5", "--chains", "2"], |_| {});
    repeat_is_identical(
        &["experiment", "--scenario", "table2", "--rows", "(20,5)", "--replicates", "2", "--steps", "20", "--burn-in", "5"],
        |_| {},
    );
}
