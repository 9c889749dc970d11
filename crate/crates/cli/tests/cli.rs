//! End-to-end runs of the `scenario-hg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scenario_hg::synthetic::{random_corpus, scenario_corpus, ScenarioCorpusParams, SyntheticCorpus, CENTER};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenario-hg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_corpus() -> SyntheticCorpus {
    scenario_corpus(&ScenarioCorpusParams {
        users: 24,
        pois: 40,
        trajectories_per_user: 8,
        hotels: 3,
        ..Default::default()
    })
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const TINY: [&str; 6] = ["--dim", "4", "--layers", "1", "--epochs", "1"];

#[test]
fn prepare_writes_nine_graphs_deterministically() {
    let root = tempfile::tempdir().unwrap();
    let raw = write(root.path(), "raw.tsv", &small_corpus().to_foursquare_tsv());
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for out in [&a, &b] {
        ok(&["prepare", "--dataset", p(&raw), "--format", "foursquare", "--out", p(out)]);
    }
    let names = |dir: &Path| {
        let mut v: Vec<String> = fs::read_dir(dir.join("graphs"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(names(&a).len(), 9);
    assert_eq!(names(&a), names(&b));
    for name in names(&a) {
        assert_eq!(
            fs::read(a.join("graphs").join(&name)).unwrap(),
            fs::read(b.join("graphs").join(&name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn gowalla_without_centers_exits_with_usage_code() {
    let root = tempfile::tempdir().unwrap();
    let raw = write(root.path(), "raw.tsv", &small_corpus().to_gowalla_tsv());
    let out = bin(&["prepare", "--dataset", p(&raw), "--format", "gowalla", "--out", p(&root.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--centers"));
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["prepare", "--format", "foursquare"]).status.code(), Some(2));
    assert_eq!(bin(&["train", "--prepared", "x", "--out", "y", "--lambda", "2"]).status.code(), Some(2));
    let missing = root.path().join("missing.tsv");
    let out = bin(&["prepare", "--dataset", p(&missing), "--format", "foursquare", "--out", p(&root.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_flags_override_config_file_and_no_split_logs_nothing() {
    let root = tempfile::tempdir().unwrap();
    let raw = write(root.path(), "raw.tsv", &small_corpus().to_foursquare_tsv());
    let prep = root.path().join("prep");
    ok(&["prepare", "--dataset", p(&raw), "--format", "foursquare", "--out", p(&prep)]);
    let config = write(root.path(), "train.cfg", "dim=6\nlayers=1\nepochs=2\nwarmup_epochs=0\nsim_window=1\nseed=5\n");
    let ckpt = root.path().join("ckpt");
    ok(&[
        "train", "--prepared", p(&prep), "--out", p(&ckpt), "--config", p(&config), "--dim", "4", "--set", "seed=9",
        "--no-split",
    ]);
    let saved = fs::read_to_string(ckpt.join("config.txt")).unwrap();
    for line in ["dim=4", "layers=1", "epochs=2", "seed=9", "no_split=true"] {
        assert!(saved.lines().any(|l| l == line), "missing {line} in\n{saved}");
    }
    assert_eq!(fs::read_to_string(ckpt.join("splits.tsv")).unwrap(), "");

    // eval finds the prepared directory through the checkpoint
    let out = ok(&["eval", "--checkpoint", p(&ckpt)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));
    assert!(ckpt.join("eval/report.json").exists());
    assert!(ckpt.join("eval/manifest.json").exists());
}

#[test]
fn incompatible_checkpoint_is_reported() {
    let root = tempfile::tempdir().unwrap();
    let raw = write(root.path(), "raw.tsv", &small_corpus().to_foursquare_tsv());
    let prep = root.path().join("prep");
    ok(&["prepare", "--dataset", p(&raw), "--format", "foursquare", "--out", p(&prep)]);
    let ckpt = root.path().join("ckpt");
    let mut args = vec!["train", "--prepared", p(&prep), "--out", p(&ckpt)];
    args.extend(TINY);
    ok(&args);
    fs::write(ckpt.join("format.txt"), "scenario-hg checkpoint v999\n").unwrap();
    let out = bin(&["eval", "--checkpoint", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
}

#[test]
fn untrained_checkpoint_ranks_at_random() {
    let root = tempfile::tempdir().unwrap();
    let n = 1200;
    let corpus = random_corpus(1000, n, 50, 3);
    let raw = write(root.path(), "raw.tsv", &corpus.to_foursquare_tsv());
    let prep = root.path().join("prep");
    ok(&["prepare", "--dataset", p(&raw), "--format", "foursquare", "--out", p(&prep)]);
    let ckpt = root.path().join("ckpt");
    ok(&["train", "--prepared", p(&prep), "--out", p(&ckpt), "--dim", "16", "--layers", "1", "--epochs", "0"]);
    let eval_dir = root.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ckpt), "--out", p(&eval_dir)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let overall = &report["overall"];
    let (acc1, count) = (overall["acc1"].as_f64().unwrap(), overall["count"].as_u64().unwrap());
    let random = 1.0 / n as f64;
    assert!(count >= 9000, "only {count} test trajectories");
    assert!(
        acc1 >= random / 3.0 && acc1 <= random * 3.0,
        "Acc@1 {acc1} not within 3x of {random}"
    );
}

#[test]
fn analyze_on_gowalla_skips_category_delta() {
    let root = tempfile::tempdir().unwrap();
    let raw = write(root.path(), "raw.tsv", &small_corpus().to_gowalla_tsv());
    let centers = write(root.path(), "centers.tsv", &format!("nyc\t{}\t{}\n", CENTER.0, CENTER.1));
    let prep = root.path().join("prep");
    ok(&[
        "prepare", "--dataset", p(&raw), "--format", "gowalla", "--centers", p(&centers), "--out", p(&prep),
    ]);
    let ckpt = root.path().join("ckpt");
    let mut args = vec!["train", "--prepared", p(&prep), "--out", p(&ckpt)];
    args.extend(TINY);
    ok(&args);
    let out = ok(&["analyze", "--checkpoint", p(&ckpt)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("notice: category delta skipped"));
    let dir = ckpt.join("analysis");
    assert!(dir.join("distance_hist.csv").exists());
    assert!(dir.join("distance_hist.svg").exists());
    assert!(!dir.join("category_delta.csv").exists());
    let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("category delta skipped"));
}
