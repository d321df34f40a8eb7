use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbridge"))
        .args(args)
        .env("BRIDGE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn simulate_small(out: &Path, seed: &str) -> Output {
    sbridge(&[
        "simulate",
        "--correlation",
        "ar:0.8",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn missing_required_flag_is_a_config_error() {
    assert_eq!(code(&sbridge(&["fit"])), 2);
    assert_eq!(code(&sbridge(&["simulate"])), 2);
}

#[test]
fn empty_data_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sbridge(&["fit", "--data", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing input file"));
}

#[test]
fn bad_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&sbridge(&["reproduce", "--table", "4", "--out", out])), 2);
    assert_eq!(code(&sbridge(&["simulate", "--preset", "nope", "--out", out])), 2);
    assert_eq!(code(&sbridge(&["simulate", "--correlation", "ar:1.5", "--out", out])), 2);
    assert_eq!(code(&sbridge(&["simulate", "--case", "3", "--out", out])), 2);
    assert_eq!(code(&sbridge(&["--threads", "0", "simulate", "--out", out])), 2);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&simulate_small(&a, "9")), 0);
    assert_eq!(code(&simulate_small(&b, "9")), 0);
    assert_eq!(code(&simulate_small(&c, "10")), 0);
    for f in ["genotype.csv", "survival.csv", "gene_map.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("survival.csv")).unwrap(), fs::read(c.join("survival.csv")).unwrap());
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn fit_writes_selection_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("fit");
    assert_eq!(code(&simulate_small(&data, "3")), 0);
    let o = sbridge(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--gamma",
        "0.7",
        "--grid-size",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("selected model"));
    for f in ["selected.csv", "tuning.csv", "bic.tsv", "fit.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let selected = fs::read_to_string(out.join("selected.csv")).unwrap();
    assert!(selected.starts_with("gene,subtype,l2_norm\n"));
    assert!(selected.lines().count() > 1);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn glasso_fit_runs_per_subtype() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("fit");
    assert_eq!(code(&simulate_small(&data, "4")), 0);
    let o = sbridge(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "glasso",
        "--grid-size",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("genes selected").count(), 3);
}
