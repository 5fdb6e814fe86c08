use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn evict(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evict")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "seed": 3,
  "synth": {"days": 100, "n_mean": [5,5,5,5,5,5,5,5,5,5,5,5,3,3,3,3,3,3,3,3,3,3,3,3]},
  "surrogate": {"samples": 140, "holdout": 0.0, "train": {"iterations": 40, "batch": 64}},
  "hjb": {"hidden": [8], "iterations": 5, "batch": 8, "horizon": 10},
  "sim": {"days": 16, "burn_in": 2, "replications": 2},
  "policies": [{"kind": "threshold"}, {"kind": "proposed", "kappa": 500.0}],
  "sweep": {"vehicles": [3, 4]}
}"#;

fn write_config(dir: &Path, text: &str) {
    std::fs::write(dir.join("evict.json"), text).unwrap();
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to.join(e.file_name()));
        } else {
            std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

/// Corpus, surrogate and G for h = 1..10, built once and copied per test.
fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_trained");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        write_config(&dir, SMALL);
        for args in [&["synth"][..], &["train-surrogate"]] {
            let o = evict(&dir, args);
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        }
        for h in 1..=10 {
            let o = evict(&dir, &["train-hjb", "--h", &h.to_string()]);
            assert_eq!(code(&o), 0, "h = {h}: {}", stderr(&o));
        }
        dir
    })
}

fn workspace() -> tempfile::TempDir {
    let t = tempfile::tempdir().unwrap();
    copy_dir(trained(), t.path());
    t
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: PathBuf) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn default_config_round_trips_through_the_loader() {
    let t = tempfile::tempdir().unwrap();
    let o = evict(t.path(), &["default-config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["model"]["h"], 4.0);
    assert_eq!(v["sim"]["days"], 2000);
    write_config(t.path(), &text);
    let o = evict(t.path(), &["report"]);
    // the config loads; the only complaint is the missing simulation output
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let o = evict(t.path(), &["synth"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("default-config"));
}

#[test]
fn unknown_fields_and_bad_values_are_config_errors() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), r#"{"seeed": 1}"#);
    assert_eq!(code(&evict(t.path(), &["synth"])), 2);
    write_config(t.path(), r#"{"model": {"h": -1}}"#);
    assert_eq!(code(&evict(t.path(), &["synth"])), 2);
    write_config(t.path(), r#"{"sim": {"days": 10, "burn_in": 5}}"#);
    assert_eq!(code(&evict(t.path(), &["synth"])), 2);
}

#[test]
fn missing_artifacts_name_the_producing_command() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), SMALL);
    for (cmd, producer) in [
        (&["estimate"][..], "evict synth"),
        (&["train-surrogate"], "evict synth"),
        (&["train-hjb"], "evict train-surrogate"),
        (&["simulate", "--policy", "threshold"], "evict synth"),
        (&["report"], "evict simulate"),
    ] {
        let o = evict(t.path(), cmd);
        assert_eq!(code(&o), 3, "{cmd:?}");
        assert!(stderr(&o).contains(producer), "{cmd:?}: {}", stderr(&o));
    }
    let w = workspace();
    std::fs::remove_file(w.path().join("out/g_h4.ckpt")).unwrap();
    let o = evict(w.path(), &["simulate", "--policy", "proposed"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("evict train-hjb --h 4"));
}

#[test]
fn synth_is_idempotent() {
    let w = workspace();
    let before = read(w.path().join("out/corpus.csv"));
    assert_eq!(code(&evict(w.path(), &["synth"])), 0);
    assert_eq!(before, read(w.path().join("out/corpus.csv")));
}

#[test]
fn estimate_recovers_the_corpus_parameters() {
    let w = workspace();
    assert_eq!(code(&evict(w.path(), &["estimate"])), 0);
    let e = json(w.path().join("out/estimates.json"));
    let rate = e["body"]["cancellation"]["rate"].as_f64().unwrap();
    assert!((rate - 0.008).abs() / 0.008 < 0.25, "{rate}");
    assert_eq!(e["body"]["arrivals"].as_array().unwrap().len(), 24);
}

#[test]
fn threshold_simulation_reports_a_finite_miss_rate() {
    let w = workspace();
    let o = evict(w.path(), &["simulate", "--policy", "threshold"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(w.path().join("out/sim_threshold.json"));
    assert!(r["body"]["mean"]["miss_pct"].as_f64().unwrap().is_finite());
    let csv = read(w.path().join("out/sim_threshold.csv"));
    assert!(csv.lines().any(|l| l.starts_with("threshold,miss_pct,")));
}

#[test]
fn every_artifact_carries_hash_seed_and_version() {
    let w = workspace();
    assert_eq!(code(&evict(w.path(), &["simulate", "--policy", "threshold"])), 0);
    let sim = json(w.path().join("out/sim_threshold.json"));
    let hash = sim["meta"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(sim["meta"]["seed"], 3);
    assert!(sim["meta"]["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    for csv in ["corpus.csv", "surrogate_samples.csv", "hjb_h4_log.csv", "sim_threshold.csv"] {
        let first = read(w.path().join("out").join(csv)).lines().next().unwrap().to_string();
        let meta: serde_json::Value = serde_json::from_str(first.trim_start_matches("# ")).unwrap();
        assert_eq!(meta["config_hash"], hash.as_str(), "{csv}");
    }
    let (_, meta) = evict::neural::Mlp::<f64>::load_with_meta(w.path().join("out/g_h4.ckpt")).unwrap();
    assert_eq!(meta.unwrap()["config_hash"], hash.as_str());
}

#[test]
fn report_is_byte_identical_across_runs() {
    let w = workspace();
    assert_eq!(code(&evict(w.path(), &["simulate"])), 0);
    assert_eq!(code(&evict(w.path(), &["report"])), 0);
    let a = std::fs::read(w.path().join("out/report_policies.csv")).unwrap();
    assert_eq!(code(&evict(w.path(), &["report"])), 0);
    let b = std::fs::read(w.path().join("out/report_policies.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("proposed_h4,miss_pct,") && text.contains("threshold,served_per_day,"));
}

#[test]
fn report_refuses_inputs_from_another_config() {
    let w = workspace();
    assert_eq!(code(&evict(w.path(), &["simulate", "--policy", "threshold"])), 0);
    write_config(w.path(), &SMALL.replace("\"seed\": 3", "\"seed\": 4"));
    let o = evict(w.path(), &["report"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sim_threshold.json"), "{}", stderr(&o));
}

#[test]
fn h_sweep_has_one_row_per_value_with_audit_columns() {
    let w = workspace();
    let o = evict(w.path(), &["sweep", "--param", "h"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(w.path().join("out/sweep_h.csv"));
    let mut lines = csv.lines().skip(1);
    let header = lines.next().unwrap();
    assert!(header.starts_with("h,policy,miss_pct,"));
    assert!(header.ends_with("miss_delta_prev,ci_overlap_prev"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    for (i, r) in rows.iter().enumerate() {
        assert!(r.starts_with(&format!("{},proposed,", i + 1)), "{r}");
    }
    assert_eq!(code(&evict(w.path(), &["report"])), 0);
    assert!(w.path().join("out/report_sweep_h.csv").is_file());
}

#[test]
fn capacity_sweep_covers_every_policy() {
    let w = workspace();
    let o = evict(w.path(), &["sweep", "--param", "vehicles"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(w.path().join("out/sweep_vehicles.json"));
    let rows = s["body"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[0]["miss_delta_prev"].is_null());
    assert!(rows[2]["miss_delta_prev"].is_number());
    let o = evict(w.path(), &["sweep", "--param", "vehicles", "--values", "2.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_training_exits_with_a_numeric_failure() {
    let w = workspace();
    let cfg = SMALL.replace(r#""horizon": 10}"#, r#""horizon": 10, "schedule": [[0, 1e150]]}"#);
    write_config(w.path(), &cfg);
    let good = std::fs::read(w.path().join("out/g_h7.ckpt")).unwrap();
    let o = evict(w.path(), &["train-hjb", "--h", "7"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    // the earlier checkpoint survives
    assert_eq!(std::fs::read(w.path().join("out/g_h7.ckpt")).unwrap(), good);
    assert!(w.path().join("out/hjb_h7.json").is_file());
}
