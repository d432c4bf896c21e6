use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "paths": { "corpus_dir": dir.join("corpus"), "output_dir": dir.join("out") },
        "synth": { "num_tracks": 10, "duration_s": 16.0 },
        "train": { "batch_pairs": 4, "total_steps": 4, "warmup_steps": 1, "peak_lr": 0.05 },
        "probe": { "hidden_units": 32, "batch_size": 8, "steps": 20 },
        "sweep": { "time_stretch_grid": [0.8, 1.0, 1.25], "pitch_shift_grid": [-2.0, 0.0, 2.0] },
        "metrics": { "k_grid": [1, 2, 4, 8] },
        "seed": 5
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn embedloc(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedloc"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .env_remove("EMBEDLOC_SEED")
        .output()
        .unwrap()
}

fn ok(cfg: &Path, args: &[&str]) -> String {
    let out = embedloc(cfg, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn prepared() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    ok(&cfg, &["synth"]);
    ok(&cfg, &["extract"]);
    (dir, cfg)
}

#[test]
fn full_pipeline_produces_stamped_artifacts() {
    let (dir, cfg) = prepared();
    let corpus = dir.path().join("corpus");
    let features: Vec<_> = fs::read_dir(corpus.join("features"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "emlt"))
        .collect();
    assert_eq!(features.len(), 10);
    assert_eq!(fs::read_to_string(corpus.join("manifest.jsonl")).unwrap().lines().count(), 10);

    for cmd in [
        &["train"][..],
        &["embed"],
        &["neighborhood"],
        &["retrieval"],
        &["sweep", "--kind", "time-stretch"],
        &["sweep", "--kind", "pitch-shift"],
        &["probe"],
        &["report"],
    ] {
        ok(&cfg, cmd);
    }
    let reports = dir.path().join("out/reports");
    let csv = fs::read_to_string(reports.join("neighborhood-none.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let report = read_json(&reports.join("neighborhood-none.json"));
    assert_eq!(report["body"]["rows"].as_array().unwrap().len(), 4);
    assert_eq!(report["body"]["variants"]["rmms_octaves"], "seed");

    let stamped = [
        reports.join("neighborhood-none.json"),
        reports.join("retrieval-none.json"),
        reports.join("sweep-time-stretch-none.json"),
        reports.join("sweep-pitch-shift-none.json"),
        reports.join("probe-none.json"),
        reports.join("summary.json"),
        corpus.join("synth.json"),
        corpus.join("features/extraction.json"),
    ];
    let hash = read_json(&stamped[0])["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for path in &stamped {
        let v = read_json(path);
        assert_eq!(v["seed"], 5, "{}", path.display());
        assert!(v["config_hash"].as_str().is_some(), "{}", path.display());
    }
    let ck = read_json(&dir.path().join("out/checkpoints/none.json"));
    assert_eq!(ck["config_hash"], hash.as_str());
    assert_eq!(ck["seed"], 5);
    let emb = read_json(&dir.path().join("out/embeddings/none.json"));
    assert_eq!(emb["provenance"]["config_hash"], hash.as_str());
    assert_eq!(emb["ids"].as_array().unwrap().len(), 10);

    let sweep = read_json(&reports.join("sweep-time-stretch-none.json"));
    let identity = &sweep["body"]["points"][1];
    assert_eq!(identity["factor"], 1.0);
    assert!(identity["mean"].as_f64().unwrap().abs() < 1e-6);
    let summary = fs::read_to_string(reports.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("probe,none,5,")));
}

#[test]
fn every_chain_gets_its_own_provenance() {
    let (dir, cfg) = prepared();
    let chains = ["none", "TS", "PS", "EQ", "TSPS", "TSPSEQ", "RRC"];
    let mut ids = std::collections::BTreeSet::new();
    for chain in chains {
        ok(&cfg, &["--chain", chain, "train"]);
        ok(&cfg, &["--chain", chain, "embed"]);
        let emb = read_json(&dir.path().join(format!("out/embeddings/{chain}.json")));
        assert_eq!(emb["provenance"]["chain"], chain);
        ids.insert(emb["provenance"]["checkpoint_id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.len(), 7);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let (dir, cfg) = prepared();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let set = format!("paths.output_dir=\"{}\"", out.display());
        ok(&cfg, &["--deterministic", "--chain", "TSPSEQ", "--set", &set, "train"]);
        ok(&cfg, &["--deterministic", "--chain", "TSPSEQ", "--set", &set, "embed"]);
        runs.push(out);
    }
    for rel in [
        "checkpoints/TSPSEQ.emlt",
        "checkpoints/TSPSEQ.json",
        "checkpoints/TSPSEQ-loss.csv",
        "embeddings/TSPSEQ.emlt",
        "embeddings/TSPSEQ.json",
    ] {
        assert_eq!(fs::read(runs[0].join(rel)).unwrap(), fs::read(runs[1].join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let (dir, cfg) = prepared();
    let out = Command::new(env!("CARGO_BIN_EXE_embedloc"))
        .args(["--config", cfg.to_str().unwrap(), "train"])
        .env("EMBEDLOC_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read_json(&dir.path().join("out/checkpoints/none.json"))["seed"], 77);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());

    let out = embedloc(&cfg, &["--set", "train.total_stepz=3", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.total_stepz"));

    let out = embedloc(&cfg, &["--set", "train.temperature=-1", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));

    let out = embedloc(&cfg, &["--chain", "TSRRC", "train"]);
    assert_eq!(out.status.code(), Some(2));

    let out = embedloc(&cfg, &["neighborhood"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    ok(&cfg, &["synth"]);
    ok(&cfg, &["extract"]);
    let out = embedloc(&cfg, &["--set", "train.peak_lr=1e300", "train"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
