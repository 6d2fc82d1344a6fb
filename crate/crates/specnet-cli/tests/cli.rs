//! CLI behavior: exit codes, JSON-lines output, prediction equivalence,
//! calibration determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use specnet::config::TrainConfig;
use specnet::ingest::load_manifest;
use specnet::synth::{self, SynthSpec};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_specnet")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Shared fixture: a tiny corpus and a trained model, built once.
struct Fixture {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().to_path_buf();
        let spec = SynthSpec {
            templates: 2,
            pages_per_template: 30,
            noise: 0.3,
            seed: 17,
            node_scale: 1.0,
        };
        let splits = vec![
            ("train".to_string(), 20usize),
            ("val".to_string(), 6),
            ("test".to_string(), 4),
        ];
        synth::generate(&corpus, &spec, Some(&splits)).unwrap();
        let model = dir.path().join("model.bundle");
        let cfg = TrainConfig {
            seed: 5,
            epochs: 6,
            patience: 2,
            ..TrainConfig::default()
        };
        let pages = |name: &str| -> Vec<_> {
            load_manifest(corpus.join(name))
                .unwrap()
                .map(|p| p.unwrap())
                .collect()
        };
        let bundle = specnet::train::train(&cfg, &pages("train.jsonl"), &pages("val.jsonl")).unwrap();
        specnet::bundle::save_bundle(&bundle, &model).unwrap();
        Fixture {
            _dir: dir,
            corpus,
            model,
        }
    })
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn exit_code_matrix() {
    let fx = fixture();
    let model = p(&fx.model);
    let test_manifest = p(&fx.corpus.join("test.jsonl"));

    // Success.
    let out = run(&["predict", "--model", &model, "--manifest", &test_manifest]);
    assert_eq!(exit_code(&out), 0);

    // Model errors -> 2.
    let out = run(&["predict", "--model", "/nonexistent.bundle", "--manifest", &test_manifest]);
    assert_eq!(exit_code(&out), 2);
    let garbage = fx.corpus.join("garbage.bundle");
    std::fs::write(&garbage, b"not a bundle").unwrap();
    let out = run(&["eval", "--model", &p(&garbage), "--manifest", &test_manifest]);
    assert_eq!(exit_code(&out), 2);

    // Data errors -> 3.
    let missing = fx.corpus.join("missing.jsonl");
    let out = run(&["eval", "--model", &model, "--manifest", &p(&missing)]);
    assert_eq!(exit_code(&out), 3);
    let empty = fx.corpus.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["predict", "--model", &model, "--manifest", &p(&empty)]);
    assert_eq!(exit_code(&out), 3);

    // Config errors -> 4.
    let out = run(&["train", "--train", &test_manifest, "--val", &test_manifest, "--model", "/tmp/x.bundle", "--ablation", "bogus_variant"]);
    assert_eq!(exit_code(&out), 4);
    let out = run(&["predict", "--model", &model]);
    assert_eq!(exit_code(&out), 4);
    let out = run(&["totally-unknown-subcommand"]);
    assert_eq!(exit_code(&out), 4);
    // Conflicting flags rejected before any work.
    let out = run(&["predict", "--model", &model, "--manifest", &test_manifest, "--html", "x.html"]);
    assert_eq!(exit_code(&out), 4);
    let bad_cfg = fx.corpus.join("bad.toml");
    std::fs::write(&bad_cfg, "pool_ratio = 2.5").unwrap();
    let out = run(&["train", "--config", &p(&bad_cfg), "--train", &test_manifest, "--val", &test_manifest, "--model", "/tmp/x.bundle"]);
    assert_eq!(exit_code(&out), 4);

    // Numeric errors -> 5: an absurd learning rate blows the loss up.
    let hot_cfg = fx.corpus.join("hot.toml");
    std::fs::write(&hot_cfg, "initial_lr = 1e18\nepochs = 3\nlr_floor = 0.0").unwrap();
    let out_model = fx.corpus.join("hot.bundle");
    let train_manifest = p(&fx.corpus.join("train.jsonl"));
    let val_manifest = p(&fx.corpus.join("val.jsonl"));
    let out = run(&["train", "--config", &p(&hot_cfg), "--train", &train_manifest, "--val", &val_manifest, "--model", &p(&out_model)]);
    assert_eq!(exit_code(&out), 5, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predict_emits_valid_json_lines() {
    let fx = fixture();
    let out = run(&[
        "predict",
        "--model",
        &p(&fx.model),
        "--manifest",
        &p(&fx.corpus.join("test.jsonl")),
        "--threads",
        "2",
    ]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 8, "one report per test page");
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).expect("valid JSON line");
        for key in ["epsilon", "prob1", "prob2", "verdict", "latency_ms"] {
            assert!(v.get(key).is_some(), "missing key {key} in {line}");
        }
        let verdict = v["verdict"].as_u64().unwrap();
        assert!(verdict <= 1);
        for prob in ["prob1", "prob2"] {
            let p = v[prob].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn manifest_and_single_page_predictions_agree() {
    let fx = fixture();
    let manifest = fx.corpus.join("test.jsonl");
    let out = run(&["predict", "--model", &p(&fx.model), "--manifest", &p(&manifest)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let batch: Vec<serde_json::Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();

    // Re-predict the first page in single-page mode.
    let first_line = std::fs::read_to_string(&manifest).unwrap();
    let entry: serde_json::Value = serde_json::from_str(first_line.lines().next().unwrap()).unwrap();
    let html_path = fx.corpus.join(entry["html_path"].as_str().unwrap());
    let domain = entry["domain"].as_str().unwrap();
    let out = run(&[
        "predict",
        "--model",
        &p(&fx.model),
        "--html",
        &p(&html_path),
        "--domain",
        domain,
    ]);
    assert_eq!(exit_code(&out), 0);
    let single: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(single["verdict"], batch[0]["verdict"]);
    for key in ["prob1", "prob2", "epsilon"] {
        let a = single[key].as_f64().unwrap();
        let b = batch[0][key].as_f64().unwrap();
        assert!((a - b).abs() < 1e-6, "{key}: {a} vs {b}");
    }
}

#[test]
fn manifest_with_missing_file_reports_and_continues() {
    let fx = fixture();
    let manifest = fx.corpus.join("partial.jsonl");
    let good = std::fs::read_to_string(fx.corpus.join("test.jsonl")).unwrap();
    let mut lines: Vec<String> = good.lines().take(2).map(String::from).collect();
    lines.insert(1, r#"{"html_path": "pages/definitely_missing.html", "domain": "x.com", "label": 0}"#.to_string());
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let out = run(&["predict", "--model", &p(&fx.model), "--manifest", &p(&manifest)]);
    assert_eq!(exit_code(&out), 0, "skip policy keeps the run alive");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2, "two good pages classified");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("missing"), "diagnostic on stderr: {stderr}");
}

#[test]
fn calibrate_is_deterministic() {
    let fx = fixture();
    let val = p(&fx.corpus.join("val.jsonl"));
    let taus: Vec<String> = (0..2)
        .map(|i| {
            let out_path = fx.corpus.join(format!("cal{i}.bundle"));
            let out = run(&[
                "calibrate",
                "--model",
                &p(&fx.model),
                "--val",
                &val,
                "--out",
                &p(&out_path),
            ]);
            assert_eq!(exit_code(&out), 0);
            String::from_utf8(out.stdout).unwrap()
        })
        .collect();
    assert_eq!(taus[0], taus[1]);
}

#[test]
fn no_domain_bundle_accepts_null_domain_manifests() {
    let fx = fixture();
    // Train a no-domain variant quickly on the same corpus.
    let cfg_path = fx.corpus.join("nodomain.toml");
    std::fs::write(&cfg_path, "epochs = 4\npatience = 2\ndomain_features = false\n").unwrap();
    let model = fx.corpus.join("nodomain.bundle");
    let out = run(&[
        "train",
        "--config",
        &p(&cfg_path),
        "--train",
        &p(&fx.corpus.join("train.jsonl")),
        "--val",
        &p(&fx.corpus.join("val.jsonl")),
        "--model",
        &p(&model),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Null out every domain in the test manifest.
    let test = std::fs::read_to_string(fx.corpus.join("test.jsonl")).unwrap();
    let nulled: Vec<String> = test
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["domain"] = serde_json::Value::Null;
            v.to_string()
        })
        .collect();
    let nulled_path = fx.corpus.join("test_nodomain.jsonl");
    std::fs::write(&nulled_path, nulled.join("\n")).unwrap();

    let out = run(&["eval", "--model", &p(&model), "--manifest", &p(&nulled_path)]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("metrics JSON");
    assert_eq!(report["pages"].as_u64().unwrap(), 8);
}
