use std::path::PathBuf;

use sll_core::experiment::*;
use sll_core::Error;

fn presets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

const TINY: &str = r#"
[run]
seed = 3
epochs = 1
batch_size = 8
output_dir = "tiny"

[dataset]
private_size = 32
aux_size = 16
test_size = 16

[model]
split_point = 2
"#;

fn tiny_with(extra: &str) -> toml::Value {
    toml::from_str(&format!("{TINY}\n{extra}")).unwrap()
}

fn opts(dir: &tempfile::TempDir) -> RunOptions {
    RunOptions { output_dir: Some(dir.path().to_path_buf()), threads: 1 }
}

#[test]
fn every_preset_parses_and_validates() {
    let mut n = 0;
    for entry in std::fs::read_dir(presets()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 11, "found {n} presets");
}

#[test]
fn sweep_presets_accept_their_documented_axes() {
    let cases = [
        ("split-sweep.toml", "model.split_point", "1,2,3,4"),
        ("aux-size.toml", "dataset.aux_size", "512,256,102"),
        ("noise-sweep.toml", "defense.sigma", "0,1,2,5"),
        ("dcor-sweep.toml", "defense.alpha", "0,0.2,0.5,0.8"),
        ("dp-sweep.toml", "defense.scale", "0.01,0.1,0.1667,0.5,1"),
    ];
    for (file, axis, values) in cases {
        let base: toml::Value = toml::from_str(&std::fs::read_to_string(presets().join(file)).unwrap()).unwrap();
        for v in parse_values(values).unwrap() {
            let mut doc = base.clone();
            set_path(&mut doc, axis, v).unwrap();
            ExperimentConfig::from_toml_value(doc).unwrap_or_else(|e| panic!("{file} {axis}: {e}"));
        }
    }
}

#[test]
fn unknown_keys_are_rejected() {
    for bad in ["[run]\nbogus = 1", "[model]\nsplit = 2", "[attack]\nsubstitute = \"vgg\"\nwhatever = true"] {
        let text = format!("{TINY}\n{bad}");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn invalid_values_are_rejected() {
    let cases = [
        ("model.split_point", toml::Value::Integer(0)),
        ("model.split_point", toml::Value::Integer(9)),
        ("run.epochs", toml::Value::Integer(0)),
        ("run.output_dir", toml::Value::String("../escape".into())),
        ("defense", toml::from_str::<toml::Table>("kind = \"noise\"\nsigma = -1.0").unwrap().into()),
        ("defense", toml::from_str::<toml::Table>("kind = \"dcor\"\nalpha = 1.5").unwrap().into()),
        ("dataset.aux_categories", toml::Value::Array(vec![])),
    ];
    for (path, value) in cases {
        let mut doc = tiny_with("");
        set_path(&mut doc, path, value).unwrap();
        assert!(ExperimentConfig::from_toml_value(doc).is_err(), "{path}");
    }
    assert!(ExperimentConfig::from_toml_value(tiny_with("[baselines]\nvariants = [\"no_disc\"]")).is_err());
}

#[test]
fn config_round_trips_and_hash_is_stable() {
    let cfg = ExperimentConfig::load(presets().join("fora-vs-ablation.toml")).unwrap();
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    let mut other = cfg.clone();
    other.run.seed += 1;
    assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
}

#[test]
fn value_lists() {
    assert_eq!(parse_values("1,2").unwrap(), vec![toml::Value::Integer(1), toml::Value::Integer(2)]);
    assert_eq!(parse_values("[[0, 1], [2]]").unwrap().len(), 2);
    assert_eq!(parse_values("0.5").unwrap(), vec![toml::Value::Float(0.5)]);
    assert!(parse_values("").is_err());
    assert!(parse_values("[]").is_err());
}

#[test]
fn set_path_refuses_bad_paths() {
    let mut doc = tiny_with("");
    assert!(set_path(&mut doc, "run..seed", toml::Value::Integer(1)).is_err());
    assert!(set_path(&mut doc, "run.seed.x", toml::Value::Integer(1)).is_err());
}

#[test]
fn no_attack_reports_task_accuracy_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_value(tiny_with("")).unwrap();
    let out = run_experiment(&cfg, &opts(&dir)).unwrap();
    assert_eq!(out.status, ExitStatus::Completed);
    assert!(out.report.task_accuracy.is_some());
    assert!(out.report.reconstruction.is_none() && out.report.feature_similarity.is_none());
    assert_eq!(out.report.config_hash, cfg.hash().unwrap());
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("transcript.jsonl").exists());
    assert!(!dir.path().join("recon.ppm").exists());
}

#[test]
fn small_attack_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[attack]\nsubstitute = \"vgg\"\nsubstitute_width = 4\ninverse_width = 4\ninverse_epochs = 1\n\n[baselines]\nvariants = [\"untrained\"]";
    let cfg = ExperimentConfig::from_toml_value(tiny_with(extra)).unwrap();
    let out = run_experiment(&cfg, &opts(&dir)).unwrap();
    assert_eq!(out.status, ExitStatus::Completed);
    let rec = out.report.reconstruction.as_ref().unwrap();
    assert!(rec.mean_mse.is_finite() && rec.mean_ssim <= 1.0);
    assert!(out.report.extra.contains_key("untrained.feature_cosine"));
    for f in ["report.json", "per_image.csv", "truth.ppm", "recon.ppm", "config.toml", "checkpoints/attack.slla"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_produces_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_with("[defense]\nkind = \"noise\"\nsigma = 0.0");
    let values = parse_values("0,1").unwrap();
    let (root, rows) = run_sweep(&base, "defense.sigma", &values, &opts(&dir)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.status == ExitStatus::Completed && r.task_accuracy.is_some()));
    let csv = std::fs::read_to_string(root.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SWEEP_CSV_HEADER);
    assert_eq!(csv.lines().count(), 3);
    assert!(run_sweep(&base, "defense.sigma", &[], &opts(&dir)).is_err());
}

#[test]
fn invalid_sweep_values_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_with("");
    let values = parse_values("2,99").unwrap();
    let (_, rows) = run_sweep(&base, "model.split_point", &values, &opts(&dir)).unwrap();
    assert_eq!(rows[0].status, ExitStatus::Completed);
    assert_eq!(rows[1].status, ExitStatus::Error);
    assert!(rows[1].error.is_some());
}

#[test]
fn hijack_stub_is_aborted_by_the_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = tiny_with("[detection]\nwarmup = 4\nwindow = 8\nthreshold = 0.05\noverlap_weight = 0.5");
    set_path(&mut doc, "dataset.private_size", toml::Value::Integer(128)).unwrap();
    set_path(&mut doc, "model.split_point", toml::Value::Integer(4)).unwrap();
    set_path(&mut doc, "model.server_behavior", toml::Value::String("hijack_stub".into())).unwrap();
    let out = run_experiment(&ExperimentConfig::from_toml_value(doc).unwrap(), &opts(&dir)).unwrap();
    assert_eq!(out.status, ExitStatus::DetectorAborted);
    assert_eq!(out.status.code(), 2);
    assert!(out.report.extra["gs.score"] < 0.05);
}

#[test]
fn readme_config_sketch_is_valid() {
    let readme = std::fs::read_to_string(presets().join("../README.md")).unwrap();
    let start = readme.find("```toml\n").unwrap() + 8;
    let len = readme[start..].find("```").unwrap();
    ExperimentConfig::from_toml_str(&readme[start..start + len]).unwrap();
}
