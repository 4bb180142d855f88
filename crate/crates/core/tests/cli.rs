use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wsram::estimators::EstimatorTag;
use wsram::model::checkpoint::Checkpoint;
use wsram::training::{diagnose, model_shape, DataKind, ExperimentConfig, ExperimentData};

fn wsram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsram"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn toy_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.toml");
    let body = format!(
        "seed = 2\nthreads = 1\noutput_dir = {:?}\n[data]\nkind = \"toy\"\n[model]\nglimpses = 2\nbottom_width = 6\n\
         top_width = 6\ninference_width = 6\n[train]\nbatch_size = 4\nsamples = 3\nupdates = 20\nlr = 0.01\n\
         [metrics]\nflush_every = 10\nprobe_resamples = 4\n",
        dir.join("out")
    );
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn gen_data_is_deterministic_and_handles_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    for name in ["a.bin", "b.bin"] {
        let o = wsram(&[
            "gen-data",
            "--glyphs",
            "--canvas",
            "32",
            "--count",
            "300",
            "--seed",
            "4",
            "-o",
            &p(name),
        ]);
        assert!(o.status.success(), "{}", text(&o));
        assert!(text(&o).contains("class histogram"));
    }
    assert_eq!(fs::read(p("a.bin")).unwrap(), fs::read(p("b.bin")).unwrap());

    let o = wsram(&["gen-data", "--glyphs", "--count", "0", "-o", &p("empty.bin")]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(
        wsram::glimpse::Dataset::read(Path::new(&p("empty.bin"))).unwrap().len(),
        0
    );
}

#[test]
fn bad_idx_magic_is_an_input_format_error() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"] {
        fs::write(dir.path().join(name), [0u8; 16]).unwrap();
    }
    let out = dir.path().join("d.bin");
    let o = wsram(&[
        "gen-data",
        "--mnist-dir",
        dir.path().to_str().unwrap(),
        "--count",
        "1",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o).contains("train-images-idx3-ubyte"), "{}", text(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_config_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let o = wsram(&["train", "-c", config.to_str().unwrap(), "-s", "train.learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(!dir.path().join("out").exists());

    fs::write(dir.path().join("bad.toml"), "[train]\nbogus = 1\n").unwrap();
    let o = wsram(&["train", "-c", dir.path().join("bad.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_export_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let c = config.to_str().unwrap();
    let o = wsram(&["train", "-c", c]);
    assert!(o.status.success(), "{}", text(&o));
    let o = wsram(&["eval", "-c", c]);
    assert!(o.status.success() && text(&o).contains("error rate"), "{}", text(&o));
    // the checkpoint alone carries enough to evaluate
    let ck = dir.path().join("out").join("checkpoint-wsram-q-c-seed2.bin");
    let alone = wsram(&["eval", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(
        String::from_utf8_lossy(&alone.stdout),
        String::from_utf8_lossy(&o.stdout),
        "{}",
        text(&alone)
    );

    let out = dir.path().join("out");
    let metrics = out.join("metrics-wsram-q-c-seed2.jsonl");
    let empty = out.join("metrics-empty.jsonl");
    fs::write(&empty, "").unwrap();
    let csv = out.join("curves.csv");
    let inputs = [
        metrics.to_str().unwrap(),
        empty.to_str().unwrap(),
        metrics.to_str().unwrap(),
    ];
    let o = wsram(&[
        "export-curves",
        inputs[0],
        inputs[1],
        inputs[2],
        "-o",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let body = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "run-id,update,train-error,F-hat,L_M-hat,ESS,grad-variance");
    // three flushes (updates 0, 10, 20) per copy
    assert_eq!(lines.len(), 1 + 2 * 3);

    let o = wsram(&["export-curves", empty.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);

    let future = out.join("metrics-future.jsonl");
    fs::write(
        &future,
        fs::read_to_string(&metrics)
            .unwrap()
            .replace("\"schema\":1", "\"schema\":2"),
    )
    .unwrap();
    let o = wsram(&["export-curves", metrics.to_str().unwrap(), future.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn diagnose_reports_every_estimator_and_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let c = config.to_str().unwrap();
    assert!(wsram(&["train", "-c", c]).status.success());
    let json = dir.path().join("d.json");
    let o = wsram(&[
        "diagnose",
        "-c",
        c,
        "--resamples",
        "20",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), EstimatorTag::ALL.len());
    for r in rows {
        let ess = r["mean_ess"].as_f64().unwrap();
        assert!((1.0..=3.0 + 1e-9).contains(&ess), "{r}");
    }

    let o = wsram(&["diagnose", "-c", c, "-s", "model.top_width=7", "--resamples", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn oracle_verify_passes_and_catches_the_injected_fault() {
    let o = wsram(&["oracle-verify", "--worlds", "3"]);
    assert!(o.status.success(), "{}", text(&o));
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let o = wsram(&[
        "oracle-verify",
        "--worlds",
        "3",
        "--inject-fault",
        "wake-q-cv-sign",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(text(&o).contains("wake-q-cv-expectation (world seed"), "{}", text(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let mut identities: Vec<&str> = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["identity"].as_str().unwrap())
        .collect();
    identities.dedup();
    identities.sort();
    identities.dedup();
    assert!(identities.len() >= 8, "{identities:?}");
}

/// With the inference network copying the prior, WSRAM and WSRAM+q draw
/// from the same distribution, so their rows agree within Monte Carlo error.
#[test]
fn proposal_equal_to_prior_gives_matching_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.output_dir = dir.path().to_path_buf();
    c.data.kind = DataKind::Glyphs;
    c.data.canvas = 28;
    c.data.train_count = 50;
    c.data.test_count = 1;
    c.sensor.scales = vec![8, 16];
    c.sensor.retina = 6;
    c.sensor.low_res_side = 6;
    c.model.glimpses = 2;
    c.model.bottom_width = 8;
    c.model.top_width = 8;
    c.model.inference_width = 8;
    c.train.batch_size = 4;
    let ExperimentData::Images { train, .. } = ExperimentData::load(&c).unwrap() else {
        unreachable!()
    };
    let mut model = wsram::model::AttentionModel::new(model_shape(&c, &train), 6).unwrap();
    model.mimic_prior_with_inference().unwrap();
    // the checkpoint path is what the command-line tool would load
    Checkpoint::from_model(&model).save(&c.checkpoint_path()).unwrap();
    let model = Checkpoint::load(&c.checkpoint_path()).unwrap().model().unwrap();
    let report = diagnose(&model, &train, &c, &[EstimatorTag::Wsram, EstimatorTag::WsramQ], 400).unwrap();
    let (a, b) = (
        report.row(EstimatorTag::Wsram).unwrap(),
        report.row(EstimatorTag::WsramQ).unwrap(),
    );
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.variance - b.variance).abs() <= 3.0 * se + 1e-12, "{a:?} vs {b:?}");
    assert!((a.mean_ess - b.mean_ess).abs() < 0.1, "{a:?} vs {b:?}");
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let body = fs::read_to_string(&path).unwrap();
        ExperimentConfig::from_toml_str(&body, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 3);
}
