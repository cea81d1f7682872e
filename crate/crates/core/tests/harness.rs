use std::path::{Path, PathBuf};

use motion_style::checkpoint::Checkpoint;
use motion_style::export::read_attention_csv;
use motion_style::losses::LossBreakdown;
use motion_style::run::{self, evaluate_files, new_trainer, read_loss_log, sha256_hex, train_run, transfer_files};
use motion_style::runconfig::RunConfig;
use motion_style::synth::{write_corpus, CorpusSpec};
use motion_style::Error;
use tapegrad::Tensor;

struct Fixture {
    _root: tempfile::TempDir,
    dir: PathBuf,
    train: PathBuf,
    test: PathBuf,
}

fn fixture() -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { styles: vec!["neutral".into(), "angry".into()], contents: vec!["walk".into(), "punch".into()], variants: 2, frames: 60, seed: 5 };
    let data = root.path().join("data");
    let manifests = write_corpus(&data, &spec).unwrap();
    let get = |n: &str| manifests.iter().find(|p| p.ends_with(n)).unwrap().clone();
    Fixture { dir: root.path().to_path_buf(), train: get("train.csv"), test: get("test.csv"), _root: root }
}

fn config_text(manifest: &Path, iterations: u64) -> String {
    format!(
        "train_manifest = {}\ndesk = true\nseed = 4\niterations = {iterations}\nd = 8\nd_head = 4\nmax_len = 8\nmlp_hidden = 8\nmin_crop = 4\n",
        manifest.display()
    )
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text, Path::new("/")).unwrap()
}

#[test]
fn config_errors_carry_line_numbers() {
    let base = Path::new("/x");
    let err = RunConfig::parse("train_manifest = a.csv\n\n# note\nlearnrate = 1\n", base).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    assert!(err.to_string().contains("learnrate"));
    let err = RunConfig::parse("train_manifest = a.csv\nd = 8\nd = 9\n", base).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }));
    let err = RunConfig::parse("train_manifest = a.csv\nseed = minus one\n", base).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }));
    assert!(RunConfig::parse("train_manifest = a.csv\nrun_name = ../up\n", base).is_err());
    let cfg = RunConfig::parse("train_manifest = m/a.csv  # trailing comment\nseed = 3\n", base).unwrap();
    assert_eq!(cfg.train_manifest, base.join("m/a.csv"));
    assert_eq!(cfg.seed, 3);
}

#[test]
fn stamp_records_hash_seed_version_and_command() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stamp.txt");
    run::write_stamp(&path, "seed = 1\n", Some(1), "train").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains(&format!("config_sha256 = {}", sha256_hex(b"seed = 1\n"))));
    assert!(text.contains("seed = 1\n"));
    assert!(text.contains(&format!("code_version = {}", run::CODE_VERSION)));
    assert!(text.contains("command = train"));
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn output_root_follows_environment() {
    // the only test touching this variable
    std::env::set_var(run::OUTPUT_ROOT_ENV, "/tmp/somewhere");
    assert_eq!(run::output_root(), PathBuf::from("/tmp/somewhere"));
    std::env::remove_var(run::OUTPUT_ROOT_ENV);
    assert_eq!(run::output_root(), PathBuf::from("runs"));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let f = fixture();
    let text = config_text(&f.train, 3);
    let cfg = config(&text);
    let data = run::load_dataset(&cfg.train_manifest, &cfg.preprocess).unwrap();
    let (mut trainer, spec) = new_trainer(&cfg, data.clone()).unwrap();
    trainer.step().unwrap();
    let ckpt = Checkpoint::from_trainer(&trainer, &spec, &text);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);

    // a restored trainer takes exactly the same next step
    let mut restored = back.trainer(data).unwrap();
    let a = trainer.step().unwrap();
    let b = restored.step().unwrap();
    assert_eq!(a.values(), b.values());

    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut other = ckpt.clone();
    other.tensors.retain(|t| !t.name.starts_with("param/"));
    assert!(other.model().is_err());
}

#[test]
fn training_writes_log_stamp_and_checkpoints() {
    let f = fixture();
    let text = config_text(&f.train, 4) + "checkpoint_every = 2\n";
    let cfg = config(&text);
    let dir = f.dir.join("run");
    let mut seen = Vec::new();
    let out = train_run(&cfg, &text, &dir, None, |it, _| seen.push(it)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert!(out.warnings.is_empty());
    let header = std::fs::read_to_string(dir.join(run::LOG_FILE)).unwrap();
    let expected = std::iter::once("iteration").chain(LossBreakdown::HEADER).collect::<Vec<_>>().join(",");
    assert_eq!(header.lines().next().unwrap(), expected);
    let log = read_loss_log(&dir.join(run::LOG_FILE)).unwrap();
    assert_eq!(log.len(), 4);
    assert!(log.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())));
    for name in ["ckpt_00000002.ckpt", "ckpt_00000004.ckpt", run::LATEST_CHECKPOINT, run::STAMP_FILE] {
        assert!(dir.join(name).exists(), "{name}");
    }
    let stamp = std::fs::read_to_string(dir.join(run::STAMP_FILE)).unwrap();
    assert!(stamp.contains(&sha256_hex(text.as_bytes())) && stamp.contains("seed = 4"));
    assert_eq!(Checkpoint::load(&out.checkpoint).unwrap().iteration, 4);
}

#[test]
fn single_content_corpus_warns_about_disentanglement() {
    let root = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { styles: vec!["neutral".into(), "angry".into()], contents: vec!["walk".into()], variants: 1, frames: 40, seed: 1 };
    let m = write_corpus(root.path(), &spec).unwrap();
    let text = config_text(m.iter().find(|p| p.ends_with("train.csv")).unwrap(), 1);
    let out = train_run(&config(&text), &text, &root.path().join("r"), None, |_, _| {}).unwrap();
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn divergence_leaves_diagnostics() {
    let f = fixture();
    let text = config_text(&f.train, 5);
    let cfg = config(&text);
    let data = run::load_dataset(&cfg.train_manifest, &cfg.preprocess).unwrap();
    let (mut trainer, spec) = new_trainer(&cfg, data).unwrap();
    let id = trainer.model.store.ids().next().unwrap();
    let shape = trainer.model.store.value(id).shape().to_vec();
    let n: usize = shape.iter().product();
    trainer.model.store.set(id, Tensor::new(shape, vec![f64::NAN; n]).unwrap()).unwrap();
    let poisoned = f.dir.join("nan.ckpt");
    Checkpoint::from_trainer(&trainer, &spec, &text).save(&poisoned).unwrap();

    let dir = f.dir.join("diverged");
    let err = train_run(&cfg, &text, &dir, Some(&poisoned), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite { iteration: 1, .. }), "{err}");
    let diag = std::fs::read_to_string(dir.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("non-finite") && diag.contains("L_recon="));
    assert!(dir.join("diverged.ckpt").exists());
}

#[test]
fn transfer_and_evaluate_write_their_files() {
    let f = fixture();
    let text = config_text(&f.train, 2);
    let out = train_run(&config(&text), &text, &f.dir.join("run"), None, |_, _| {}).unwrap();

    let content = f.dir.join("data/neutral_walk_1.bvh");
    let style = f.dir.join("data/angry_punch_1.bvh");
    let target = f.dir.join("out/result.bvh");
    let files = transfer_files(&out.checkpoint, &content, &style, &target).unwrap();
    assert!(files.frames > 0);
    let bvh = std::fs::read_to_string(&files.bvh).unwrap();
    assert!(bvh.starts_with("HIERARCHY") && bvh.contains(&format!("Frames: {}", files.frames)));
    let (tokens, rows) = read_attention_csv(&std::fs::read_to_string(&files.attention).unwrap()).unwrap();
    assert_eq!(rows.len(), tokens.len());
    for row in &rows {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for p in [&files.attention_heads, &files.style_features, &files.modulated_style, &files.stamp] {
        assert!(p.exists(), "{}", p.display());
    }
    assert!(std::fs::read_to_string(&files.stamp).unwrap().contains("command = transfer"));

    let csv = f.dir.join("eval/metrics.csv");
    let report = evaluate_files(&out.checkpoint, &f.test, &f.train, &csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text, report.to_csv().unwrap());
    let cc = report.get("overall", "all", "CC").unwrap();
    assert!(cc.average.unwrap() > 0.0);
    assert!(f.dir.join("eval/metrics_stamp.txt").exists());
}
