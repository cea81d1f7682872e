//! Run directories: training with logs and checkpoints, transfer with
//! exports, evaluation, and the reproducibility stamp written by each.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{build_pairs, evaluate_pairs, EvalReport};
use crate::export::{attention_csv, attention_heads_csv, features_csv};
use crate::losses::LossBreakdown;
use crate::model::Model;
use crate::motion::{read_manifest, write_motion_bvh, MotionSequence, Preprocess};
use crate::runconfig::{ModelSpec, RunConfig};
use crate::train::{Dataset, Trainer};

/// Environment variable naming the directory that holds run outputs.
pub const OUTPUT_ROOT_ENV: &str = "MOTION_STYLE_OUTPUT_ROOT";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const LOG_FILE: &str = "loss_log.csv";
pub const STAMP_FILE: &str = "stamp.txt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// `$MOTION_STYLE_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `config_sha256`, `seed`, `code_version` and `command` lines.
pub fn write_stamp(path: &Path, config_text: &str, seed: Option<u64>, command: &str) -> Result<()> {
    let text = format!(
        "config_sha256 = {}\nseed = {}\ncode_version = {CODE_VERSION}\ncommand = {command}\n",
        sha256_hex(config_text.as_bytes()),
        seed.map_or("NA".to_string(), |s| s.to_string()),
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_dataset(manifest: &Path, pre: &Preprocess) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no clips", manifest.display())));
    }
    Dataset::load(&entries, pre)
}

/// Builds a fresh trainer for `cfg` on `data`.
pub fn new_trainer(cfg: &RunConfig, data: Dataset) -> Result<(Trainer, ModelSpec)> {
    let grouping = cfg.grouping(&data.skeleton)?;
    let spec = ModelSpec { hp: cfg.hp.clone(), grouping: grouping.clone(), preprocess: cfg.preprocess.clone() };
    let model = Model::new(cfg.hp.clone(), grouping, data.stats()?, cfg.seed)?;
    Ok((Trainer::new(model, data, cfg.seed, cfg.min_crop)?, spec))
}

/// Result of [`train_run`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    /// Iterations run by this call, with their losses.
    pub log: Vec<(u64, LossBreakdown)>,
    pub checkpoint: PathBuf,
    pub warnings: Vec<String>,
}

fn log_row(iteration: u64, b: &LossBreakdown) -> Vec<String> {
    std::iter::once(iteration.to_string()).chain(b.values().iter().map(|v| v.to_string())).collect()
}

/// Trains until `cfg.iterations`, appending to `dir/loss_log.csv` and writing
/// checkpoints. With `resume`, continues the run saved in that checkpoint.
pub fn train_run(
    cfg: &RunConfig,
    config_text: &str,
    dir: &Path,
    resume: Option<&Path>,
    mut progress: impl FnMut(u64, &LossBreakdown),
) -> Result<TrainOutcome> {
    create_dir(dir)?;
    write_stamp(&dir.join(STAMP_FILE), config_text, Some(cfg.seed), "train")?;
    let data = load_dataset(&cfg.train_manifest, &cfg.preprocess)?;
    let mut warnings = Vec::new();
    if !data.supports_disentangle() {
        warnings.push("no style has clips of two contents; the disentanglement term is disabled".to_string());
    }
    let (mut trainer, spec) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let spec = ckpt.spec()?;
            (ckpt.trainer(data)?, spec)
        }
        None => new_trainer(cfg, data)?,
    };

    let log_path = dir.join(LOG_FILE);
    let fresh = resume.is_none() || !log_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", log_path.display()));
    if fresh {
        log.write_record(std::iter::once("iteration").chain(LossBreakdown::HEADER)).map_err(csv_err)?;
    }

    let mut rows = Vec::new();
    while trainer.iteration < cfg.iterations {
        let b = match trainer.step() {
            Ok(b) => b,
            Err(e @ Error::NonFinite { .. }) => {
                let diag = dir.join("diagnostics.txt");
                let ckpt = dir.join("diverged.ckpt");
                Checkpoint::from_trainer(&trainer, &spec, config_text).save(&ckpt)?;
                std::fs::write(&diag, format!("{e}\nstate before the failing step: {}\n", ckpt.display()))
                    .map_err(|err| Error::io(&diag, err))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let it = trainer.iteration;
        log.write_record(log_row(it, &b)).map_err(csv_err)?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        progress(it, &b);
        rows.push((it, b));
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            Checkpoint::from_trainer(&trainer, &spec, config_text).save(&dir.join(format!("ckpt_{it:08}.ckpt")))?;
        }
    }
    let checkpoint = dir.join(LATEST_CHECKPOINT);
    Checkpoint::from_trainer(&trainer, &spec, config_text).save(&checkpoint)?;
    Ok(TrainOutcome { dir: dir.to_path_buf(), log: rows, checkpoint, warnings })
}

/// Reads a loss log written by [`train_run`].
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, [f64; 10])>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let bad = || Error::Data(format!("{}: malformed row", path.display()));
        let it = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let mut vals = [0.0; 10];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = rec.get(i + 1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        }
        out.push((it, vals));
    }
    Ok(out)
}

/// Paths written by [`transfer_files`].
#[derive(Clone, Debug)]
pub struct TransferFiles {
    pub bvh: PathBuf,
    pub attention: PathBuf,
    pub attention_heads: PathBuf,
    pub style_features: PathBuf,
    pub modulated_style: PathBuf,
    pub stamp: PathBuf,
    pub frames: usize,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Transfers the style of one BVH file onto another and writes the result
/// plus attention and feature CSVs next to `out`.
pub fn transfer_files(ckpt_path: &Path, content: &Path, style: &Path, out: &Path) -> Result<TransferFiles> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let spec = ckpt.spec()?;
    let model = ckpt.model()?;
    let c = spec.preprocess.load(content)?;
    let s = spec.preprocess.load(style)?;
    let result = model.transfer_motion(&c.motion, &s.motion).map_err(|e| e.context("transfer"))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(out, &write_motion_bvh(&c.skeleton, &result.motion)?)?;
    let tokens = model.grouping.token_names();
    let r = &result.report;
    let files = TransferFiles {
        bvh: out.to_path_buf(),
        attention: sibling(out, "attention.csv"),
        attention_heads: sibling(out, "attention_heads.csv"),
        style_features: sibling(out, "style_features.csv"),
        modulated_style: sibling(out, "modulated_style.csv"),
        stamp: sibling(out, STAMP_FILE),
        frames: result.motion.len(),
    };
    write_text(&files.attention, &attention_csv(&r.cross_attention, &tokens)?)?;
    write_text(&files.attention_heads, &attention_heads_csv(&r.cross_attention, &tokens)?)?;
    write_text(&files.style_features, &features_csv(&r.style_features, &tokens)?)?;
    write_text(&files.modulated_style, &features_csv(&r.modulated, &tokens)?)?;
    write_stamp(&files.stamp, &ckpt.config_text, config_seed(&ckpt.config_text), "transfer")?;
    Ok(files)
}

fn config_seed(text: &str) -> Option<u64> {
    RunConfig::parse(text, Path::new(".")).ok().map(|c| c.seed)
}

fn motions(data: Dataset) -> Vec<MotionSequence> {
    data.samples.into_iter().map(|s| s.motion).collect()
}

/// Evaluates a checkpoint and writes the metrics CSV plus a stamp beside it.
pub fn evaluate_files(ckpt_path: &Path, test: &Path, train: &Path, out_csv: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let spec = ckpt.spec()?;
    let model = ckpt.model()?;
    let test = motions(load_dataset(test, &spec.preprocess)?);
    let train = motions(load_dataset(train, &spec.preprocess)?);
    let pairs = build_pairs(&model, &test)?;
    let report = evaluate_pairs(&pairs, &train)?;
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(out_csv, &report.to_csv()?)?;
    write_stamp(&sibling(out_csv, STAMP_FILE), &ckpt.config_text, config_seed(&ckpt.config_text), "evaluate")?;
    Ok(report)
}
