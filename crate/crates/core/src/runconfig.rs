//! Key-value run configuration.
//!
//! One `key = value` per line; `#` starts a comment. Part groupings use
//! `part.<name> = Joint Joint ...` lines, in file order. Unknown keys are errors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{HyperParams, PartGrouping};
use crate::motion::{ContactThresholds, Preprocess, Skeleton};

/// Every accepted key besides `part.*`.
pub const KEYS: &[&str] = &[
    "train_manifest",
    "test_manifest",
    "run_name",
    "desk",
    "seed",
    "iterations",
    "checkpoint_every",
    "min_crop",
    "d",
    "d_head",
    "heads",
    "blocks",
    "max_len",
    "mlp_hidden",
    "batch",
    "lr_eg",
    "lr_d",
    "lambda_adv",
    "lambda_disentangle",
    "lambda_recon",
    "lambda_cyc",
    "lambda_vel",
    "lambda_acc",
    "lambda_foot",
    "downsample",
    "contact_height",
    "contact_speed",
];

/// Parsed `(line, key, value)` entries, duplicates and unknown keys rejected.
pub fn parse_pairs(text: &str, allowed: &[&str], allow_parts: bool) -> Result<Vec<(usize, String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got `{body}`") })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        let known = allowed.contains(&k.as_str()) || (allow_parts && k.starts_with("part.") && k.len() > 5);
        if !known {
            return Err(Error::Parse { line, msg: format!("unknown key `{k}`") });
        }
        if !seen.insert(k.clone()) {
            return Err(Error::Parse { line, msg: format!("duplicate key `{k}`") });
        }
        out.push((line, k, v));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("`{key}`: cannot parse `{v}`") })
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse { line, msg: format!("`{key}`: expected true or false, got `{v}`") }),
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    pub test_manifest: Option<PathBuf>,
    pub run_name: String,
    pub desk: bool,
    pub hp: HyperParams,
    /// Named joint lists; empty means the default torso/arms/legs split.
    pub parts: Vec<(String, Vec<String>)>,
    pub seed: u64,
    pub iterations: u64,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub min_crop: usize,
    pub preprocess: Preprocess,
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_pairs(text, KEYS, true)?;
        let desk = match pairs.iter().find(|(_, k, _)| k == "desk") {
            Some((line, k, v)) => boolean(*line, k, v)?,
            None => false,
        };
        let mut hp = if desk { HyperParams::desk() } else { HyperParams::default() };
        let mut cfg = RunConfig {
            train_manifest: PathBuf::new(),
            test_manifest: None,
            run_name: "run".into(),
            desk,
            hp: hp.clone(),
            parts: Vec::new(),
            seed: 0,
            iterations: if desk { 2000 } else { 300_000 },
            checkpoint_every: 0,
            min_crop: 0,
            preprocess: Preprocess::default(),
        };
        let mut min_crop = None;
        let mut have_train = false;
        let mut contacts = ContactThresholds::default();
        for (line, k, v) in &pairs {
            let (line, v) = (*line, v.as_str());
            let w = &mut hp.weights;
            match k.as_str() {
                "train_manifest" => {
                    cfg.train_manifest = base.join(v);
                    have_train = true;
                }
                "test_manifest" => cfg.test_manifest = Some(base.join(v)),
                "run_name" => {
                    if v.is_empty() || v.contains(['/', '\\']) || v == "." || v == ".." {
                        return Err(Error::Parse { line, msg: format!("run_name `{v}` must be a plain directory name") });
                    }
                    cfg.run_name = v.to_string();
                }
                "desk" => {}
                "seed" => cfg.seed = num(line, k, v)?,
                "iterations" => cfg.iterations = num(line, k, v)?,
                "checkpoint_every" => cfg.checkpoint_every = num(line, k, v)?,
                "min_crop" => min_crop = Some(num(line, k, v)?),
                "d" => hp.d = num(line, k, v)?,
                "d_head" => hp.d_head = num(line, k, v)?,
                "heads" => hp.heads = num(line, k, v)?,
                "blocks" => hp.blocks = num(line, k, v)?,
                "max_len" => hp.max_len = num(line, k, v)?,
                "mlp_hidden" => hp.mlp_hidden = num(line, k, v)?,
                "batch" => hp.batch = num(line, k, v)?,
                "lr_eg" => hp.lr_eg = num(line, k, v)?,
                "lr_d" => hp.lr_d = num(line, k, v)?,
                "lambda_adv" => w.adv = num(line, k, v)?,
                "lambda_disentangle" => w.disentangle = num(line, k, v)?,
                "lambda_recon" => w.recon = num(line, k, v)?,
                "lambda_cyc" => w.cyc = num(line, k, v)?,
                "lambda_vel" => w.vel = num(line, k, v)?,
                "lambda_acc" => w.acc = num(line, k, v)?,
                "lambda_foot" => w.foot = num(line, k, v)?,
                "downsample" => cfg.preprocess.downsample = num(line, k, v)?,
                "contact_height" => contacts.height = num(line, k, v)?,
                "contact_speed" => contacts.speed = num(line, k, v)?,
                part => {
                    let joints: Vec<String> = v.split([' ', ',', '\t']).filter(|s| !s.is_empty()).map(String::from).collect();
                    if joints.is_empty() {
                        return Err(Error::Parse { line, msg: format!("`{part}` lists no joints") });
                    }
                    cfg.parts.push((part["part.".len()..].to_string(), joints));
                }
            }
        }
        if !have_train {
            return Err(Error::Config("`train_manifest` is required".into()));
        }
        hp.validate()?;
        if cfg.preprocess.downsample == 0 {
            return Err(Error::Config("downsample must be at least 1".into()));
        }
        if !(contacts.height > 0.0 && contacts.speed > 0.0) {
            return Err(Error::Config("contact thresholds must be positive".into()));
        }
        if cfg.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        cfg.preprocess.contacts = contacts;
        cfg.min_crop = min_crop.unwrap_or((hp.max_len / 2).max(3));
        if cfg.min_crop < 3 || cfg.min_crop > hp.max_len {
            return Err(Error::Config(format!("min_crop must lie in [3, {}]", hp.max_len)));
        }
        cfg.hp = hp;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|e| e.context(path.display().to_string()))?;
        Ok((cfg, text))
    }

    pub fn grouping(&self, skel: &Skeleton) -> Result<PartGrouping> {
        if self.parts.is_empty() {
            PartGrouping::from_names(skel, &PartGrouping::default_parts())
        } else {
            PartGrouping::from_names(skel, &self.parts)
        }
    }
}

/// Keys of the model description embedded in checkpoints.
const SPEC_KEYS: &[&str] = &[
    "d",
    "d_head",
    "heads",
    "blocks",
    "max_len",
    "mlp_hidden",
    "batch",
    "lr_eg",
    "lr_d",
    "lambda_adv",
    "lambda_disentangle",
    "lambda_recon",
    "lambda_cyc",
    "lambda_vel",
    "lambda_acc",
    "lambda_foot",
    "num_joints",
    "downsample",
    "contact_height",
    "contact_speed",
];

/// Architecture, grouping and preprocessing needed to rebuild a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub hp: HyperParams,
    pub grouping: PartGrouping,
    pub preprocess: Preprocess,
}

impl ModelSpec {
    /// Canonical text; floats use the shortest representation that round-trips.
    pub fn to_text(&self) -> String {
        let hp = &self.hp;
        let w = &hp.weights;
        let c = &self.preprocess.contacts;
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("d", hp.d.to_string());
        put("d_head", hp.d_head.to_string());
        put("heads", hp.heads.to_string());
        put("blocks", hp.blocks.to_string());
        put("max_len", hp.max_len.to_string());
        put("mlp_hidden", hp.mlp_hidden.to_string());
        put("batch", hp.batch.to_string());
        put("lr_eg", format!("{:?}", hp.lr_eg));
        put("lr_d", format!("{:?}", hp.lr_d));
        put("lambda_adv", format!("{:?}", w.adv));
        put("lambda_disentangle", format!("{:?}", w.disentangle));
        put("lambda_recon", format!("{:?}", w.recon));
        put("lambda_cyc", format!("{:?}", w.cyc));
        put("lambda_vel", format!("{:?}", w.vel));
        put("lambda_acc", format!("{:?}", w.acc));
        put("lambda_foot", format!("{:?}", w.foot));
        put("num_joints", self.grouping.num_joints().to_string());
        put("downsample", self.preprocess.downsample.to_string());
        put("contact_height", format!("{:?}", c.height));
        put("contact_speed", format!("{:?}", c.speed));
        for i in 0..self.grouping.num_parts() {
            let joints: Vec<String> = self.grouping.part(i).iter().map(|j| j.to_string()).collect();
            put(&format!("part.{}", self.grouping.name(i)), joints.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text, SPEC_KEYS, true)?;
        let mut hp = HyperParams::default();
        let mut pre = Preprocess::default();
        let mut num_joints = None;
        let (mut names, mut joints) = (Vec::new(), Vec::new());
        for (line, k, v) in &pairs {
            let (line, v) = (*line, v.as_str());
            let w = &mut hp.weights;
            match k.as_str() {
                "d" => hp.d = num(line, k, v)?,
                "d_head" => hp.d_head = num(line, k, v)?,
                "heads" => hp.heads = num(line, k, v)?,
                "blocks" => hp.blocks = num(line, k, v)?,
                "max_len" => hp.max_len = num(line, k, v)?,
                "mlp_hidden" => hp.mlp_hidden = num(line, k, v)?,
                "batch" => hp.batch = num(line, k, v)?,
                "lr_eg" => hp.lr_eg = num(line, k, v)?,
                "lr_d" => hp.lr_d = num(line, k, v)?,
                "lambda_adv" => w.adv = num(line, k, v)?,
                "lambda_disentangle" => w.disentangle = num(line, k, v)?,
                "lambda_recon" => w.recon = num(line, k, v)?,
                "lambda_cyc" => w.cyc = num(line, k, v)?,
                "lambda_vel" => w.vel = num(line, k, v)?,
                "lambda_acc" => w.acc = num(line, k, v)?,
                "lambda_foot" => w.foot = num(line, k, v)?,
                "num_joints" => num_joints = Some(num::<usize>(line, k, v)?),
                "downsample" => pre.downsample = num(line, k, v)?,
                "contact_height" => pre.contacts.height = num(line, k, v)?,
                "contact_speed" => pre.contacts.speed = num(line, k, v)?,
                part => {
                    names.push(part["part.".len()..].to_string());
                    joints.push(v.split_whitespace().map(|j| num(line, part, j)).collect::<Result<Vec<usize>>>()?);
                }
            }
        }
        let nj = num_joints.ok_or_else(|| Error::Config("model description lacks num_joints".into()))?;
        hp.validate()?;
        Ok(ModelSpec { hp, grouping: PartGrouping::new(names, joints, nj)?, preprocess: pre })
    }
}
