use crate::error::{Error, Result};
use crate::motion::Skeleton;

/// Weights of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub disentangle: f64,
    pub recon: f64,
    pub cyc: f64,
    pub vel: f64,
    pub acc: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adv: 1.0, disentangle: 1.0, recon: 3.0, cyc: 3.0, vel: 1.0, acc: 0.1, foot: 1.0 }
    }
}

/// Network sizes and optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Token width `d`.
    pub d: usize,
    /// Per-head projection width `d'`.
    pub d_head: usize,
    pub heads: usize,
    /// Transformer blocks `N` in the encoder and generator.
    pub blocks: usize,
    /// Maximum sequence length `T`.
    pub max_len: usize,
    pub mlp_hidden: usize,
    pub weights: LossWeights,
    pub lr_eg: f64,
    pub lr_d: f64,
    pub batch: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d: 64,
            d_head: 32,
            heads: 4,
            blocks: 3,
            max_len: 200,
            mlp_hidden: 128,
            weights: LossWeights::default(),
            lr_eg: 1e-5,
            lr_d: 1e-6,
            batch: 8,
        }
    }
}

impl HyperParams {
    /// Reduced sizes for single-core runs.
    pub fn desk() -> Self {
        HyperParams { d: 32, d_head: 8, heads: 2, max_len: 32, mlp_hidden: 64, batch: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d < 2 || self.d % 2 != 0 {
            return bad("d must be even and at least 2 (the global token splits it in halves)");
        }
        if self.d_head == 0 || self.heads == 0 {
            return bad("heads and d_head must be positive");
        }
        if self.blocks < 2 {
            return bad("the encoder needs at least 2 blocks (style is read before the last one)");
        }
        if self.max_len < 3 {
            return bad("max_len must be at least 3");
        }
        if self.mlp_hidden == 0 || self.batch == 0 {
            return bad("mlp_hidden and batch must be positive");
        }
        if !(self.lr_eg > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Assignment of skeleton joints to body parts; the global token follows the parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartGrouping {
    names: Vec<String>,
    joints: Vec<Vec<usize>>,
    num_joints: usize,
}

pub const TRAJ_NAME: &str = "traj";

impl PartGrouping {
    pub fn new(names: Vec<String>, joints: Vec<Vec<usize>>, num_joints: usize) -> Result<Self> {
        if names.len() != joints.len() || names.is_empty() {
            return Err(Error::Config("part grouping needs one name per non-empty part list".into()));
        }
        let mut seen = vec![false; num_joints];
        for (name, part) in names.iter().zip(&joints) {
            if part.is_empty() {
                return Err(Error::Config(format!("part `{name}` has no joints")));
            }
            for &j in part {
                if j >= num_joints || seen[j] {
                    return Err(Error::Config(format!("part `{name}`: joint {j} out of range or assigned twice")));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("joint {j} belongs to no part")));
        }
        Ok(PartGrouping { names, joints, num_joints })
    }

    /// Groups by joint name, e.g. from a run config.
    pub fn from_names(skel: &Skeleton, parts: &[(String, Vec<String>)]) -> Result<Self> {
        let mut names = Vec::new();
        let mut joints = Vec::new();
        for (name, members) in parts {
            names.push(name.clone());
            joints.push(members.iter().map(|m| skel.require(m)).collect::<Result<Vec<_>>>()?);
        }
        PartGrouping::new(names, joints, skel.len())
    }

    /// Torso, arms and legs over the default 21-joint skeleton.
    pub fn default_parts() -> Vec<(String, Vec<String>)> {
        let list = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        vec![
            ("spine".into(), list(&["Hips", "Spine", "Spine1", "Neck1", "Head"])),
            ("L_arm".into(), list(&["LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand"])),
            ("R_arm".into(), list(&["RightShoulder", "RightArm", "RightForeArm", "RightHand"])),
            ("L_leg".into(), list(&["LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToeBase"])),
            ("R_leg".into(), list(&["RightUpLeg", "RightLeg", "RightFoot", "RightToeBase"])),
        ]
    }

    pub fn num_parts(&self) -> usize {
        self.names.len()
    }

    /// Tokens per frame: parts plus the global token.
    pub fn num_tokens(&self) -> usize {
        self.names.len() + 1
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn part(&self, i: usize) -> &[usize] {
        &self.joints[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Part names followed by the global token name.
    pub fn token_names(&self) -> Vec<String> {
        self.names.iter().cloned().chain([TRAJ_NAME.to_string()]).collect()
    }

    /// Columns of a `[.., J·7]` joint buffer that make up part `i`, in order.
    pub fn part_columns(&self, i: usize) -> Vec<usize> {
        self.joints[i].iter().flat_map(|&j| j * 7..j * 7 + 7).collect()
    }

    /// For each joint-buffer column, its position in the part-major concatenation.
    pub fn joint_order_columns(&self) -> Vec<usize> {
        let mut inverse = vec![0; self.num_joints * 7];
        let mut pos = 0;
        for i in 0..self.num_parts() {
            for c in self.part_columns(i) {
                inverse[c] = pos;
                pos += 1;
            }
        }
        inverse
    }
}
