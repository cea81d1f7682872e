use crate::error::{Error, Result};
use crate::motion::{MotionSequence, JOINT_DIM, VEL_DIM};

/// Smallest standard deviation used when scaling a channel.
pub const STD_FLOOR: f64 = 1e-4;

/// Per-channel mean and deviation of a dataset; the network sees standardized
/// values and its heads emit standardized values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub joints_mean: Vec<f64>,
    pub joints_std: Vec<f64>,
    pub root_mean: Vec<f64>,
    pub root_std: Vec<f64>,
    pub vel_mean: Vec<f64>,
    pub vel_std: Vec<f64>,
}

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&[f64]> = rows.collect();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; width];
    for r in &rows {
        mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in &rows {
        var.iter_mut().zip(*r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl FeatureStats {
    /// Zero mean, unit deviation: values pass through unchanged.
    pub fn identity(num_joints: usize) -> Self {
        FeatureStats {
            joints_mean: vec![0.0; num_joints * JOINT_DIM],
            joints_std: vec![1.0; num_joints * JOINT_DIM],
            root_mean: vec![0.0; JOINT_DIM],
            root_std: vec![1.0; JOINT_DIM],
            vel_mean: vec![0.0; VEL_DIM],
            vel_std: vec![1.0; VEL_DIM],
        }
    }

    pub fn from_motions(motions: &[&MotionSequence]) -> Result<Self> {
        let first = motions.first().ok_or_else(|| Error::Data("no motions to compute statistics from".into()))?;
        let nj = first.num_joints();
        if motions.iter().any(|m| m.num_joints() != nj) {
            return Err(Error::Data("motions disagree on joint count".into()));
        }
        let jw = nj * JOINT_DIM;
        let (joints_mean, joints_std) = moments(motions.iter().flat_map(|m| m.joints().chunks(jw)), jw);
        let (root_mean, root_std) = moments(motions.iter().flat_map(|m| m.root().chunks(JOINT_DIM)), JOINT_DIM);
        let (vel_mean, vel_std) = moments(motions.iter().flat_map(|m| m.velocity().chunks(VEL_DIM)), VEL_DIM);
        Ok(FeatureStats { joints_mean, joints_std, root_mean, root_std, vel_mean, vel_std })
    }

    pub fn num_joints(&self) -> usize {
        self.joints_mean.len() / JOINT_DIM
    }

    /// Named buffers for serialization.
    pub fn buffers(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("stats.joints_mean", &self.joints_mean),
            ("stats.joints_std", &self.joints_std),
            ("stats.root_mean", &self.root_mean),
            ("stats.root_std", &self.root_std),
            ("stats.vel_mean", &self.vel_mean),
            ("stats.vel_std", &self.vel_std),
        ]
    }

    pub fn from_buffers(mut get: impl FnMut(&str) -> Result<Vec<f64>>) -> Result<Self> {
        let s = FeatureStats {
            joints_mean: get("stats.joints_mean")?,
            joints_std: get("stats.joints_std")?,
            root_mean: get("stats.root_mean")?,
            root_std: get("stats.root_std")?,
            vel_mean: get("stats.vel_mean")?,
            vel_std: get("stats.vel_std")?,
        };
        let jw = s.joints_mean.len();
        if jw == 0
            || jw % JOINT_DIM != 0
            || s.joints_std.len() != jw
            || s.root_mean.len() != JOINT_DIM
            || s.root_std.len() != JOINT_DIM
            || s.vel_mean.len() != VEL_DIM
            || s.vel_std.len() != VEL_DIM
        {
            return Err(Error::Checkpoint("feature statistics have inconsistent sizes".into()));
        }
        Ok(s)
    }
}

pub(crate) fn standardize(values: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    values.chunks(mean.len()).flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s)).collect()
}
