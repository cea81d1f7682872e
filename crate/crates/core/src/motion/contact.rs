use super::sequence::MotionSequence;
use crate::error::{Error, Result};

/// Height and speed limits for calling a foot joint planted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactThresholds {
    /// Centimeters above the clip's lowest foot sample.
    pub height: f64,
    /// Centimeters per frame.
    pub speed: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        ContactThresholds { height: 3.0, speed: 0.5 }
    }
}

/// Per-frame contact flags for the four foot joints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FootContactMask {
    /// Joint indices, in the order left toe, left heel, right toe, right heel.
    pub joints: [usize; 4],
    /// `contacts[f][t]` for foot `f` and frame `t`.
    pub contacts: [Vec<bool>; 4],
}

impl FootContactMask {
    pub fn len(&self) -> usize {
        self.contacts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts[0].is_empty()
    }

    /// Number of contact frames per foot joint.
    pub fn counts(&self) -> [usize; 4] {
        std::array::from_fn(|f| self.contacts[f].iter().filter(|&&c| c).count())
    }

    /// Frames `[start, start+len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Motion(format!("contact window {start}+{len} exceeds {} frames", self.len())));
        }
        Ok(FootContactMask {
            joints: self.joints,
            contacts: std::array::from_fn(|f| self.contacts[f][start..start + len].to_vec()),
        })
    }
}

/// Marks frames where a foot joint is both near the floor and nearly still. Each
/// joint's floor is the lowest height it reaches in the clip, so heels and toes
/// are judged against their own resting height. Speed at the last frame reuses
/// the previous frame's displacement.
pub fn detect_foot_contacts(ms: &MotionSequence, feet: [usize; 4], th: ContactThresholds) -> Result<FootContactMask> {
    if let Some(&bad) = feet.iter().find(|&&j| j >= ms.num_joints()) {
        return Err(Error::Motion(format!("foot joint {bad} out of range for {} joints", ms.num_joints())));
    }
    let t = ms.len();
    let contacts = std::array::from_fn(|f| {
        let j = feet[f];
        let floor = (0..t).map(|i| ms.world_position(i, j).y).fold(f64::INFINITY, f64::min);
        (0..t)
            .map(|i| {
                let (a, b) = if i + 1 < t { (i, i + 1) } else { (i - 1, i) };
                let speed = (ms.world_position(b, j) - ms.world_position(a, j)).norm();
                ms.world_position(i, j).y < floor + th.height && speed < th.speed
            })
            .collect()
    });
    Ok(FootContactMask { joints: feet, contacts })
}
