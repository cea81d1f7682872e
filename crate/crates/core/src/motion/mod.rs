//! Motion capture input/output and the per-frame motion representation.

pub mod bvh;
pub mod contact;
pub mod manifest;
pub mod retarget;
pub mod sequence;
pub mod skeleton;

use std::path::Path;

pub use bvh::{parse_bvh, write_bvh_frames, BvhData};
pub use contact::{detect_foot_contacts, ContactThresholds, FootContactMask};
pub use manifest::{read_manifest, ManifestEntry};
pub use retarget::{retarget, JointMap};
pub use sequence::{to_channel_frames, to_motion_sequence, BodyLayout, Labels, MotionSequence, JOINT_DIM, VEL_DIM};
pub use skeleton::{Channel, Joint, Skeleton};

use crate::error::{Error, Result};

/// Settings that turn a BVH file into a training clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocess {
    pub joint_map: JointMap,
    pub layout: BodyLayout,
    pub downsample: usize,
    pub contacts: ContactThresholds,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            joint_map: JointMap::default(),
            layout: BodyLayout::default(),
            downsample: 2,
            contacts: ContactThresholds::default(),
        }
    }
}

/// A preprocessed motion with its skeleton and foot contacts.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub skeleton: Skeleton,
    pub motion: MotionSequence,
    pub contacts: FootContactMask,
}

impl Preprocess {
    pub fn foot_joints(&self, skel: &Skeleton) -> Result<[usize; 4]> {
        let f = &self.layout.feet;
        Ok([skel.require(&f[0])?, skel.require(&f[1])?, skel.require(&f[2])?, skel.require(&f[3])?])
    }

    pub fn clip_from_bvh(&self, bvh: &BvhData) -> Result<Clip> {
        let (skeleton, frames) = retarget(&bvh.skeleton, &bvh.frames, &self.joint_map)?;
        let full = to_motion_sequence(&skeleton, &frames, bvh.fps(), &self.layout)?;
        let motion = full.downsample(self.downsample)?;
        let contacts = detect_foot_contacts(&motion, self.foot_joints(&skeleton)?, self.contacts)?;
        Ok(Clip { skeleton, motion, contacts })
    }

    pub fn load(&self, path: &Path) -> Result<Clip> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_bvh(&text).and_then(|b| self.clip_from_bvh(&b)).map_err(|e| e.context(path.display().to_string()))
    }
}

/// Writes a motion on `skel` as BVH text, normalizing quaternions first.
pub fn write_motion_bvh(skel: &Skeleton, ms: &MotionSequence) -> Result<String> {
    let frames = to_channel_frames(skel, &ms.normalized()?)?;
    write_bvh_frames(skel, &frames, 1.0 / ms.fps)
}
