//! Reduction of a source skeleton to the kept joints named by a joint map.

use nalgebra::{UnitQuaternion, Vector3};

use super::skeleton::{quaternion_to_euler, Channel, Joint, Skeleton};
use crate::error::{Error, Result};

const DEFAULT_MAP: &str = include_str!("../../data/joints21.map");

/// Ordered `target = source` joint names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointMap {
    entries: Vec<(String, String)>,
}

impl Default for JointMap {
    fn default() -> Self {
        JointMap::parse(DEFAULT_MAP).expect("bundled joint map is valid")
    }
}

impl JointMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (t, s) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected `target = source`".into() })?;
            let (t, s) = (t.trim(), s.trim());
            if t.is_empty() || s.is_empty() {
                return Err(Error::Parse { line: i + 1, msg: "empty joint name".into() });
            }
            if entries.iter().any(|(et, es)| et == t || es == s) {
                return Err(Error::Parse { line: i + 1, msg: format!("joint `{t}` / `{s}` mapped twice") });
            }
            entries.push((t.to_string(), s.to_string()));
        }
        if entries.is_empty() {
            return Err(Error::Config("joint map is empty".into()));
        }
        Ok(JointMap { entries })
    }

    /// Map that keeps every joint of `skel` under its own name.
    pub fn identity(skel: &Skeleton) -> Self {
        JointMap { entries: skel.joints().iter().map(|j| (j.name.clone(), j.name.clone())).collect() }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps the mapped joints of `skel` and re-expresses every frame on the reduced
/// hierarchy. A kept joint whose parent was removed gets the summed rest offset of
/// the removed chain and a local rotation that absorbs the removed rotations.
pub fn retarget(skel: &Skeleton, frames: &[Vec<f64>], map: &JointMap) -> Result<(Skeleton, Vec<Vec<f64>>)> {
    let mut kept: Vec<(usize, &str)> = Vec::with_capacity(map.len());
    for (target, source) in map.entries() {
        let idx = skel
            .index_of(source)
            .ok_or_else(|| Error::Config(format!("source skeleton lacks required joint `{source}`")))?;
        kept.push((idx, target.as_str()));
    }
    kept.sort_by_key(|k| k.0);
    if kept[0].0 != 0 {
        return Err(Error::Config(format!("joint map must keep the root `{}`", skel.joint(0).name)));
    }
    let mut new_index = vec![None; skel.len()];
    for (n, (src, _)) in kept.iter().enumerate() {
        new_index[*src] = Some(n);
    }

    struct Plan {
        src: usize,
        kept_parent: Option<usize>,
        direct: bool,
    }
    let mut plans = Vec::with_capacity(kept.len());
    let mut joints = Vec::with_capacity(kept.len());
    for &(src, target) in &kept {
        let j = skel.joint(src);
        let mut offset = j.offset;
        let mut cursor = j.parent;
        let mut direct = true;
        let kept_parent = loop {
            match cursor {
                None => break None,
                Some(p) if new_index[p].is_some() => break Some(p),
                Some(p) => {
                    direct = false;
                    offset += skel.joint(p).offset;
                    cursor = skel.joint(p).parent;
                }
            }
        };
        let channels = if direct {
            j.channels.clone()
        } else {
            if j.rotation_order().len() != 3 {
                return Err(Error::Motion(format!("joint `{}` needs three rotation channels to absorb removed parents", j.name)));
            }
            j.channels.iter().copied().filter(|c| c.is_rotation()).collect::<Vec<Channel>>()
        };
        let end_site = j.end_site.or_else(|| {
            // a kept leaf whose children were all removed keeps the first child's offset as its tip
            let has_kept_child = skel.children(src).any(|c| subtree_has_kept(skel, c, &new_index));
            if has_kept_child {
                None
            } else {
                skel.children(src).next().map(|c| skel.joint(c).offset)
            }
        });
        joints.push(Joint {
            name: target.to_string(),
            parent: kept_parent.map(|p| new_index[p].expect("kept")),
            offset,
            channels,
            end_site,
        });
        plans.push(Plan { src, kept_parent, direct });
    }
    let out_skel = Skeleton::new(joints)?;

    let mut out_frames = Vec::with_capacity(frames.len());
    for (fi, frame) in frames.iter().enumerate() {
        if frame.len() != skel.num_channels() {
            return Err(Error::Motion(format!("frame {fi} has {} values, expected {}", frame.len(), skel.num_channels())));
        }
        let world = if plans.iter().all(|p| p.direct) { Vec::new() } else { world_rotations(skel, frame) };
        let mut row = Vec::with_capacity(out_skel.num_channels());
        for plan in &plans {
            let j = skel.joint(plan.src);
            let start = skel.channel_start(plan.src);
            if plan.direct {
                row.extend_from_slice(&frame[start..start + j.channels.len()]);
                continue;
            }
            let parent_world = plan.kept_parent.map_or(UnitQuaternion::identity(), |p| world[p]);
            let local = parent_world.inverse() * world[plan.src];
            let order = j.rotation_order();
            row.extend_from_slice(&quaternion_to_euler(&local, [order[0], order[1], order[2]]));
        }
        out_frames.push(row);
    }
    Ok((out_skel, out_frames))
}

fn subtree_has_kept(skel: &Skeleton, j: usize, new_index: &[Option<usize>]) -> bool {
    new_index[j].is_some() || skel.children(j).any(|c| subtree_has_kept(skel, c, new_index))
}

fn world_rotations(skel: &Skeleton, frame: &[f64]) -> Vec<UnitQuaternion<f64>> {
    let mut out: Vec<UnitQuaternion<f64>> = Vec::with_capacity(skel.len());
    for (i, j) in skel.joints().iter().enumerate() {
        let (_, r) = skel.local_transform(i, frame);
        out.push(match j.parent {
            None => r,
            Some(p) => out[p] * r,
        });
    }
    out
}

/// World positions of the joints named in `names`, for checks across skeletons.
pub fn named_positions(skel: &Skeleton, frame: &[f64], names: &[&str]) -> Result<Vec<Vector3<f64>>> {
    let poses = skel.forward_kinematics(frame);
    names.iter().map(|n| skel.require(n).map(|i| poses[i].position)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_map_files() {
        let m = JointMap::parse("# c\nA = a\n\nB=b # trailing\n").unwrap();
        assert_eq!(m.entries(), &[("A".to_string(), "a".to_string()), ("B".to_string(), "b".to_string())]);
        assert!(JointMap::parse("A a").is_err());
        assert!(JointMap::parse("A = a\nB = a").is_err());
        assert!(JointMap::parse("# nothing").is_err());
        assert_eq!(JointMap::default().len(), 21);
    }
}
