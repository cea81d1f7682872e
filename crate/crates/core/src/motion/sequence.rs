//! Per-frame motion representation: joint vectors, root vector and global velocity.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

use super::skeleton::{quaternion_to_euler, Skeleton};
use crate::error::{Error, Result};

/// Width of a joint or root vector: offset (3) followed by a quaternion `w, x, y, z`.
pub const JOINT_DIM: usize = 7;
/// Width of the global velocity: root displacement (3) and yaw change (1).
pub const VEL_DIM: usize = 4;

/// Names of the joints the representation relies on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyLayout {
    pub left_hip: String,
    pub right_hip: String,
    /// Left toe, left heel, right toe, right heel.
    pub feet: [String; 4],
}

impl Default for BodyLayout {
    fn default() -> Self {
        BodyLayout {
            left_hip: "LeftUpLeg".into(),
            right_hip: "RightUpLeg".into(),
            feet: ["LeftToeBase".into(), "LeftFoot".into(), "RightToeBase".into(), "RightFoot".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    pub style: Option<String>,
    pub content: Option<String>,
}

/// Motion as joint vectors `m_t^j`, root vector `m_t^root` and velocity `v_t`, stored
/// frame-major in flat buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    num_joints: usize,
    joints: Vec<f64>,
    root: Vec<f64>,
    velocity: Vec<f64>,
    pub fps: f64,
    pub labels: Labels,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

fn quat_from(slice: &[f64]) -> Quaternion<f64> {
    Quaternion::new(slice[0], slice[1], slice[2], slice[3])
}

/// Yaw angle (about +y) of a rotation, as used by the facing frame.
pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    let fwd = q * Vector3::x();
    (-fwd.z).atan2(fwd.x)
}

impl MotionSequence {
    /// Builds a sequence from flat buffers; `velocity` may be `None` to derive it.
    pub fn new(
        num_joints: usize,
        joints: Vec<f64>,
        root: Vec<f64>,
        velocity: Option<Vec<f64>>,
        fps: f64,
    ) -> Result<Self> {
        if num_joints == 0 || root.len() % JOINT_DIM != 0 {
            return Err(Error::Motion("root buffer is not a whole number of 7-vectors".into()));
        }
        let t = root.len() / JOINT_DIM;
        if t < 2 {
            return Err(Error::Motion(format!("a motion needs at least 2 frames, got {t}")));
        }
        if joints.len() != t * num_joints * JOINT_DIM {
            return Err(Error::Motion(format!(
                "joint buffer has {} values, expected {t}×{num_joints}×{JOINT_DIM}",
                joints.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Motion(format!("invalid frame rate {fps}")));
        }
        let mut ms = MotionSequence { num_joints, joints, root, velocity: Vec::new(), fps, labels: Labels::default() };
        match velocity {
            Some(v) if v.len() == t * VEL_DIM => ms.velocity = v,
            Some(v) => {
                return Err(Error::Motion(format!("velocity buffer has {} values, expected {}", v.len(), t * VEL_DIM)))
            }
            None => ms.recompute_velocity(),
        }
        if !ms.is_finite() {
            return Err(Error::Motion("non-finite motion values".into()));
        }
        Ok(ms)
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = labels;
        self
    }

    pub fn len(&self) -> usize {
        self.root.len() / JOINT_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn joints(&self) -> &[f64] {
        &self.joints
    }

    pub fn root(&self) -> &[f64] {
        &self.root
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn joint(&self, t: usize, j: usize) -> &[f64] {
        let s = (t * self.num_joints + j) * JOINT_DIM;
        &self.joints[s..s + JOINT_DIM]
    }

    pub fn root_at(&self, t: usize) -> &[f64] {
        &self.root[t * JOINT_DIM..(t + 1) * JOINT_DIM]
    }

    pub fn velocity_at(&self, t: usize) -> &[f64] {
        &self.velocity[t * VEL_DIM..(t + 1) * VEL_DIM]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().chain(&self.root).chain(&self.velocity).all(|v| v.is_finite())
    }

    /// Largest deviation of any quaternion norm from 1.
    pub fn max_quaternion_norm_error(&self) -> f64 {
        self.joints
            .chunks(JOINT_DIM)
            .chain(self.root.chunks(JOINT_DIM))
            .map(|c| (quat_from(&c[3..]).norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with every quaternion scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for c in out.joints.chunks_mut(JOINT_DIM).chain(out.root.chunks_mut(JOINT_DIM)) {
            let n = quat_from(&c[3..]).norm();
            if n < 1e-9 {
                return Err(Error::Motion("degenerate quaternion".into()));
            }
            c[3..].iter_mut().for_each(|v| *v /= n);
        }
        Ok(out)
    }

    /// World-space position of joint `j` at frame `t` (root position plus offset).
    pub fn world_position(&self, t: usize, j: usize) -> Vector3<f64> {
        let r = self.root_at(t);
        let o = self.joint(t, j);
        Vector3::new(r[0] + o[0], r[1] + o[1], r[2] + o[2])
    }

    /// Recomputes `v_t` from the root track; the last frame repeats the previous value.
    pub fn recompute_velocity(&mut self) {
        let t = self.len();
        let mut v = vec![0.0; t * VEL_DIM];
        for i in 0..t - 1 {
            let a = self.root_at(i);
            let b = self.root_at(i + 1);
            let ya = yaw_of(&UnitQuaternion::from_quaternion(quat_from(&a[3..])));
            let yb = yaw_of(&UnitQuaternion::from_quaternion(quat_from(&b[3..])));
            v[i * VEL_DIM..(i + 1) * VEL_DIM].copy_from_slice(&[b[0] - a[0], b[1] - a[1], b[2] - a[2], wrap_angle(yb - ya)]);
        }
        let (head, tail) = v.split_at_mut((t - 1) * VEL_DIM);
        tail.copy_from_slice(&head[(t - 2) * VEL_DIM..]);
        self.velocity = v;
    }

    /// Frames `[start, start+len)` with velocities recomputed.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > self.len() {
            return Err(Error::Motion(format!("window {start}+{len} invalid for {} frames", self.len())));
        }
        let jw = self.num_joints * JOINT_DIM;
        let mut out = MotionSequence {
            num_joints: self.num_joints,
            joints: self.joints[start * jw..(start + len) * jw].to_vec(),
            root: self.root[start * JOINT_DIM..(start + len) * JOINT_DIM].to_vec(),
            velocity: Vec::new(),
            fps: self.fps,
            labels: self.labels.clone(),
        };
        out.recompute_velocity();
        Ok(out)
    }

    /// Joins sequences end to end, keeping their stored velocities.
    pub fn concat(parts: &[MotionSequence]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Motion("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.num_joints != first.num_joints) {
            return Err(Error::Motion("cannot concatenate motions with different joint counts".into()));
        }
        let mut out = first.clone();
        for p in &parts[1..] {
            out.joints.extend_from_slice(&p.joints);
            out.root.extend_from_slice(&p.root);
            out.velocity.extend_from_slice(&p.velocity);
        }
        Ok(out)
    }

    /// Keeps every `factor`-th frame.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Motion("downsample factor must be at least 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.len()).step_by(factor).collect();
        if keep.len() < 2 {
            return Err(Error::Motion(format!("downsampling {} frames by {factor} leaves fewer than 2", self.len())));
        }
        let jw = self.num_joints * JOINT_DIM;
        let mut out = MotionSequence {
            num_joints: self.num_joints,
            joints: keep.iter().flat_map(|&t| self.joints[t * jw..(t + 1) * jw].iter().copied()).collect(),
            root: keep.iter().flat_map(|&t| self.root_at(t).iter().copied()).collect(),
            velocity: Vec::new(),
            fps: self.fps / factor as f64,
            labels: self.labels.clone(),
        };
        out.recompute_velocity();
        Ok(out)
    }

    /// Draws `(start, len)` with `len` uniform in `[min_len, min(max_len, T)]` and
    /// `start` uniform over the valid offsets.
    pub fn crop_window<R: Rng + ?Sized>(&self, rng: &mut R, min_len: usize, max_len: usize) -> Result<(usize, usize)> {
        let t = self.len();
        let hi = max_len.min(t);
        if min_len < 2 || min_len > hi {
            return Err(Error::Motion(format!("cannot crop [{min_len}, {max_len}] frames from a {t}-frame motion")));
        }
        let len = rng.random_range(min_len..=hi);
        let start = rng.random_range(0..=t - len);
        Ok((start, len))
    }

    pub fn random_crop<R: Rng + ?Sized>(&self, rng: &mut R, min_len: usize, max_len: usize) -> Result<Self> {
        let (start, len) = self.crop_window(rng, min_len, max_len)?;
        if start == 0 && len == self.len() {
            return Ok(self.clone());
        }
        self.slice(start, len)
    }
}

/// Converts raw channel frames on a retargeted skeleton into the motion representation.
pub fn to_motion_sequence(skel: &Skeleton, frames: &[Vec<f64>], fps: f64, layout: &BodyLayout) -> Result<MotionSequence> {
    if frames.len() < 2 {
        return Err(Error::Motion(format!("a motion needs at least 2 frames, got {}", frames.len())));
    }
    let lhip = skel.require(&layout.left_hip)?;
    let rhip = skel.require(&layout.right_hip)?;
    let nj = skel.len();
    let mut joints = Vec::with_capacity(frames.len() * nj * JOINT_DIM);
    let mut root = Vec::with_capacity(frames.len() * JOINT_DIM);
    let mut prev: Vec<[f64; 4]> = Vec::new();
    let mut prev_root: Option<[f64; 4]> = None;
    for (fi, frame) in frames.iter().enumerate() {
        if frame.len() != skel.num_channels() {
            return Err(Error::Motion(format!("frame {fi} has {} values, expected {}", frame.len(), skel.num_channels())));
        }
        let poses = skel.forward_kinematics(frame);
        let facing = facing_rotation(poses[lhip].position, poses[rhip].position)?;
        let inv = facing.inverse();
        let origin = poses[0].position;
        for (j, p) in poses.iter().enumerate() {
            let o = p.position - origin;
            let q = continuous(inv * p.rotation, prev.get(j));
            if prev.len() <= j {
                prev.push(q);
            } else {
                prev[j] = q;
            }
            joints.extend_from_slice(&[o.x, o.y, o.z, q[0], q[1], q[2], q[3]]);
        }
        let q = continuous(facing, prev_root.as_ref());
        prev_root = Some(q);
        root.extend_from_slice(&[origin.x, origin.y, origin.z, q[0], q[1], q[2], q[3]]);
    }
    MotionSequence::new(nj, joints, root, None, fps)
}

fn continuous(q: UnitQuaternion<f64>, prev: Option<&[f64; 4]>) -> [f64; 4] {
    let mut v = [q.w, q.i, q.j, q.k];
    // first frame: w >= 0; afterwards stay in the previous frame's hemisphere
    let flip = match prev {
        Some(p) => v.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() < 0.0,
        None => v[0] < 0.0,
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Yaw-only rotation taking world +x onto the body's forward direction, where
/// forward is the horizontal part of `up × (right_hip − left_hip)`.
pub fn facing_rotation(left_hip: Vector3<f64>, right_hip: Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let across = right_hip - left_hip;
    let fwd = Vector3::y().cross(&across);
    let h = Vector3::new(fwd.x, 0.0, fwd.z);
    if h.norm() < 1e-9 {
        return Err(Error::Motion("hip axis is vertical; facing direction undefined".into()));
    }
    let yaw = (-h.z).atan2(h.x);
    Ok(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw))
}

/// Rebuilds BVH channel frames for `skel` from a representation. Quaternions must
/// be unit length within 1e-3; non-root position channels are written as zero.
pub fn to_channel_frames(skel: &Skeleton, ms: &MotionSequence) -> Result<Vec<Vec<f64>>> {
    if ms.num_joints() != skel.len() {
        return Err(Error::Motion(format!("motion has {} joints, skeleton {}", ms.num_joints(), skel.len())));
    }
    let err = ms.max_quaternion_norm_error();
    if err > 1e-3 {
        return Err(Error::Motion(format!("quaternion norm off by {err:.3e}; normalize before export")));
    }
    for j in skel.joints() {
        if j.rotation_order().len() != 3 {
            return Err(Error::Motion(format!("joint `{}` must have three rotation channels", j.name)));
        }
    }
    let unit = |s: &[f64]| UnitQuaternion::from_quaternion(quat_from(s));
    let mut out = Vec::with_capacity(ms.len());
    for t in 0..ms.len() {
        let r = ms.root_at(t);
        let facing = unit(&r[3..]);
        let world: Vec<UnitQuaternion<f64>> = (0..skel.len()).map(|j| facing * unit(&ms.joint(t, j)[3..])).collect();
        let mut row = Vec::with_capacity(skel.num_channels());
        for (j, joint) in skel.joints().iter().enumerate() {
            let local = match joint.parent {
                None => world[j],
                Some(p) => world[p].inverse() * world[j],
            };
            let order = joint.rotation_order();
            let euler = quaternion_to_euler(&local, [order[0], order[1], order[2]]);
            let mut rot = euler.iter();
            for c in &joint.channels {
                if c.is_rotation() {
                    row.push(*rot.next().expect("three rotation channels"));
                } else if joint.parent.is_none() {
                    row.push(r[c.axis()] - joint.offset[c.axis()]);
                } else {
                    row.push(0.0);
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn track(t: usize, step: [f64; 3]) -> MotionSequence {
        let mut joints = Vec::new();
        let mut root = Vec::new();
        for i in 0..t {
            joints.extend_from_slice(&[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
            let f = i as f64;
            root.extend_from_slice(&[step[0] * f, step[1] * f, step[2] * f, 1.0, 0.0, 0.0, 0.0]);
        }
        MotionSequence::new(1, joints, root, None, 120.0).unwrap()
    }

    #[test]
    fn velocity_of_linear_track() {
        let ms = track(5, [1.0, 0.0, 0.0]);
        for t in 0..5 {
            assert_eq!(ms.velocity_at(t), &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn downsample_scales_velocity() {
        let ms = track(120, [0.5, 0.0, 0.25]);
        let d = ms.downsample(2).unwrap();
        assert_eq!(d.len(), 60);
        assert_eq!(d.fps, 60.0);
        assert_eq!(d.velocity_at(3), &[1.0, 0.0, 0.5, 0.0]);
        assert_eq!(ms.downsample(1).unwrap(), ms);
        assert!(track(3, [1.0; 3]).downsample(3).is_err());
        assert!(ms.downsample(0).is_err());
    }

    #[test]
    fn crop_contract() {
        let ms = track(10, [1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ms.random_crop(&mut rng, 10, 10).unwrap(), ms);
        assert!(ms.random_crop(&mut rng, 11, 20).is_err());
        let a = ms.crop_window(&mut ChaCha8Rng::seed_from_u64(9), 3, 8).unwrap();
        let b = ms.crop_window(&mut ChaCha8Rng::seed_from_u64(9), 3, 8).unwrap();
        assert_eq!(a, b);
        let c = ms.random_crop(&mut rng, 4, 6).unwrap();
        assert!((4..=6).contains(&c.len()));
    }

    #[test]
    fn wraps_angles() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn facing_of_default_pose() {
        // left hip at +x, right at −x => facing +z
        let q = facing_rotation(Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        assert!((q * Vector3::x() - Vector3::z()).norm() < 1e-12);
        assert!(facing_rotation(Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(MotionSequence::new(1, vec![0.0; 7], vec![0.0; 7], None, 60.0).is_err());
        assert!(MotionSequence::new(1, vec![0.0; 13], vec![0.0; 14], None, 60.0).is_err());
        assert!(MotionSequence::new(1, vec![f64::NAN; 14], vec![0.0; 14], None, 60.0).is_err());
    }
}
