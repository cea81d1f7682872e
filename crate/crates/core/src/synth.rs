//! Procedural mocap-like clips on a 31-joint skeleton, with styles that change
//! tempo, amplitude, posture and arm carriage.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::manifest::{format_manifest, ManifestEntry};
use crate::motion::skeleton::{Channel, Joint, Skeleton};
use crate::motion::{write_bvh_frames, BvhData, Clip, Labels, Preprocess};

pub const CONTENTS: [&str; 4] = ["walk", "punch", "kick", "jump"];
pub const STYLES: [&str; 4] = ["neutral", "proud", "old", "angry"];

const THIGH: f64 = 42.0;
const SHIN: f64 = 40.0;
/// Ankle height when the toe rests on the floor.
const ANKLE_REST: f64 = 6.0;
/// Hip joint position relative to the root, left side (x mirrored on the right).
const HIP: [f64; 3] = [9.0, -5.0, 0.0];
const STANCE: f64 = 0.6;

/// Posture and dynamics that define a style.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleParams {
    pub tempo: f64,
    pub amplitude: f64,
    /// Forward spine lean in degrees.
    pub lean: f64,
    /// Extra hip drop in centimeters.
    pub crouch: f64,
    /// Arm abduction added to the hanging pose, degrees.
    pub arm_raise: f64,
    /// Elbow flexion held throughout, degrees.
    pub elbow: f64,
}

impl StyleParams {
    pub fn named(name: &str) -> Option<Self> {
        let p = |tempo, amplitude, lean, crouch, arm_raise, elbow| StyleParams { tempo, amplitude, lean, crouch, arm_raise, elbow };
        Some(match name {
            "neutral" => p(1.0, 1.0, 0.0, 0.0, 0.0, 10.0),
            "proud" => p(0.9, 1.15, -12.0, 0.0, 18.0, 5.0),
            "old" => p(0.65, 0.6, 22.0, 7.0, 4.0, 35.0),
            "angry" => p(1.35, 1.25, 10.0, 3.0, 10.0, 60.0),
            _ => return None,
        })
    }
}

/// One clip to synthesize.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub content: String,
    pub style: String,
    pub frames: usize,
    pub fps: f64,
    /// Walking direction, degrees about +y.
    pub heading: f64,
    pub phase: f64,
    pub start: [f64; 2],
}

impl ClipSpec {
    pub fn new(content: &str, style: &str) -> Self {
        ClipSpec {
            content: content.into(),
            style: style.into(),
            frames: 240,
            fps: 120.0,
            heading: 0.0,
            phase: 0.0,
            start: [0.0, 0.0],
        }
    }
}

/// The 31-joint source skeleton: centimeters, +y up, facing +z, left side on +x.
pub fn source_skeleton() -> Skeleton {
    let root = [Channel::Xposition, Channel::Yposition, Channel::Zposition, Channel::Zrotation, Channel::Yrotation, Channel::Xrotation];
    let rot = [Channel::Zrotation, Channel::Yrotation, Channel::Xrotation];
    let mut joints: Vec<Joint> = Vec::new();
    let add = |name: &str, parent: Option<&str>, o: [f64; 3], end: Option<[f64; 3]>, joints_ref: &mut Vec<Joint>| {
        let parent = parent.map(|p| joints_ref.iter().position(|j| j.name == p).expect("parent declared first"));
        joints_ref.push(Joint {
            name: name.into(),
            parent,
            offset: Vector3::from(o),
            channels: if parent.is_none() { root.to_vec() } else { rot.to_vec() },
            end_site: end.map(Vector3::from),
        });
    };
    add("Hips", None, [0.0, 0.0, 0.0], None, &mut joints);
    for (side, s) in [("Left", 1.0), ("Right", -1.0)] {
        let hip = format!("{}HipJoint", &side[..1]);
        add(&hip, Some("Hips"), [5.0 * s, -2.0, 0.0], None, &mut joints);
        add(&format!("{side}UpLeg"), Some(&hip), [4.0 * s, -3.0, 0.0], None, &mut joints);
        add(&format!("{side}Leg"), Some(&format!("{side}UpLeg")), [0.0, -THIGH, 0.0], None, &mut joints);
        add(&format!("{side}Foot"), Some(&format!("{side}Leg")), [0.0, -SHIN, 0.0], None, &mut joints);
        add(&format!("{side}ToeBase"), Some(&format!("{side}Foot")), [0.0, -ANKLE_REST, 14.0], Some([0.0, 0.0, 5.0]), &mut joints);
    }
    add("LowerBack", Some("Hips"), [0.0, 5.0, 0.0], None, &mut joints);
    add("Spine", Some("LowerBack"), [0.0, 10.0, 0.0], None, &mut joints);
    add("Spine1", Some("Spine"), [0.0, 12.0, 0.0], None, &mut joints);
    add("Neck", Some("Spine1"), [0.0, 12.0, 0.0], None, &mut joints);
    add("Neck1", Some("Neck"), [0.0, 5.0, 0.0], None, &mut joints);
    add("Head", Some("Neck1"), [0.0, 6.0, 0.0], Some([0.0, 15.0, 0.0]), &mut joints);
    for (side, s) in [("Left", 1.0), ("Right", -1.0)] {
        let short = &side[..1];
        add(&format!("{side}Shoulder"), Some("Spine1"), [4.0 * s, 10.0, 0.0], None, &mut joints);
        add(&format!("{side}Arm"), Some(&format!("{side}Shoulder")), [14.0 * s, 0.0, 0.0], None, &mut joints);
        add(&format!("{side}ForeArm"), Some(&format!("{side}Arm")), [28.0 * s, 0.0, 0.0], None, &mut joints);
        add(&format!("{side}Hand"), Some(&format!("{side}ForeArm")), [24.0 * s, 0.0, 0.0], None, &mut joints);
        add(&format!("{side}FingerBase"), Some(&format!("{side}Hand")), [4.0 * s, 0.0, 0.0], None, &mut joints);
        add(&format!("{side}HandIndex1"), Some(&format!("{side}FingerBase")), [3.0 * s, 0.0, 0.0], Some([3.0 * s, 0.0, 0.0]), &mut joints);
        add(&format!("{short}Thumb"), Some(&format!("{side}Hand")), [2.0 * s, 0.0, 2.0], Some([2.0 * s, 0.0, 2.0]), &mut joints);
    }
    Skeleton::new(joints).expect("static skeleton is well formed")
}

/// Hip pitch, knee and ankle angles (degrees, about +x) placing the ankle at
/// `d` relative to the hip joint while keeping the foot level.
fn leg_ik(dy: f64, dz: f64) -> [f64; 3] {
    let d = (dy * dy + dz * dz).sqrt().clamp(1.0, THIGH + SHIN - 1e-3);
    let phi = (-dz).atan2(-dy);
    let alpha = ((THIGH * THIGH + d * d - SHIN * SHIN) / (2.0 * THIGH * d)).clamp(-1.0, 1.0).acos();
    let a = phi - alpha;
    let (ky, kz) = (-THIGH * a.cos(), -THIGH * a.sin());
    let scale = d / (dy * dy + dz * dz).sqrt().max(1e-12);
    let (sy, sz) = (dy * scale - ky, dz * scale - kz);
    let ab = (-sz).atan2(-sy);
    [a.to_degrees(), (ab - a).to_degrees(), -ab.to_degrees()]
}

#[derive(Clone, Copy, Default)]
struct Arm {
    raise: f64,
    swing: f64,
    twist: f64,
    elbow: f64,
}

enum Leg {
    /// Ankle target: world height, and forward position relative to the root.
    Ik(Vector3<f64>),
    Angles([f64; 3]),
}

struct Pose {
    /// Root position in the path frame (before heading).
    root: Vector3<f64>,
    lean: f64,
    twist: f64,
    head: f64,
    arms: [Arm; 2],
    legs: [Leg; 2],
}

fn smooth_step(w: f64) -> f64 {
    w - (TAU * w).sin() / TAU
}

/// Whether each foot (left, right) is planted at frame `t` of a walk clip.
pub fn walk_stance(spec: &ClipSpec, t: usize) -> Result<[bool; 2]> {
    let style = style_of(spec)?;
    let period = walk_period(spec, &style);
    Ok(std::array::from_fn(|leg| {
        let u = (t as f64 / period + spec.phase + 0.5 * leg as f64).rem_euclid(1.0);
        u < STANCE
    }))
}

fn walk_period(spec: &ClipSpec, style: &StyleParams) -> f64 {
    spec.fps / style.tempo
}

fn style_of(spec: &ClipSpec) -> Result<StyleParams> {
    StyleParams::named(&spec.style).ok_or_else(|| Error::Config(format!("unknown synthetic style `{}`", spec.style)))
}

fn pose_at(spec: &ClipSpec, style: &StyleParams, t: usize) -> Result<Pose> {
    let amp = style.amplitude;
    let base_y = ANKLE_REST - HIP[1] + 78.0 - style.crouch;
    let mut pose = Pose {
        root: Vector3::new(0.0, base_y, 0.0),
        lean: style.lean,
        twist: 0.0,
        head: -0.5 * style.lean,
        arms: [Arm { raise: style.arm_raise, elbow: style.elbow, ..Arm::default() }; 2],
        legs: [Leg::Ik(Vector3::new(HIP[0], ANKLE_REST, 0.0)), Leg::Ik(Vector3::new(-HIP[0], ANKLE_REST, 0.0))],
    };
    let time = t as f64 / spec.fps;
    match spec.content.as_str() {
        "walk" => {
            let period = walk_period(spec, style);
            let stride = 50.0 * amp.min(1.3);
            let tau = t as f64 / period + spec.phase;
            pose.root.z = stride * (tau - spec.phase);
            pose.root.y += 1.2 * amp * (2.0 * TAU * tau).cos();
            for leg in 0..2 {
                let off = 0.5 * leg as f64;
                let shifted = tau + off;
                let k = shifted.floor();
                let u = shifted - k;
                let origin = -stride * (spec.phase + off);
                let plant = |k: f64| origin + stride * (k + 0.5 * STANCE);
                let (z, y) = if u < STANCE {
                    (plant(k), ANKLE_REST)
                } else {
                    let w = (u - STANCE) / (1.0 - STANCE);
                    (plant(k) + stride * smooth_step(w), ANKLE_REST + (8.0 + 4.0 * amp) * (PI * w).sin())
                };
                let side = if leg == 0 { 1.0 } else { -1.0 };
                pose.legs[leg] = Leg::Ik(Vector3::new(side * HIP[0], y, z - pose.root.z));
                // arms swing against the opposite leg
                pose.arms[1 - leg].swing = 22.0 * amp * (TAU * shifted).sin();
            }
            pose.twist = 6.0 * amp * (TAU * tau).sin();
        }
        "punch" => {
            let rate = 0.9 * style.tempo;
            for arm in 0..2 {
                let ph = (rate * time + spec.phase + 0.5 * arm as f64).rem_euclid(1.0);
                let strike = if ph < 0.5 { (PI * ph / 0.5).sin().powi(2) } else { 0.0 };
                pose.arms[arm].raise = style.arm_raise + 40.0 + 30.0 * strike * amp;
                pose.arms[arm].swing = 30.0 + 55.0 * strike * amp.min(1.2);
                pose.arms[arm].elbow = (100.0 - 95.0 * strike).max(style.elbow.min(100.0) * (1.0 - strike));
                pose.twist += if arm == 0 { -15.0 } else { 15.0 } * strike * amp;
            }
            pose.root.y -= 4.0;
            for leg in 0..2 {
                let side = if leg == 0 { 1.0 } else { -1.0 };
                pose.legs[leg] = Leg::Ik(Vector3::new(side * HIP[0], ANKLE_REST, if leg == 0 { 12.0 } else { -12.0 }));
            }
        }
        "kick" => {
            let ph = (0.7 * style.tempo * time + spec.phase).rem_euclid(1.0);
            let kick = if ph < 0.6 { (PI * ph / 0.6).sin() } else { 0.0 };
            let hip = -75.0 * amp.min(1.2) * kick;
            let knee = 70.0 * (PI * ph / 0.6).sin().abs() * (1.0 - kick) + 10.0;
            pose.legs[1] = Leg::Angles([hip, knee, -(hip + knee) * 0.5]);
            pose.arms[0].raise = style.arm_raise + 25.0 * kick;
            pose.arms[1].raise = style.arm_raise + 25.0 * kick;
            pose.arms[0].swing = -20.0 * kick;
            pose.arms[1].swing = 25.0 * kick;
            pose.lean -= 15.0 * kick;
        }
        "jump" => {
            let ph = (0.75 * style.tempo * time + spec.phase).rem_euclid(1.0);
            // crouch, push, flight, land
            let dy = if ph < 0.3 {
                -16.0 * (PI * ph / 0.3).sin()
            } else if ph < 0.65 {
                let w = (ph - 0.3) / 0.35;
                26.0 * amp * (PI * w).sin()
            } else {
                -10.0 * (PI * (ph - 0.65) / 0.35).sin()
            };
            pose.root.y += dy;
            let flight = dy.max(0.0);
            pose.arms[0].swing = 40.0 * amp * (ph * TAU).sin();
            pose.arms[1].swing = 40.0 * amp * (ph * TAU).sin();
            pose.arms[0].raise += 30.0 * (flight / 26.0);
            pose.arms[1].raise += 30.0 * (flight / 26.0);
            for leg in 0..2 {
                let side = if leg == 0 { 1.0 } else { -1.0 };
                pose.legs[leg] = Leg::Ik(Vector3::new(side * HIP[0], ANKLE_REST + flight, 0.0));
            }
        }
        other => return Err(Error::Config(format!("unknown synthetic content `{other}`"))),
    }
    Ok(pose)
}

fn frame_channels(skel: &Skeleton, spec: &ClipSpec, pose: &Pose, finger: f64) -> Vec<f64> {
    let heading = spec.heading.to_radians();
    let (s, c) = heading.sin_cos();
    // heading is a yaw about +y: world = Ry(heading) · path
    let world_root = Vector3::new(c * pose.root.x + s * pose.root.z + spec.start[0], pose.root.y, -s * pose.root.x + c * pose.root.z + spec.start[1]);
    let mut row = Vec::with_capacity(skel.num_channels());
    for joint in skel.joints() {
        let name = joint.name.as_str();
        // [z, y, x] degrees for the ZYX joints
        let zyx: [f64; 3] = match name {
            "Spine" | "Spine1" => [0.0, pose.twist * 0.5, pose.lean * 0.5],
            "Neck1" => [0.0, 0.0, 0.0],
            "Head" => [0.0, -pose.twist * 0.3, pose.head],
            "LeftArm" | "RightArm" => {
                let (i, sgn) = if name == "LeftArm" { (0, 1.0) } else { (1, -1.0) };
                let a = pose.arms[i];
                [sgn * (-70.0 + a.raise), sgn * -a.swing, a.twist]
            }
            "LeftForeArm" | "RightForeArm" => {
                let (i, sgn) = if name == "LeftForeArm" { (0, 1.0) } else { (1, -1.0) };
                [0.0, sgn * -pose.arms[i].elbow, 0.0]
            }
            "LeftFingerBase" | "RightFingerBase" | "LeftHandIndex1" | "RightHandIndex1" => [finger, 0.0, 0.5 * finger],
            "LThumb" | "RThumb" => [0.0, finger, 0.0],
            "LeftUpLeg" | "LeftLeg" | "LeftFoot" | "RightUpLeg" | "RightLeg" | "RightFoot" => {
                let leg = usize::from(name.starts_with("Right"));
                let angles = match &pose.legs[leg] {
                    Leg::Angles(a) => *a,
                    Leg::Ik(target) => leg_ik(target.y - (pose.root.y + HIP[1]), target.z),
                };
                let k = if name.ends_with("UpLeg") {
                    0
                } else if name.ends_with("Leg") {
                    1
                } else {
                    2
                };
                [0.0, 0.0, angles[k]]
            }
            _ => [0.0, 0.0, 0.0],
        };
        if joint.parent.is_none() {
            row.extend_from_slice(&[world_root.x, world_root.y, world_root.z, 0.0, spec.heading, 0.0]);
        } else {
            row.extend_from_slice(&zyx);
        }
    }
    row
}

/// Synthesizes one clip as raw BVH data on [`source_skeleton`].
pub fn synthesize(spec: &ClipSpec) -> Result<BvhData> {
    if spec.frames < 2 || spec.fps <= 0.0 {
        return Err(Error::Config("synthetic clips need at least 2 frames and a positive frame rate".into()));
    }
    let style = style_of(spec)?;
    let skeleton = source_skeleton();
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let pose = pose_at(spec, &style, t)?;
        let finger = 15.0 * (t as f64 / spec.fps * TAU * 0.5).sin();
        frames.push(frame_channels(&skeleton, spec, &pose, finger));
    }
    Ok(BvhData { skeleton, frames, frame_time: 1.0 / spec.fps })
}

/// Options for [`write_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub styles: Vec<String>,
    pub contents: Vec<String>,
    /// Clips per (style, content) cell; variant 0 goes to the training manifest.
    pub variants: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            styles: STYLES.iter().map(|s| s.to_string()).collect(),
            contents: CONTENTS.iter().map(|s| s.to_string()).collect(),
            variants: 2,
            frames: 240,
            seed: 7,
        }
    }
}

/// Clip specifications for a corpus; variant 0 of each cell is canonical, later
/// variants jitter phase, heading and start position.
pub fn corpus_specs(spec: &CorpusSpec) -> Vec<(ClipSpec, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for style in &spec.styles {
        for content in &spec.contents {
            for v in 0..spec.variants {
                let mut c = ClipSpec::new(content, style);
                c.frames = spec.frames;
                if v > 0 {
                    c.phase = rng.random_range(0.0..1.0);
                    c.heading = rng.random_range(-180.0..180.0);
                    c.start = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
                }
                out.push((c, v));
            }
        }
    }
    out
}

/// Synthesizes and preprocesses every clip of `spec` in memory, returning each
/// with its labels and variant number.
pub fn corpus_clips(spec: &CorpusSpec, pre: &Preprocess) -> Result<Vec<(Clip, Labels, usize)>> {
    corpus_specs(spec)
        .into_iter()
        .map(|(clip, variant)| {
            let c = pre.clip_from_bvh(&synthesize(&clip)?)?;
            Ok((c, Labels { style: Some(clip.style), content: Some(clip.content) }, variant))
        })
        .collect()
}

/// Writes every clip of `spec` as BVH into `dir`, plus `train.csv` (variant 0),
/// `test.csv` (other variants) and `all.csv` manifests. Returns the manifest paths.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (clip, variant) in corpus_specs(spec) {
        let data = synthesize(&clip)?;
        let name = format!("{}_{}_{}.bvh", clip.style, clip.content, variant);
        let path = dir.join(&name);
        let text = write_bvh_frames(&data.skeleton, &data.frames, data.frame_time)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let entry = ManifestEntry { path, style: clip.style.clone(), content: clip.content.clone() };
        if variant == 0 {
            train.push(entry);
        } else {
            test.push(entry);
        }
    }
    let all: Vec<ManifestEntry> = train.iter().chain(&test).cloned().collect();
    let mut written = Vec::new();
    for (name, entries) in [("train.csv", &train), ("test.csv", &test), ("all.csv", &all)] {
        if entries.is_empty() {
            continue;
        }
        let path = dir.join(name);
        std::fs::write(&path, format_manifest(entries, dir)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn has_31_joints() {
        let s = source_skeleton();
        assert_eq!(s.len(), 31);
        assert_eq!(s.num_channels(), 6 + 30 * 3);
    }

    #[test]
    fn leg_ik_reaches_target() {
        let skel = source_skeleton();
        let ankle = skel.require("LeftFoot").unwrap();
        for (dy, dz) in [(-78.0, 0.0), (-75.0, 15.0), (-70.0, -18.0), (-60.0, 5.0)] {
            let [a, b, c] = leg_ik(dy, dz);
            let mut frame = vec![0.0; skel.num_channels()];
            for (name, v) in [("LeftUpLeg", a), ("LeftLeg", b), ("LeftFoot", c)] {
                let j = skel.require(name).unwrap();
                frame[skel.channel_start(j) + 2] = v;
            }
            let poses = skel.forward_kinematics(&frame);
            let hip = Vector3::new(HIP[0], HIP[1], HIP[2]);
            let want = hip + Vector3::new(0.0, dy, dz);
            assert!((poses[ankle].position - want).norm() < 1e-9, "{dy} {dz}: {:?}", poses[ankle].position);
            assert!(poses[ankle].rotation.angle() < 1e-9, "foot level");
            // knee bends forward
            let knee = poses[skel.require("LeftLeg").unwrap()].position;
            let mid = (hip + want) / 2.0;
            assert!(knee.z >= mid.z - 1e-9);
        }
    }

    #[test]
    fn every_cell_synthesizes() {
        for s in STYLES {
            for c in CONTENTS {
                let d = synthesize(&ClipSpec::new(c, s)).unwrap();
                assert_eq!(d.frames.len(), 240);
                assert!(d.frames.iter().flatten().all(|v| v.is_finite()));
            }
        }
        assert!(synthesize(&ClipSpec::new("dance", "neutral")).is_err());
        assert!(synthesize(&ClipSpec::new("walk", "sleepy")).is_err());
    }

    #[test]
    fn stance_feet_stay_planted() {
        let spec = ClipSpec { heading: 40.0, start: [10.0, -5.0], ..ClipSpec::new("walk", "neutral") };
        let d = synthesize(&spec).unwrap();
        let toe = d.skeleton.require("LeftToeBase").unwrap();
        let mut prev: Option<Vector3<f64>> = None;
        for t in 0..d.frames.len() {
            let p = d.skeleton.forward_kinematics(&d.frames[t])[toe].position;
            let both = walk_stance(&spec, t).unwrap()[0] && t > 0 && walk_stance(&spec, t - 1).unwrap()[0];
            if let (true, Some(q)) = (both, prev) {
                assert!((p - q).norm() < 1e-6, "frame {t}: toe slid {}", (p - q).norm());
                assert!(p.y.abs() < 1e-6);
            }
            prev = Some(p);
        }
    }
}
