use motion_style::motion::retarget::named_positions;
use motion_style::motion::sequence::to_channel_frames;
use motion_style::motion::{
    detect_foot_contacts, parse_bvh, retarget, to_motion_sequence, write_bvh_frames, write_motion_bvh, BodyLayout,
    ContactThresholds, JointMap, MotionSequence, Preprocess,
};
use motion_style::synth::{self, ClipSpec, CorpusSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kept_names() -> Vec<String> {
    JointMap::default().entries().iter().map(|(t, _)| t.clone()).collect()
}

#[test]
fn raw_round_trip_is_exact_to_print_precision() {
    for (spec, _) in synth::corpus_specs(&CorpusSpec::default()).into_iter().take(20) {
        let data = synth::synthesize(&spec).unwrap();
        let first = parse_bvh(&write_bvh_frames(&data.skeleton, &data.frames, data.frame_time).unwrap()).unwrap();
        let second = parse_bvh(&write_bvh_frames(&first.skeleton, &first.frames, first.frame_time).unwrap()).unwrap();
        assert_eq!(first.skeleton, second.skeleton);
        assert_eq!(first.frame_time, second.frame_time);
        for (a, b) in first.frames.iter().flatten().zip(second.frames.iter().flatten()) {
            assert!((a - b).abs() <= 1e-4);
        }
    }
}

#[test]
fn retarget_preserves_kept_positions() {
    let names = kept_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    for content in synth::CONTENTS {
        let spec = ClipSpec { heading: 33.0, phase: 0.3, ..ClipSpec::new(content, "old") };
        let data = synth::synthesize(&spec).unwrap();
        let (skel21, frames21) = retarget(&data.skeleton, &data.frames, &JointMap::default()).unwrap();
        assert_eq!(skel21.len(), 21);
        for (src, dst) in data.frames.iter().zip(&frames21).step_by(7) {
            let a = named_positions(&data.skeleton, src, &refs).unwrap();
            let b = named_positions(&skel21, dst, &refs).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).norm() < 1e-6, "{content}: {}", (p - q).norm());
            }
        }
    }
}

#[test]
fn retarget_identity_and_rest_pose() {
    let data = synth::synthesize(&ClipSpec::new("punch", "angry")).unwrap();
    let (s, f) = retarget(&data.skeleton, &data.frames, &JointMap::identity(&data.skeleton)).unwrap();
    assert_eq!(s, data.skeleton);
    assert_eq!(f, data.frames);

    let zeros = vec![vec![0.0; data.skeleton.num_channels()]; 2];
    let (s21, f21) = retarget(&data.skeleton, &zeros, &JointMap::default()).unwrap();
    assert!(f21.iter().flatten().all(|v| v.abs() < 1e-12));
    assert_eq!(s21.joint(s21.require("Spine").unwrap()).offset.y, 15.0);

    let err = retarget(&data.skeleton, &zeros, &JointMap::parse("Hips = Hips\nTail = Tail").unwrap());
    assert!(matches!(err, Err(motion_style::Error::Config(_))));
}

#[test]
fn representation_properties_on_corpus() {
    let pre = Preprocess::default();
    for (spec, _) in synth::corpus_specs(&CorpusSpec::default()) {
        let clip = pre.clip_from_bvh(&synth::synthesize(&spec).unwrap()).unwrap();
        assert!(clip.motion.max_quaternion_norm_error() < 1e-6);
        assert_eq!(clip.motion.num_joints(), 21);
        assert_eq!(clip.motion.len(), 120);
        assert_eq!(clip.motion.fps, 60.0);
    }
}

#[test]
fn static_pose_has_zero_velocity() {
    let skel = synth::source_skeleton();
    let (s21, f21) = retarget(&skel, &vec![vec![0.0; skel.num_channels()]; 2], &JointMap::default()).unwrap();
    let ms = to_motion_sequence(&s21, &f21, 120.0, &BodyLayout::default()).unwrap();
    assert!(ms.velocity().iter().all(|&v| v == 0.0));
    assert_eq!(ms.joint(0, 5), ms.joint(1, 5));
    let text = write_motion_bvh(&s21, &ms).unwrap();
    let back = parse_bvh(&text).unwrap();
    assert!(back.frames.iter().flatten().all(|v| v.abs() < 1e-9));
    assert_eq!(back.frames.len(), 2);
}

#[test]
fn translating_root_velocity() {
    let skel = synth::source_skeleton();
    let mut frames = vec![vec![0.0; skel.num_channels()]; 4];
    for (t, f) in frames.iter_mut().enumerate() {
        f[0] = t as f64;
    }
    let (s21, f21) = retarget(&skel, &frames, &JointMap::default()).unwrap();
    let ms = to_motion_sequence(&s21, &f21, 120.0, &BodyLayout::default()).unwrap();
    for t in 0..4 {
        let v = ms.velocity_at(t);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12 && v[3].abs() < 1e-12);
    }
}

#[test]
fn representation_round_trips_through_bvh() {
    let pre = Preprocess { downsample: 1, ..Preprocess::default() };
    for content in synth::CONTENTS {
        let spec = ClipSpec { heading: -120.0, phase: 0.7, ..ClipSpec::new(content, "proud") };
        let clip = pre.clip_from_bvh(&synth::synthesize(&spec).unwrap()).unwrap();
        let text = write_motion_bvh(&clip.skeleton, &clip.motion).unwrap();
        let again = pre.clip_from_bvh(&parse_bvh(&text).unwrap()).unwrap();
        assert_eq!(again.motion.len(), clip.motion.len());
        let diff = clip
            .motion
            .joints()
            .iter()
            .zip(again.motion.joints())
            .chain(clip.motion.root().iter().zip(again.motion.root()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{content}: {diff}");
    }
}

#[test]
fn export_rejects_non_unit_quaternions() {
    let pre = Preprocess::default();
    let clip = pre.clip_from_bvh(&synth::synthesize(&ClipSpec::new("walk", "neutral")).unwrap()).unwrap();
    let mut joints = clip.motion.joints().to_vec();
    joints[3] *= 1.1;
    let bad = MotionSequence::new(21, joints, clip.motion.root().to_vec(), None, 60.0).unwrap();
    assert!(to_channel_frames(&clip.skeleton, &bad).is_err());
    assert!(write_motion_bvh(&clip.skeleton, &bad).is_ok());
}

#[test]
fn walk_contacts_follow_script() {
    let pre = Preprocess::default();
    for style in synth::STYLES {
        let spec = ClipSpec { heading: 25.0, ..ClipSpec::new("walk", style) };
        let clip = pre.clip_from_bvh(&synth::synthesize(&spec).unwrap()).unwrap();
        let mut agree = 0;
        let mut total = 0;
        for t in 0..clip.motion.len() {
            let stance = synth::walk_stance(&spec, 2 * t).unwrap();
            for (f, leg) in [0, 0, 1, 1].into_iter().enumerate() {
                total += 1;
                agree += usize::from(clip.contacts.contacts[f][t] == stance[leg]);
            }
        }
        let rate = agree as f64 / total as f64;
        assert!(rate >= 0.95, "{style}: {rate}");
    }
}

#[test]
fn contact_edge_cases() {
    let pre = Preprocess::default();
    let skel = synth::source_skeleton();
    let (s21, f21) = retarget(&skel, &vec![vec![0.0; skel.num_channels()]; 5], &JointMap::default()).unwrap();
    let ms = to_motion_sequence(&s21, &f21, 60.0, &BodyLayout::default()).unwrap();
    let feet = pre.foot_joints(&s21).unwrap();
    let m = detect_foot_contacts(&ms, feet, ContactThresholds::default()).unwrap();
    assert!(m.contacts.iter().all(|c| c.iter().all(|&x| x)));
    assert_eq!(m.counts(), [5; 4]);

    let spec = ClipSpec::new("jump", "neutral");
    let clip = pre.clip_from_bvh(&synth::synthesize(&spec).unwrap()).unwrap();
    let toe = feet[0];
    let apex = (0..clip.motion.len())
        .max_by(|&a, &b| clip.motion.world_position(a, toe).y.total_cmp(&clip.motion.world_position(b, toe).y))
        .unwrap();
    assert!(clip.motion.world_position(apex, toe).y > 20.0);
    assert!(clip.contacts.contacts.iter().all(|c| !c[apex]));

    // horizontal translation of the clip leaves the mask unchanged
    let mut data = synth::synthesize(&ClipSpec::new("walk", "old")).unwrap();
    let base = pre.clip_from_bvh(&data).unwrap();
    for f in &mut data.frames {
        f[0] += 123.0;
        f[2] -= 45.5;
    }
    assert_eq!(pre.clip_from_bvh(&data).unwrap().contacts, base.contacts);
}

#[test]
fn crop_start_is_uniform() {
    let pre = Preprocess { downsample: 1, ..Preprocess::default() };
    let spec = ClipSpec { frames: 200, ..ClipSpec::new("walk", "neutral") };
    let clip = pre.clip_from_bvh(&synth::synthesize(&spec).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // fixed length isolates the start distribution: 137 possible starts
    let mut counts = vec![0usize; 137];
    let draws = 10_000;
    for _ in 0..draws {
        let (start, len) = clip.motion.crop_window(&mut rng, 64, 64).unwrap();
        assert_eq!(len, 64);
        counts[start] += 1;
    }
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 136 degrees of freedom
    assert!(chi2 < 176.1, "chi2 = {chi2}");

    let mut lens = std::collections::BTreeSet::new();
    for _ in 0..2000 {
        lens.insert(clip.motion.crop_window(&mut rng, 64, 300).unwrap().1);
    }
    assert_eq!(*lens.first().unwrap(), 64);
    assert_eq!(*lens.last().unwrap(), 200);
}
