mod common;

use common::*;
use motion_style::losses::{
    acceleration_reg, adversarial_d, adversarial_g, foot_contact_reg, seq_distance, seq_distance_values, total_loss,
    velocity_reg, Channels, LossTerms,
};
use motion_style::model::{FeatureStats, LossWeights, MotionVars};
use motion_style::motion::{FootContactMask, MotionSequence, JOINT_DIM, VEL_DIM};
use proptest::prelude::*;
use tapegrad::Tensor;

const NJ: usize = 21;

fn motion(joints: Vec<f64>, root: Vec<f64>, vel: Vec<f64>) -> MotionSequence {
    MotionSequence::new(NJ, joints, root, Some(vel), 60.0).unwrap()
}

fn zeros(t: usize) -> MotionSequence {
    motion(vec![0.0; t * NJ * JOINT_DIM], vec![0.0; t * JOINT_DIM], vec![0.0; t * VEL_DIM])
}

fn random(seed: u64, t: usize) -> MotionSequence {
    let mut r = rng(seed);
    let mut v = |n| Tensor::randn(vec![n], 1.0, &mut r).data().to_vec();
    motion(v(t * NJ * JOINT_DIM), v(t * JOINT_DIM), v(t * VEL_DIM))
}

fn tape_value(f: impl FnOnce(&mut motion_style::model::Ctx<'_>) -> tapegrad::Var) -> f64 {
    let store = tapegrad::ParamStore::new();
    let mut ctx = motion_style::model::Ctx::new(&store);
    let v = f(&mut ctx);
    ctx.value(v).item()
}

fn vars(ctx: &mut motion_style::model::Ctx<'_>, ms: &MotionSequence) -> MotionVars {
    MotionVars::constant(ctx, ms, &FeatureStats::identity(NJ), None).unwrap()
}

#[test]
fn seq_distance_hand_example() {
    let a = zeros(2);
    let mut j = vec![0.0; 2 * NJ * JOINT_DIM];
    j[0] = 3.0;
    j[1] = 4.0;
    let mut root = vec![0.0; 2 * JOINT_DIM];
    root[JOINT_DIM] = 2.0;
    let mut vel = vec![0.0; 2 * VEL_DIM];
    vel[3] = -1.0;
    let b = motion(j, root, vel);
    assert_eq!(seq_distance_values(&a, &b, Channels::JointsOnly).unwrap(), 5.0);
    assert_eq!(seq_distance_values(&a, &b, Channels::All).unwrap(), 8.0);
    let d = tape_value(|ctx| {
        let (x, y) = (vars(ctx, &a), vars(ctx, &b));
        seq_distance(ctx, &x, &y, Channels::All).unwrap()
    });
    assert_eq!(d, 8.0);
}

#[test]
fn seq_distance_rejects_mismatched_lengths() {
    let store = tapegrad::ParamStore::new();
    let mut ctx = motion_style::model::Ctx::new(&store);
    let (x, y) = (vars(&mut ctx, &zeros(3)), vars(&mut ctx, &zeros(4)));
    assert!(seq_distance(&mut ctx, &x, &y, Channels::All).is_err());
    assert!(seq_distance_values(&zeros(3), &zeros(4), Channels::All).is_err());
}

#[test]
fn regularizers_on_static_and_uniform_motion() {
    let still = random(1, 2);
    let reps = 5;
    let rep = |buf: &[f64], w: usize| (0..reps).flat_map(|_| buf[..w].to_vec()).collect::<Vec<_>>();
    let s = motion(rep(still.joints(), NJ * JOINT_DIM), rep(still.root(), JOINT_DIM), vec![0.0; reps * VEL_DIM]);
    let (v, a) = {
        let store = tapegrad::ParamStore::new();
        let mut ctx = motion_style::model::Ctx::new(&store);
        let m = vars(&mut ctx, &s);
        let v = velocity_reg(&mut ctx, &m).unwrap();
        let a = acceleration_reg(&mut ctx, &m).unwrap();
        (ctx.value(v).item(), ctx.value(a).item())
    };
    assert_eq!((v, a), (0.0, 0.0));

    // every channel rises by 1 per frame: R_vel = (21*sqrt7 + sqrt7), R_acc = 0
    let t = 6;
    let ramp = |w: usize| (0..t).flat_map(|f| vec![f as f64; w]).collect::<Vec<_>>();
    let u = motion(ramp(NJ * JOINT_DIM), ramp(JOINT_DIM), vec![1.0; t * VEL_DIM]);
    let store = tapegrad::ParamStore::new();
    let mut ctx = motion_style::model::Ctx::new(&store);
    let m = vars(&mut ctx, &u);
    let v = velocity_reg(&mut ctx, &m).unwrap();
    let a = acceleration_reg(&mut ctx, &m).unwrap();
    assert!((ctx.value(v).item() - 22.0 * 7f64.sqrt()).abs() < 1e-12);
    assert!(ctx.value(a).item().abs() < 1e-12);
}

fn contacts(flags: [Vec<bool>; 4]) -> FootContactMask {
    FootContactMask { joints: [16, 17, 19, 20], contacts: flags }
}

#[test]
fn foot_term_ignores_frames_outside_contact() {
    let base = random(2, 5);
    let mask = contacts([vec![true, false, false, true, true], vec![false; 5], vec![false; 5], vec![false; 5]]);
    let eval = |ms: &MotionSequence| {
        tape_value(|ctx| {
            let m = vars(ctx, ms);
            foot_contact_reg(ctx, &m, &mask).unwrap()
        })
    };
    let mut moved = base.joints().to_vec();
    // frame 2 of the left toe sits between two non-contact frames
    let at = (2 * NJ + 16) * JOINT_DIM;
    moved[at..at + JOINT_DIM].iter_mut().for_each(|v| *v += 10.0);
    // other joints do not enter at all
    moved[(3 * NJ + 5) * JOINT_DIM] += 4.0;
    let b = motion(moved, base.root().to_vec(), base.velocity().to_vec());
    assert_eq!(eval(&base), eval(&b));

    let none = contacts([vec![false; 5], vec![false; 5], vec![false; 5], vec![false; 5]]);
    let z = tape_value(|ctx| {
        let m = vars(ctx, &base);
        foot_contact_reg(ctx, &m, &none).unwrap()
    });
    assert_eq!(z, 0.0);
}

#[test]
fn adversarial_terms_at_chance() {
    let store = tapegrad::ParamStore::new();
    let mut ctx = motion_style::model::Ctx::new(&store);
    let half = ctx.tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
    let d = adversarial_d(&mut ctx, half, half).unwrap();
    let g = adversarial_g(&mut ctx, half);
    assert!((ctx.value(d).item() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    assert!((ctx.value(g).item() - 0.5f64.ln()).abs() < 1e-15);
    let one = ctx.tape.constant(Tensor::new(vec![1], vec![1.0]).unwrap());
    let g = adversarial_g(&mut ctx, one);
    assert!(ctx.value(g).item().is_finite());
}

#[test]
fn cycle_terms_compare_against_their_own_inputs() {
    // transfer(S, G) must be compared with S and transfer(G, C) with C; swapping the
    // arguments would break the reconstruction-on-identity property below.
    let data = four_clips();
    let m = model(&data, tiny_hp(), 2);
    let c = crop(find(&data, "neutral", "walk"), 0, 6);
    let mut ctx = m.ctx();
    let ci = m.input(&mut ctx, &c.motion).unwrap();
    let ec = m.encode(&mut ctx, &ci).unwrap();
    let r = m.transfer(&mut ctx, &ec, &ec).unwrap();
    let t = motion_style::train::Triplet { content: c.clone(), style: c.clone(), style_b: None };
    let obj = motion_style::train::sample_objective(&m, &mut ctx, &t).unwrap();
    let recon = seq_distance(&mut ctx, &r, &ci, Channels::All).unwrap();
    let (rv, sv) = (ctx.value(recon).item(), ctx.value(obj.terms.recon).item());
    assert_eq!(rv, sv);
    assert_eq!(ctx.value(obj.terms.disentangle).item(), 0.0);
}

#[test]
fn default_weights_and_unit_total() {
    let w = LossWeights::default();
    let ones = LossTerms { disentangle: 1.0, vel: 1.0, acc: 1.0, foot: 1.0, adv_g: 1.0, recon: 1.0, cyc_s: 1.0, cyc_c: 1.0 };
    assert!((total_loss(&ones, &w) - (1.0 + 1.0 + 3.0 + 6.0 + 1.0 + 0.1 + 1.0)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn total_loss_is_linear(a in prop::array::uniform8(-100.0f64..100.0), b in prop::array::uniform8(-100.0f64..100.0), k in -5.0f64..5.0) {
        let t = |x: [f64; 8]| LossTerms { disentangle: x[0], vel: x[1], acc: x[2], foot: x[3], adv_g: x[4], recon: x[5], cyc_s: x[6], cyc_c: x[7] };
        let w = LossWeights::default();
        let mut s = [0.0; 8];
        for i in 0..8 { s[i] = a[i] + k * b[i]; }
        let lhs = total_loss(&t(s), &w);
        let rhs = total_loss(&t(a), &w) + k * total_loss(&t(b), &w);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn seq_distance_is_a_symmetric_nonnegative_pseudometric(s1 in 0u64..1000, s2 in 0u64..1000) {
        let (a, b) = (random(s1, 3), random(s2 + 5000, 3));
        let ab = seq_distance_values(&a, &b, Channels::All).unwrap();
        let ba = seq_distance_values(&b, &a, Channels::All).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(seq_distance_values(&a, &a, Channels::All).unwrap(), 0.0);
        prop_assert!(seq_distance_values(&a, &b, Channels::JointsOnly).unwrap() <= ab);
    }
}
