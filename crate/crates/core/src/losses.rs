//! Training objectives over motions on the tape, plus plain-value references.

use tapegrad::{Tensor, Var};

use crate::error::{Error, Result};
use crate::model::{Ctx, Discriminator, LossWeights, MotionVars};
use crate::motion::{FootContactMask, MotionSequence, JOINT_DIM, VEL_DIM};

/// Which channels a sequence distance covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channels {
    /// Joint vectors, root vector and velocity.
    All,
    /// Joint vectors only: global translation and facing are excluded.
    JointsOnly,
}

fn frame_weights(ctx: &mut Ctx<'_>, mask: &[bool], rows_per_frame: usize) -> Result<Var> {
    let w: Vec<f64> = mask.iter().flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, rows_per_frame)).collect();
    Ok(ctx.tape.constant(Tensor::new([w.len()], w)?))
}

/// Sum of row norms of `a - b` viewed as rows of `width`, over valid frames.
fn masked_norm_sum(ctx: &mut Ctx<'_>, a: Var, b: Var, width: usize, mask: &[bool]) -> Result<Var> {
    let diff = ctx.tape.sub(a, b)?;
    let n = ctx.value(diff).len();
    let rows = ctx.tape.reshape(diff, &[n / width, width])?;
    let norms = ctx.tape.row_norms(rows);
    if mask.iter().all(|&m| m) {
        return Ok(ctx.tape.sum(norms));
    }
    let w = frame_weights(ctx, mask, n / width / mask.len())?;
    let kept = ctx.tape.mul(norms, w)?;
    Ok(ctx.tape.sum(kept))
}

/// Sum over valid frames of the Euclidean norms of all vector differences.
pub fn seq_distance(ctx: &mut Ctx<'_>, a: &MotionVars, b: &MotionVars, channels: Channels) -> Result<Var> {
    if a.mask != b.mask {
        return Err(Error::Motion(format!("distance between motions of {} and {} frames", a.len(), b.len())));
    }
    let mask = &a.mask;
    let joints = masked_norm_sum(ctx, a.joints, b.joints, JOINT_DIM, mask)?;
    if channels == Channels::JointsOnly {
        return Ok(joints);
    }
    let root = masked_norm_sum(ctx, a.root, b.root, JOINT_DIM, mask)?;
    let vel = masked_norm_sum(ctx, a.vel, b.vel, VEL_DIM, mask)?;
    Ok(ctx.tape.add_all(&[joints, root, vel])?)
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// [`seq_distance`] on plain sequences of equal length.
pub fn seq_distance_values(a: &MotionSequence, b: &MotionSequence, channels: Channels) -> Result<f64> {
    if a.len() != b.len() || a.num_joints() != b.num_joints() {
        return Err(Error::Motion(format!("distance between motions of {} and {} frames", a.len(), b.len())));
    }
    let mut total: f64 = a.joints().chunks(JOINT_DIM).zip(b.joints().chunks(JOINT_DIM)).map(|(x, y)| norm(x, y)).sum();
    if channels == Channels::All {
        total += a.root().chunks(JOINT_DIM).zip(b.root().chunks(JOINT_DIM)).map(|(x, y)| norm(x, y)).sum::<f64>();
        total += a.velocity().chunks(VEL_DIM).zip(b.velocity().chunks(VEL_DIM)).map(|(x, y)| norm(x, y)).sum::<f64>();
    }
    Ok(total)
}

fn valid_prefix(mv: &MotionVars, need: usize, what: &str) -> Result<usize> {
    let n = mv.valid_len();
    if mv.mask[..n].iter().any(|m| !m) {
        return Err(Error::Motion("valid frames must form a prefix".into()));
    }
    if n < need {
        return Err(Error::Motion(format!("{what} needs at least {need} frames, got {n}")));
    }
    Ok(n)
}

/// Rows `[start, start+len)` of a frame-major buffer.
fn frames(ctx: &mut Ctx<'_>, x: Var, start: usize, len: usize) -> Result<Var> {
    Ok(ctx.tape.narrow(x, 0, start, len)?)
}

fn diff_norm_sum(ctx: &mut Ctx<'_>, x: Var, n: usize, width: usize) -> Result<Var> {
    let next = frames(ctx, x, 1, n - 1)?;
    let prev = frames(ctx, x, 0, n - 1)?;
    let all = vec![true; n - 1];
    masked_norm_sum(ctx, next, prev, width, &all)
}

/// `R_vel`: mean over frame pairs of joint and root displacement norms.
pub fn velocity_reg(ctx: &mut Ctx<'_>, g: &MotionVars) -> Result<Var> {
    let n = valid_prefix(g, 2, "velocity regularization")?;
    let j = diff_norm_sum(ctx, g.joints, n, JOINT_DIM)?;
    let r = diff_norm_sum(ctx, g.root, n, JOINT_DIM)?;
    let s = ctx.tape.add(j, r)?;
    Ok(ctx.tape.scale(s, 1.0 / (n - 1) as f64))
}

/// `R_acc`: mean of joint second differences plus velocity first differences.
pub fn acceleration_reg(ctx: &mut Ctx<'_>, g: &MotionVars) -> Result<Var> {
    let n = valid_prefix(g, 3, "acceleration regularization")?;
    let a = frames(ctx, g.joints, 2, n - 2)?;
    let b = frames(ctx, g.joints, 1, n - 2)?;
    let c = frames(ctx, g.joints, 0, n - 2)?;
    let ac = ctx.tape.add(a, c)?;
    let b2 = ctx.tape.scale(b, 2.0);
    let all = vec![true; n - 2];
    let j = masked_norm_sum(ctx, ac, b2, JOINT_DIM, &all)?;
    let v_next = frames(ctx, g.vel, 1, n - 2)?;
    let v_prev = frames(ctx, g.vel, 0, n - 2)?;
    let v = masked_norm_sum(ctx, v_next, v_prev, VEL_DIM, &all)?;
    let s = ctx.tape.add(j, v)?;
    Ok(ctx.tape.scale(s, 1.0 / (n - 2) as f64))
}

/// `R_foot`: per foot joint, mean displacement norm over its contact frames.
/// Only contact frames with a successor frame contribute; a foot without such
/// frames adds zero.
pub fn foot_contact_reg(ctx: &mut Ctx<'_>, g: &MotionVars, contacts: &FootContactMask) -> Result<Var> {
    let n = valid_prefix(g, 2, "foot contact regularization")?;
    if contacts.len() != n {
        return Err(Error::Motion(format!("contact mask has {} frames, motion {n}", contacts.len())));
    }
    let jw = ctx.value(g.joints).last_dim();
    let mut terms = Vec::new();
    for (&joint, flags) in contacts.joints.iter().zip(&contacts.contacts) {
        if (joint + 1) * JOINT_DIM > jw {
            return Err(Error::Motion(format!("foot joint {joint} outside the motion")));
        }
        let used: Vec<bool> = flags[..n - 1].to_vec();
        let count = used.iter().filter(|&&c| c).count();
        if count == 0 {
            continue;
        }
        let cols: Vec<usize> = (joint * JOINT_DIM..(joint + 1) * JOINT_DIM).collect();
        let foot = ctx.tape.gather_last(g.joints, &cols)?;
        let next = frames(ctx, foot, 1, n - 1)?;
        let prev = frames(ctx, foot, 0, n - 1)?;
        let s = masked_norm_sum(ctx, next, prev, JOINT_DIM, &used)?;
        terms.push(ctx.tape.scale(s, 1.0 / count as f64));
    }
    if terms.is_empty() {
        return Ok(ctx.tape.constant(Tensor::scalar(0.0)));
    }
    Ok(ctx.tape.add_all(&terms)?)
}

/// Discriminator objective `ln D(real) + ln(1 - D(fake))`, to be maximized.
pub fn adversarial_d(ctx: &mut Ctx<'_>, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = Discriminator::log_prob(ctx, d_real);
    let b = Discriminator::log_one_minus(ctx, d_fake);
    Ok(ctx.tape.add(a, b)?)
}

/// Generator objective `ln(1 - D(G))`, to be minimized.
pub fn adversarial_g(ctx: &mut Ctx<'_>, d_fake: Var) -> Var {
    Discriminator::log_one_minus(ctx, d_fake)
}

/// The weighted terms of the generator-side objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<T> {
    pub disentangle: T,
    pub vel: T,
    pub acc: T,
    pub foot: T,
    pub adv_g: T,
    pub recon: T,
    pub cyc_s: T,
    pub cyc_c: T,
}

impl<T: Copy> LossTerms<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> LossTerms<U> {
        LossTerms {
            disentangle: f(self.disentangle),
            vel: f(self.vel),
            acc: f(self.acc),
            foot: f(self.foot),
            adv_g: f(self.adv_g),
            recon: f(self.recon),
            cyc_s: f(self.cyc_s),
            cyc_c: f(self.cyc_c),
        }
    }

    /// Terms paired with their weights, in a fixed order.
    pub fn weighted(&self, w: &LossWeights) -> [(T, f64); 8] {
        [
            (self.disentangle, w.disentangle),
            (self.vel, w.vel),
            (self.acc, w.acc),
            (self.foot, w.foot),
            (self.adv_g, w.adv),
            (self.recon, w.recon),
            (self.cyc_s, w.cyc),
            (self.cyc_c, w.cyc),
        ]
    }
}

/// Weighted total of plain loss values.
pub fn total_loss(terms: &LossTerms<f64>, w: &LossWeights) -> f64 {
    terms.weighted(w).iter().map(|(v, k)| v * k).sum()
}

/// Weighted total on the tape.
pub fn total_loss_var(ctx: &mut Ctx<'_>, terms: &LossTerms<Var>, w: &LossWeights) -> Result<Var> {
    let scaled: Vec<Var> = terms.weighted(w).iter().map(|&(v, k)| ctx.tape.scale(v, k)).collect();
    Ok(ctx.tape.add_all(&scaled)?)
}

/// Loss values recorded per training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub terms: LossTerms<f64>,
    /// Discriminator objective before its step (maximized by `D`).
    pub adv_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const HEADER: [&'static str; 10] =
        ["L_D", "R_vel", "R_acc", "R_foot", "L_adv_G", "L_adv_D", "L_recon", "L_cyc_s", "L_cyc_c", "total"];

    pub fn values(&self) -> [f64; 10] {
        let t = &self.terms;
        [t.disentangle, t.vel, t.acc, t.foot, t.adv_g, self.adv_d, t.recon, t.cyc_s, t.cyc_c, self.total]
    }
}
