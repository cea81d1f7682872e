//! Motion tensors on the tape and the per-part token embedding.

use rand::Rng;
use tapegrad::{ParamStore, Tensor, Var};

use super::config::PartGrouping;
use super::nn::{Ctx, Linear};
use super::stats::{standardize, FeatureStats};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, JOINT_DIM, VEL_DIM};

/// A motion on the tape, in physical units and standardized.
#[derive(Clone, Debug)]
pub struct MotionVars {
    /// `[T, J·7]` joint vectors.
    pub joints: Var,
    /// `[T, 7]` root vector.
    pub root: Var,
    /// `[T, 4]` global velocity.
    pub vel: Var,
    pub joints_n: Var,
    pub root_n: Var,
    pub vel_n: Var,
    /// Valid frames; padding frames are `false`.
    pub mask: Vec<bool>,
}

impl MotionVars {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Places a motion on the tape as constants, zero-padded to `pad_to` frames.
    pub fn constant(ctx: &mut Ctx<'_>, ms: &MotionSequence, stats: &FeatureStats, pad_to: Option<usize>) -> Result<Self> {
        Self::leaves(ctx, ms, stats, pad_to, false)
    }

    /// Like [`MotionVars::constant`] but the standardized channels are
    /// differentiable leaves.
    pub fn input(ctx: &mut Ctx<'_>, ms: &MotionSequence, stats: &FeatureStats, pad_to: Option<usize>) -> Result<Self> {
        Self::leaves(ctx, ms, stats, pad_to, true)
    }

    fn leaves(ctx: &mut Ctx<'_>, ms: &MotionSequence, stats: &FeatureStats, pad_to: Option<usize>, grad: bool) -> Result<Self> {
        if ms.num_joints() != stats.num_joints() {
            return Err(Error::Motion(format!("motion has {} joints, model expects {}", ms.num_joints(), stats.num_joints())));
        }
        let t = ms.len();
        let total = pad_to.unwrap_or(t);
        if total < t {
            return Err(Error::Motion(format!("cannot pad a {t}-frame motion to {total} frames")));
        }
        let jw = ms.num_joints() * JOINT_DIM;
        let pad = |mut v: Vec<f64>, w: usize| {
            v.resize(total * w, 0.0);
            v
        };
        let mut leaf = |data: Vec<f64>, w: usize| -> Result<Var> {
            let tensor = Tensor::new([total, w], data)?;
            Ok(if grad { ctx.tape.input(tensor) } else { ctx.tape.constant(tensor) })
        };
        let joints_n = leaf(pad(standardize(ms.joints(), &stats.joints_mean, &stats.joints_std), jw), jw)?;
        let root_n = leaf(pad(standardize(ms.root(), &stats.root_mean, &stats.root_std), JOINT_DIM), JOINT_DIM)?;
        let vel_n = leaf(pad(standardize(ms.velocity(), &stats.vel_mean, &stats.vel_std), VEL_DIM), VEL_DIM)?;
        let tape = &mut ctx.tape;
        let joints = tape.constant(Tensor::new([total, jw], pad(ms.joints().to_vec(), jw))?);
        let root = tape.constant(Tensor::new([total, JOINT_DIM], pad(ms.root().to_vec(), JOINT_DIM))?);
        let vel = tape.constant(Tensor::new([total, VEL_DIM], pad(ms.velocity().to_vec(), VEL_DIM))?);
        let mut mask = vec![true; t];
        mask.resize(total, false);
        Ok(MotionVars { joints, root, vel, joints_n, root_n, vel_n, mask })
    }

    /// Builds physical-unit channels from standardized ones.
    pub fn from_standardized(ctx: &mut Ctx<'_>, joints_n: Var, root_n: Var, vel_n: Var, stats: &FeatureStats, mask: Vec<bool>) -> Result<Self> {
        let mut denorm = |x: Var, mean: &[f64], std: &[f64]| -> Result<Var> {
            let s = ctx.tape.constant(Tensor::new([std.len()], std.to_vec())?);
            let m = ctx.tape.constant(Tensor::new([mean.len()], mean.to_vec())?);
            let y = ctx.tape.mul_trailing(x, s)?;
            Ok(ctx.tape.add_trailing(y, m)?)
        };
        let joints = denorm(joints_n, &stats.joints_mean, &stats.joints_std)?;
        let root = denorm(root_n, &stats.root_mean, &stats.root_std)?;
        let vel = denorm(vel_n, &stats.vel_mean, &stats.vel_std)?;
        Ok(MotionVars { joints, root, vel, joints_n, root_n, vel_n, mask })
    }

    /// Same values, cut from the graph.
    pub fn detach(&self, ctx: &mut Ctx<'_>) -> Self {
        let t = &mut ctx.tape;
        MotionVars {
            joints: t.detach(self.joints),
            root: t.detach(self.root),
            vel: t.detach(self.vel),
            joints_n: t.detach(self.joints_n),
            root_n: t.detach(self.root_n),
            vel_n: t.detach(self.vel_n),
            mask: self.mask.clone(),
        }
    }

    /// Reads the valid frames back into a [`MotionSequence`] (quaternions raw).
    pub fn to_sequence(&self, ctx: &Ctx<'_>, fps: f64) -> Result<MotionSequence> {
        let n = self.valid_len();
        if self.mask[..n].iter().any(|m| !m) {
            return Err(Error::Motion("valid frames must form a prefix".into()));
        }
        let jw = ctx.value(self.joints).last_dim();
        let take = |v: Var, w: usize| ctx.value(v).data()[..n * w].to_vec();
        MotionSequence::new(jw / JOINT_DIM, take(self.joints, jw), take(self.root, JOINT_DIM), Some(take(self.vel, VEL_DIM)), fps)
    }
}

/// Per-part joint FCs plus the root and velocity FCs of the global token.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub parts: Vec<Linear>,
    pub root: Linear,
    pub vel: Linear,
    pub d: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, grouping: &PartGrouping, d: usize, rng: &mut R) -> Result<Self> {
        if d % 2 != 0 {
            return Err(Error::Config(format!("embedding width {d} must be even")));
        }
        let parts = (0..grouping.num_parts())
            .map(|i| Linear::new(store, &format!("{name}.part{i}"), JOINT_DIM * grouping.part(i).len(), d, true, rng))
            .collect();
        Ok(Embedding {
            parts,
            root: Linear::new(store, &format!("{name}.root"), JOINT_DIM, d / 2, true, rng),
            vel: Linear::new(store, &format!("{name}.vel"), VEL_DIM, d / 2, true, rng),
            d,
        })
    }

    /// `[T, P, d]` part tokens from the standardized joints.
    pub fn embed_parts(&self, ctx: &mut Ctx<'_>, joints_n: Var, grouping: &PartGrouping) -> Result<Var> {
        if self.parts.len() != grouping.num_parts() {
            return Err(Error::Config("grouping does not match the embedding".into()));
        }
        let t = ctx.tape.shape(joints_n)[0];
        let mut tokens = Vec::with_capacity(self.parts.len());
        for (i, fc) in self.parts.iter().enumerate() {
            let p = ctx.tape.gather_last(joints_n, &grouping.part_columns(i))?;
            tokens.push(fc.forward(ctx, p)?);
        }
        let cat = ctx.tape.concat(&tokens, 1)?;
        Ok(ctx.tape.reshape(cat, &[t, self.parts.len(), self.d])?)
    }

    /// `[T, 1, d]` global token: root FC and velocity FC halves.
    pub fn embed_global(&self, ctx: &mut Ctx<'_>, root_n: Var, vel_n: Var) -> Result<Var> {
        let t = ctx.tape.shape(root_n)[0];
        let r = self.root.forward(ctx, root_n)?;
        let v = self.vel.forward(ctx, vel_n)?;
        let g = ctx.tape.concat(&[r, v], 1)?;
        Ok(ctx.tape.reshape(g, &[t, 1, self.d])?)
    }

    /// `X = [parts; global]` as `[T, P+1, d]` with padding frames zeroed.
    pub fn forward(&self, ctx: &mut Ctx<'_>, mv: &MotionVars, grouping: &PartGrouping) -> Result<Var> {
        let parts = self.embed_parts(ctx, mv.joints_n, grouping)?;
        let global = self.embed_global(ctx, mv.root_n, mv.vel_n)?;
        assemble(ctx, parts, global, &mv.mask)
    }
}

/// Stacks part and global tokens and zeroes frames outside `mask`.
pub fn assemble(ctx: &mut Ctx<'_>, parts: Var, global: Var, mask: &[bool]) -> Result<Var> {
    let x = ctx.tape.concat(&[parts, global], 1)?;
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let shape = ctx.tape.shape(x).to_vec();
    if shape[0] != mask.len() {
        return Err(Error::Motion(format!("mask has {} frames, tokens {}", mask.len(), shape[0])));
    }
    let per_frame = shape[1] * shape[2];
    let m: Vec<f64> = mask.iter().flat_map(|&v| std::iter::repeat_n(if v { 1.0 } else { 0.0 }, per_frame)).collect();
    let m = ctx.tape.constant(Tensor::new(shape, m)?);
    Ok(ctx.tape.mul(x, m)?)
}
