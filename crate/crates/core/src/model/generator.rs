//! Generator: AdaIN-conditioned blocks over the content dynamics, then per-part heads.

use rand::Rng;
use tapegrad::{ParamId, ParamStore, Tensor, Var};

use super::config::{HyperParams, PartGrouping};
use super::embedding::MotionVars;
use super::encoder::Encoded;
use super::nn::{expand_mask, normal, positions, Block, Ctx, Linear};
use super::stats::FeatureStats;
use crate::error::{Error, Result};
use crate::motion::{JOINT_DIM, VEL_DIM};

#[derive(Clone, Debug)]
pub struct GenBlock {
    pub gamma: Linear,
    pub beta: Linear,
    pub block: Block,
}

#[derive(Clone, Debug)]
pub struct Generator {
    /// `[T, P+1, d]` positional table.
    pub pos: ParamId,
    pub blocks: Vec<GenBlock>,
    /// One head per part, `d -> 7·N_i`.
    pub part_heads: Vec<Linear>,
    pub root_head: Linear,
    pub vel_head: Linear,
    pub tokens: usize,
    pub d: usize,
    pub max_len: usize,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hp: &HyperParams, grouping: &PartGrouping, rng: &mut R) -> Self {
        let tokens = grouping.num_tokens();
        let d = hp.d;
        let pos = normal(store, "gen.pos".into(), &[hp.max_len, tokens, d], rng);
        let blocks = (0..hp.blocks)
            .map(|n| {
                let name = format!("gen.block{n}");
                let gamma = Linear::new(store, &format!("{name}.gamma"), tokens * d, d, true, rng);
                if let Some(b) = gamma.b {
                    *store.value_mut(b) = Tensor::full([d], 1.0);
                }
                GenBlock {
                    gamma,
                    beta: Linear::new(store, &format!("{name}.beta"), tokens * d, d, true, rng),
                    block: Block::new(store, &name, tokens, d, hp.heads, hp.d_head, rng),
                }
            })
            .collect();
        let part_heads = (0..grouping.num_parts())
            .map(|i| Linear::new(store, &format!("gen.head.part{i}"), d, JOINT_DIM * grouping.part(i).len(), true, rng))
            .collect();
        Generator {
            pos,
            blocks,
            part_heads,
            root_head: Linear::new(store, "gen.head.root", d, JOINT_DIM, true, rng),
            vel_head: Linear::new(store, "gen.head.vel", d, VEL_DIM, true, rng),
            tokens,
            d,
            max_len: hp.max_len,
        }
    }

    /// Transformed dynamics `[T, P+1, d]` from content dynamics `y` and modulated style `s`.
    pub fn transform(&self, ctx: &mut Ctx<'_>, y: Var, s: Var, mask: &[bool]) -> Result<Var> {
        let t = mask.len();
        if t > self.max_len {
            return Err(Error::Motion(format!("{t} frames exceed the maximum length {}", self.max_len)));
        }
        let flat_s = ctx.tape.reshape(s, &[1, self.tokens * self.d])?;
        let pos = positions(ctx, self.pos, 0, t)?;
        let row_mask = expand_mask(mask, self.tokens);
        let mut u = y;
        for gb in &self.blocks {
            let gamma = gb.gamma.forward(ctx, flat_s)?;
            let gamma = ctx.tape.reshape(gamma, &[self.d])?;
            let beta = gb.beta.forward(ctx, flat_s)?;
            let beta = ctx.tape.reshape(beta, &[self.d])?;
            let normed = ctx.tape.instance_norm(u, 2, &row_mask)?;
            let scaled = ctx.tape.mul_trailing(normed, gamma)?;
            let ada = ctx.tape.add_trailing(scaled, beta)?;
            ctx.trace.adain.push((ada, gamma, beta, mask.to_vec()));
            u = gb.block.forward(ctx, ada, pos, mask)?;
        }
        Ok(u)
    }

    /// Standardized head outputs `(joints [T, J·7], root [T, 7], vel [T, 4])`.
    pub fn heads(&self, ctx: &mut Ctx<'_>, u: Var, grouping: &PartGrouping) -> Result<(Var, Var, Var)> {
        let p = grouping.num_parts();
        let mut outs = Vec::with_capacity(p);
        for (i, head) in self.part_heads.iter().enumerate() {
            let slot = self.slot(ctx, u, i)?;
            outs.push(head.forward(ctx, slot)?);
        }
        let cat = ctx.tape.concat(&outs, 1)?;
        let joints = ctx.tape.gather_last(cat, &grouping.joint_order_columns())?;
        let g = self.slot(ctx, u, p)?;
        let root = self.root_head.forward(ctx, g)?;
        let vel = self.vel_head.forward(ctx, g)?;
        Ok((joints, root, vel))
    }

    /// Token `i` of every frame as `[T, d]`.
    pub fn slot(&self, ctx: &mut Ctx<'_>, u: Var, i: usize) -> Result<Var> {
        let t = ctx.tape.shape(u)[0];
        let s = ctx.tape.narrow(u, 1, i, 1)?;
        Ok(ctx.tape.reshape(s, &[t, self.d])?)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, content: &Encoded, s: Var, grouping: &PartGrouping, stats: &FeatureStats) -> Result<MotionVars> {
        let u = self.transform(ctx, content.dynamics, s, &content.mask)?;
        let (j, r, v) = self.heads(ctx, u, grouping)?;
        MotionVars::from_standardized(ctx, j, r, v, stats, content.mask.clone())
    }
}
