//! Style-agnostic realism classifier.

use rand::Rng;
use tapegrad::{ParamId, ParamStore, Var};

use super::config::{HyperParams, PartGrouping};
use super::embedding::{Embedding, MotionVars};
use super::nn::{expand_mask, normal, positions, Block, Ctx, Linear};
use crate::error::{Error, Result};

/// Bounds applied to `D(x)` before taking logarithms.
pub const PROB_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub embed: Embedding,
    pub pos: ParamId,
    pub block: Block,
    pub fc: Linear,
    pub tokens: usize,
    pub d: usize,
    pub max_len: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hp: &HyperParams, grouping: &PartGrouping, rng: &mut R) -> Result<Self> {
        let tokens = grouping.num_tokens();
        Ok(Discriminator {
            embed: Embedding::new(store, "dis.embed", grouping, hp.d, rng)?,
            pos: normal(store, "dis.pos".into(), &[hp.max_len, tokens, hp.d], rng),
            block: Block::new(store, "dis.block", tokens, hp.d, hp.heads, hp.d_head, rng),
            fc: Linear::new(store, "dis.fc", hp.d, 1, true, rng),
            tokens,
            d: hp.d,
            max_len: hp.max_len,
        })
    }

    /// Probability `[1]` that `mv` is a real motion.
    pub fn forward(&self, ctx: &mut Ctx<'_>, mv: &MotionVars, grouping: &PartGrouping) -> Result<Var> {
        let t = mv.len();
        if t > self.max_len {
            return Err(Error::Motion(format!("{t} frames exceed the maximum length {}", self.max_len)));
        }
        let x = self.embed.forward(ctx, mv, grouping)?;
        let pos = positions(ctx, self.pos, 0, t)?;
        let h = self.block.forward(ctx, x, pos, &mv.mask)?;
        let pooled = ctx.tape.masked_mean(h, 2, &expand_mask(&mv.mask, self.tokens))?;
        let pooled = ctx.tape.reshape(pooled, &[1, self.d])?;
        let logit = self.fc.forward(ctx, pooled)?;
        let p = ctx.tape.sigmoid(logit);
        Ok(ctx.tape.reshape(p, &[1])?)
    }

    /// `ln D(x)` with `D(x)` clamped away from 0 and 1.
    pub fn log_prob(ctx: &mut Ctx<'_>, p: Var) -> Var {
        let c = ctx.tape.clamp(p, PROB_CLAMP.0, PROB_CLAMP.1);
        ctx.tape.ln(c)
    }

    /// `ln (1 - D(x))` with the same clamping.
    pub fn log_one_minus(ctx: &mut Ctx<'_>, p: Var) -> Var {
        let neg = ctx.tape.scale(p, -1.0);
        let q = ctx.tape.add_scalar(neg, 1.0);
        Self::log_prob(ctx, q)
    }
}
