//! Siamese encoder: style feature from a learned token, content dynamics through
//! instance normalization.

use rand::Rng;
use tapegrad::{ParamId, ParamStore, Var};

use super::config::{HyperParams, PartGrouping};
use super::embedding::{Embedding, MotionVars};
use super::nn::{expand_mask, normal, positions, Block, Ctx};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embed: Embedding,
    /// `[P+1, d]` style token.
    pub style_token: ParamId,
    /// `[T+1, P+1, d]` positional table; row 0 belongs to the style token.
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub tokens: usize,
    pub d: usize,
    pub max_len: usize,
}

/// Encoder outputs for one motion.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[P+1, d]` style feature.
    pub style: Var,
    /// `[T, P+1, d]` content dynamics.
    pub dynamics: Var,
    /// `[P+1, d]` temporal mean of the dynamics over valid frames.
    pub content: Var,
    pub mask: Vec<bool>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hp: &HyperParams, grouping: &PartGrouping, rng: &mut R) -> Result<Self> {
        let tokens = grouping.num_tokens();
        let embed = Embedding::new(store, "enc.embed", grouping, hp.d, rng)?;
        let style_token = normal(store, "enc.style_token".into(), &[tokens, hp.d], rng);
        let pos = normal(store, "enc.pos".into(), &[hp.max_len + 1, tokens, hp.d], rng);
        let blocks =
            (0..hp.blocks).map(|n| Block::new(store, &format!("enc.block{n}"), tokens, hp.d, hp.heads, hp.d_head, rng)).collect();
        Ok(Encoder { embed, style_token, pos, blocks, tokens, d: hp.d, max_len: hp.max_len })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, mv: &MotionVars, grouping: &PartGrouping) -> Result<Encoded> {
        let t = mv.len();
        if t > self.max_len {
            return Err(Error::Motion(format!("{t} frames exceed the maximum length {}", self.max_len)));
        }
        let x = self.embed.forward(ctx, mv, grouping)?;
        let tok = ctx.param(self.style_token);
        let tok = ctx.tape.reshape(tok, &[1, self.tokens, self.d])?;
        let mut z = ctx.tape.concat(&[tok, x], 0)?;

        let mut mask = Vec::with_capacity(t + 1);
        mask.push(true);
        mask.extend_from_slice(&mv.mask);
        let pos_all = positions(ctx, self.pos, 0, t + 1)?;
        let (last, early) = self.blocks.split_last().expect("at least two blocks");
        for block in early {
            z = block.forward(ctx, z, pos_all, &mask)?;
        }
        let style = ctx.tape.narrow(z, 0, 0, 1)?;
        let style = ctx.tape.reshape(style, &[self.tokens, self.d])?;

        let frames = ctx.tape.narrow(z, 0, 1, t)?;
        let normed = ctx.tape.instance_norm(frames, 2, &expand_mask(&mv.mask, self.tokens))?;
        ctx.trace.encoder_in.push((normed, mv.mask.clone()));
        let pos_frames = positions(ctx, self.pos, 1, t)?;
        let dynamics = last.forward(ctx, normed, pos_frames, &mv.mask)?;
        let content = temporal_pool(ctx, dynamics, &mv.mask)?;
        Ok(Encoded { style, dynamics, content, mask: mv.mask.clone() })
    }
}

/// Mean of `[T, P+1, d]` over the valid frames.
pub fn temporal_pool(ctx: &mut Ctx<'_>, y: Var, mask: &[bool]) -> Result<Var> {
    Ok(ctx.tape.masked_mean(y, 1, mask)?)
}
