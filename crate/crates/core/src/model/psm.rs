//! Part-attentive style modulator: routes style between body parts by attending
//! from the content motion's parts to the style motion's parts.

use rand::Rng;
use tapegrad::{ParamId, ParamStore, Var};

use super::config::HyperParams;
use super::nn::{normal, AttnKind, Ctx, LayerNorm, Linear, MultiHead};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Psm {
    /// `[P+1, d]` part positional embedding.
    pub pos: ParamId,
    pub ln_q: LayerNorm,
    pub ln_k: LayerNorm,
    pub ln_v: LayerNorm,
    pub attn: MultiHead,
    pub fc: Linear,
    pub mlp_ln: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub tokens: usize,
    pub d: usize,
}

impl Psm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hp: &HyperParams, tokens: usize, rng: &mut R) -> Self {
        let d = hp.d;
        Psm {
            pos: normal(store, "psm.pos".into(), &[tokens, d], rng),
            ln_q: LayerNorm::new(store, "psm.ln_q", d),
            ln_k: LayerNorm::new(store, "psm.ln_k", d),
            ln_v: LayerNorm::new(store, "psm.ln_v", d),
            attn: MultiHead::new(store, "psm.attn", d, hp.heads, hp.d_head, false, 1.0 / (d as f64).sqrt(), rng),
            fc: Linear::new(store, "psm.fc", d, d, true, rng),
            mlp_ln: LayerNorm::new(store, "psm.mlp_ln", d),
            mlp_in: Linear::new(store, "psm.mlp_in", d, hp.mlp_hidden, true, rng),
            mlp_out: Linear::new(store, "psm.mlp_out", hp.mlp_hidden, d, true, rng),
            tokens,
            d,
        }
    }

    /// Cross attention with queries from `c_content`, keys from `c_style` and
    /// values from `s_style`, each `[P+1, d]`.
    pub fn cross_attention(&self, ctx: &mut Ctx<'_>, c_content: Var, c_style: Var, s_style: Var) -> Result<Var> {
        let pos = ctx.param(self.pos);
        let mut prep = |x: Var, ln: &LayerNorm| -> Result<Var> {
            let x = ctx.tape.add(x, pos)?;
            let x = ln.forward(ctx, x)?;
            Ok(ctx.tape.reshape(x, &[1, self.tokens, self.d])?)
        };
        let q = prep(c_content, &self.ln_q)?;
        let k = prep(c_style, &self.ln_k)?;
        let v = prep(s_style, &self.ln_v)?;
        let h = self.attn.forward(ctx, q, k, v, None, AttnKind::Cross)?;
        Ok(ctx.tape.reshape(h, &[self.tokens, self.d])?)
    }

    /// Modulated style `S̃ = Š + MLP(LN(Š))` with `Š = FC(S) + cross attention`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, s_style: Var, c_content: Var, c_style: Var) -> Result<Var> {
        let cross = self.cross_attention(ctx, c_content, c_style, s_style)?;
        let base = self.fc.forward(ctx, s_style)?;
        let s_check = ctx.tape.add(base, cross)?;
        let n = self.mlp_ln.forward(ctx, s_check)?;
        let hdn = self.mlp_in.forward(ctx, n)?;
        let hdn = ctx.tape.gelu(hdn);
        let out = self.mlp_out.forward(ctx, hdn)?;
        Ok(ctx.tape.add(s_check, out)?)
    }
}
