//! Layers shared by the encoder, modulator, generator and discriminator.

use rand::Rng;
use tapegrad::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::Result;

/// Standard deviation of the normal initializer for tokens and positional tables.
pub const INIT_STD: f64 = 0.02;

/// Attention maps recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `[rows·heads, tokens, tokens]` maps from part attention.
    pub part: Vec<Var>,
    /// `[heads, rows, rows]` maps from temporal attention.
    pub temporal: Vec<Var>,
    /// `[heads, tokens, tokens]` maps from the modulator's cross attention.
    pub cross: Vec<Var>,
    /// Instance-normalized encoder features and the frame mask they used.
    pub encoder_in: Vec<(Var, Vec<bool>)>,
    /// AdaIN outputs with their `gamma`, `beta` and frame mask.
    pub adain: Vec<(Var, Var, Var, Vec<bool>)>,
}

/// A tape plus the parameters read by a forward pass.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    pub trace: Trace,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Ctx { tape: Tape::new(), store, trace: Trace::default() }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

/// Registers a normally initialized parameter.
pub fn normal<R: Rng + ?Sized>(store: &mut ParamStore, name: String, shape: &[usize], rng: &mut R) -> ParamId {
    store.add(name, Tensor::randn(shape.to_vec(), INIT_STD, rng))
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        // Fan-in uniform bounds for weights and biases.
        let bound = 1.0 / (input as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w_data = uniform(input * output);
        let b_data = bias.then(|| uniform(output));
        let w = store.add(format!("{name}.w"), Tensor::new([input, output], w_data).expect("sized"));
        let b = b_data.map(|d| store.add(format!("{name}.b"), Tensor::new([output], d).expect("sized")));
        Linear { w, b }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let b = self.b.map(|b| ctx.param(b));
        Ok(ctx.tape.linear(x, w, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full([dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dim])),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gain);
        let b = ctx.param(self.bias);
        Ok(ctx.tape.layer_norm(x, g, b)?)
    }
}

/// Which trace list an attention map belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnKind {
    Part,
    Temporal,
    Cross,
}

/// Multi-head attention over axis 1 of `[B, L, width]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct MultiHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
    pub scale: f64,
}

impl MultiHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        head_dim: usize,
        bias: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let inner = heads * head_dim;
        MultiHead {
            q: Linear::new(store, &format!("{name}.q"), width, inner, bias, rng),
            k: Linear::new(store, &format!("{name}.k"), width, inner, bias, rng),
            v: Linear::new(store, &format!("{name}.v"), width, inner, bias, rng),
            out: Linear::new(store, &format!("{name}.o"), inner, width, bias, rng),
            heads,
            head_dim,
            scale,
        }
    }

    fn split(&self, ctx: &mut Ctx<'_>, x: Var, b: usize, l: usize) -> Result<Var> {
        let t = &mut ctx.tape;
        let x = t.reshape(x, &[b, l, self.heads, self.head_dim])?;
        let x = t.permute(x, &[0, 2, 1, 3])?;
        Ok(t.reshape(x, &[b * self.heads, l, self.head_dim])?)
    }

    /// Attends queries from `xq` to keys from `xk` and values from `xv`, all
    /// `[B, L, width]`. `key_mask` excludes key positions along `L`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, xq: Var, xk: Var, xv: Var, key_mask: Option<&[bool]>, kind: AttnKind) -> Result<Var> {
        let shape = ctx.tape.shape(xq).to_vec();
        let (b, l) = (shape[0], shape[1]);
        let q = self.q.forward(ctx, xq)?;
        let k = self.k.forward(ctx, xk)?;
        let v = self.v.forward(ctx, xv)?;
        let q = self.split(ctx, q, b, l)?;
        let k = self.split(ctx, k, b, l)?;
        let v = self.split(ctx, v, b, l)?;
        let t = &mut ctx.tape;
        let scores = t.bmm(q, k, true)?;
        let scores = t.scale(scores, self.scale);
        let attn = match key_mask {
            Some(m) => t.masked_softmax_last(scores, m)?,
            None => t.softmax_last(scores),
        };
        let mixed = t.bmm(attn, v, false)?;
        let mixed = t.reshape(mixed, &[b, self.heads, l, self.head_dim])?;
        let mixed = t.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = t.reshape(mixed, &[b, l, self.heads * self.head_dim])?;
        match kind {
            AttnKind::Part => ctx.trace.part.push(attn),
            AttnKind::Temporal => ctx.trace.temporal.push(attn),
            AttnKind::Cross => ctx.trace.cross.push(attn),
        }
        self.out.forward(ctx, mixed)
    }
}

/// Part attention within each frame followed by temporal attention across frames.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub part_norm: LayerNorm,
    pub part: MultiHead,
    pub time_norm: LayerNorm,
    pub time: MultiHead,
    pub tokens: usize,
    pub d: usize,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, tokens: usize, d: usize, heads: usize, d_head: usize, rng: &mut R) -> Self {
        let wide = tokens * d;
        let wide_head = tokens * d_head;
        Block {
            part_norm: LayerNorm::new(store, &format!("{name}.part_ln"), d),
            part: MultiHead::new(store, &format!("{name}.part"), d, heads, d_head, true, 1.0 / (d_head as f64).sqrt(), rng),
            time_norm: LayerNorm::new(store, &format!("{name}.time_ln"), wide),
            time: MultiHead::new(store, &format!("{name}.time"), wide, heads, wide_head, true, 1.0 / (wide_head as f64).sqrt(), rng),
            tokens,
            d,
        }
    }

    /// `z` and `pos` are `[L, tokens, d]`; `mask` marks valid rows of `L`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, z: Var, pos: Var, mask: &[bool]) -> Result<Var> {
        let l = ctx.tape.shape(z)[0];
        let z1 = ctx.tape.add(z, pos)?;
        let n1 = self.part_norm.forward(ctx, z1)?;
        let a1 = self.part.forward(ctx, n1, n1, n1, None, AttnKind::Part)?;
        let z2 = ctx.tape.add(a1, z1)?;

        let z3 = ctx.tape.add(z2, pos)?;
        let flat = ctx.tape.reshape(z3, &[1, l, self.tokens * self.d])?;
        let n2 = self.time_norm.forward(ctx, flat)?;
        let a2 = self.time.forward(ctx, n2, n2, n2, Some(mask), AttnKind::Temporal)?;
        let z4 = ctx.tape.add(a2, flat)?;
        Ok(ctx.tape.reshape(z4, &[l, self.tokens, self.d])?)
    }
}

/// Rows `[start, start+len)` of a positional table parameter.
pub fn positions(ctx: &mut Ctx<'_>, table: ParamId, start: usize, len: usize) -> Result<Var> {
    let p = ctx.param(table);
    Ok(ctx.tape.narrow(p, 0, start, len)?)
}

/// `[T·repeat]` mask built by repeating each frame flag.
pub fn expand_mask(mask: &[bool], repeat: usize) -> Vec<bool> {
    mask.iter().flat_map(|&m| std::iter::repeat_n(m, repeat)).collect()
}
