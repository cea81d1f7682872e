//! Operation tape and reverse-mode gradient propagation.
//!
//! Every op appends one node holding its output value plus whatever the
//! backward rule needs. Node indices are a topological order by construction,
//! so `backward` is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{invalid, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, permute_index, Tensor};

/// Epsilon inside the square root of every normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTrailing(Var, Var),
    MulTrailing(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Gather(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    InstanceNorm { x: Var, mask: Vec<bool>, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaskedMean { x: Var, mask: Vec<bool>, count: usize },
    MaskedStd { x: Var, mask: Vec<bool>, mean: Vec<f64>, count: usize },
    Gelu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    RowNorms(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records forward operations for one graph evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, ParamId), Var>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<((u64, ParamId), Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub(crate) fn param_grads(&self, uid: u64) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter(move |((u, _), _)| *u == uid)
            .filter_map(|((_, id), v)| self.grads[v.0].as_deref().map(|g| (*id, g)))
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn count_mask(mask: &[bool], rows: usize, op: &'static str) -> Result<usize> {
    if mask.len() != rows {
        return Err(invalid(op, format!("mask has {} entries for {} rows", mask.len(), rows)));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(TensorError::AllMasked(op));
    }
    Ok(n)
}

/// `c (m×n) = beta·c + A·B` where `A` is m×k and `B` is k×n; `a_t`/`b_t` mean the
/// slice stores the transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have exactly the extents described by (m, k, n) and the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls on one tape return the same node,
    /// so every use of a parameter shares one gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.params.insert(key, v);
        v
    }

    /// Same value as `v`, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Affine map along the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let input = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != input {
            return Err(mismatch("linear", &sx, &sw));
        }
        let out_dim = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(mismatch("linear bias", &sw, self.shape(b)));
            }
        }
        let rows = numel(&sx) / input;
        let mut out = vec![0.0; rows * out_dim];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(out_dim) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(rows, input, out_dim, self.value(x).data(), false, self.value(w).data(), false, &mut out, beta);
        let mut shape = sx;
        *shape.last_mut().unwrap() = out_dim;
        let value = Tensor::new(shape, out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matmul `[B,m,k]·[B,k,n]`, or `[B,m,k]·[B,n,k]ᵀ` with `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    fn trailing(&self, x: Var, v: Var, name: &'static str) -> Result<usize> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        let d = *sx.last().unwrap();
        if sv != [d] {
            return Err(mismatch(name, sx, sv));
        }
        Ok(d)
    }

    /// `x[..., d] + v[d]`.
    pub fn add_trailing(&mut self, x: Var, v: Var) -> Result<Var> {
        let d = self.trailing(x, v, "add_trailing")?;
        let mut value = self.value(x).clone();
        let vv = self.value(v).data();
        for row in value.data_mut().chunks_mut(d) {
            row.iter_mut().zip(vv).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(value, Op::AddTrailing(x, v), &[x, v]))
    }

    /// `x[..., d] ⊙ v[d]`.
    pub fn mul_trailing(&mut self, x: Var, v: Var) -> Result<Var> {
        let d = self.trailing(x, v, "mul_trailing")?;
        let mut value = self.value(x).clone();
        let vv = self.value(v).data();
        for row in value.data_mut().chunks_mut(d) {
            row.iter_mut().zip(vv).for_each(|(a, b)| *a *= b);
        }
        Ok(self.push(value, Op::MulTrailing(x, v), &[x, v]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v += c);
        self.push(value, Op::Shift(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid("permute", format!("axes {axes:?} do not permute rank {}", shape.len())));
        }
        let idx = permute_index(&shape, axes);
        let src = self.value(x).data();
        let data = idx.iter().map(|&i| src[i]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for rank {}", first.len())));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Slice `[start, start+len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(invalid("narrow", format!("[{start}, {}) outside axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Picks entries of the last axis: `out[..., j] = x[..., idx[j]]`.
    pub fn gather_last(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if idx.is_empty() || idx.iter().any(|&i| i >= d) {
            return Err(invalid("gather_last", format!("indices out of range for last axis {d}")));
        }
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            data.extend(idx.iter().map(|&i| src[r * d + i]));
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = idx.len();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Gather(x, idx.to_vec()), &[x]))
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let n = self.value(x).last_dim();
        let keep = vec![true; n];
        self.masked_softmax_last(x, &keep).expect("unmasked softmax cannot fail")
    }

    /// Softmax over the last axis, with `keep[j] == false` columns forced to zero
    /// probability in every row.
    pub fn masked_softmax_last(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        count_mask(keep, n, "masked_softmax_last")?;
        let mut value = t.clone();
        for row in value.data_mut().chunks_mut(n) {
            let max = row.iter().zip(keep).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (v, &k) in row.iter_mut().zip(keep) {
                *v = if k { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.trailing(x, gain, "layer_norm gain")?;
        self.trailing(x, bias, "layer_norm bias")?;
        if d < 2 {
            return Err(invalid("layer_norm", "needs at least two features"));
        }
        let t = self.value(x);
        let rows = t.rows();
        let mut xhat = vec![0.0; t.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in t.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = inv;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((o, gv), bv) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    fn rows_features(&self, x: Var, leading: usize, op: &'static str) -> Result<(usize, usize, Vec<usize>)> {
        let shape = self.shape(x);
        if leading == 0 || leading > shape.len() {
            return Err(invalid(op, format!("cannot split rank {} after {leading} axes", shape.len())));
        }
        let rows: usize = shape[..leading].iter().product();
        let feats: usize = shape[leading..].iter().product();
        let out_shape = if leading == shape.len() { vec![1] } else { shape[leading..].to_vec() };
        Ok((rows, feats, out_shape))
    }

    /// Mean over the rows formed by the first `leading` axes, restricted to `mask`.
    pub fn masked_mean(&mut self, x: Var, leading: usize, mask: &[bool]) -> Result<Var> {
        let (rows, feats, out_shape) = self.rows_features(x, leading, "masked_mean")?;
        let count = count_mask(mask, rows, "masked_mean")?;
        let mut out = vec![0.0; feats];
        for (row, _) in self.value(x).data().chunks(feats).zip(mask).filter(|(_, &m)| m) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MaskedMean { x, mask: mask.to_vec(), count }, &[x]))
    }

    /// `sqrt(var + eps)` per feature over the masked rows (population variance).
    pub fn masked_std(&mut self, x: Var, leading: usize, mask: &[bool]) -> Result<Var> {
        let (rows, feats, out_shape) = self.rows_features(x, leading, "masked_std")?;
        let count = count_mask(mask, rows, "masked_std")?;
        let (mean, var) = masked_moments(self.value(x).data(), feats, mask, count);
        let out = var.iter().map(|v| (v + NORM_EPS).sqrt()).collect();
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MaskedStd { x, mask: mask.to_vec(), mean, count }, &[x]))
    }

    /// Standardizes each feature over the masked rows; masked rows become zero.
    pub fn instance_norm(&mut self, x: Var, leading: usize, mask: &[bool]) -> Result<Var> {
        let (rows, feats, _) = self.rows_features(x, leading, "instance_norm")?;
        let count = count_mask(mask, rows, "instance_norm")?;
        let t = self.value(x);
        let (mean, var) = masked_moments(t.data(), feats, mask, count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; t.len()];
        for ((out, row), _) in xhat.chunks_mut(feats).zip(t.data().chunks(feats)).zip(mask).filter(|(_, &m)| m) {
            for f in 0..feats {
                out[f] = (row[f] - mean[f]) * inv_std[f];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), xhat.clone())?;
        Ok(self.push(value, Op::InstanceNorm { x, mask: mask.to_vec(), xhat, inv_std }, &[x]))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = f(*v));
        value
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| gelu_parts(v).0);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::ln);
        self.push(value, Op::Ln(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.map(x, |v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of each last-axis slice.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let data: Vec<f64> = t.data().chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let shape = if t.rank() > 1 { t.shape()[..t.rank() - 1].to_vec() } else { vec![1] };
        let value = Tensor::new(shape, data).expect("row count matches");
        self.push(value, Op::RowNorms(x), &[x])
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| invalid("add_all", "no inputs"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Reverse sweep from a scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(k, v)| (*k, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let live = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                acc(*a, &mut |ga| gemm(m, n, k, g, false, val(*b).data(), true, ga, 1.0));
                acc(*b, &mut |gb| gemm(k, m, n, val(*a).data(), true, g, false, gb, 1.0));
            }
            Op::Linear { x, w, b } => {
                let sw = val(*w).shape();
                let (input, out_dim) = (sw[0], sw[1]);
                let rows = g.len() / out_dim;
                acc(*x, &mut |gx| gemm(rows, out_dim, input, g, false, val(*w).data(), true, gx, 1.0));
                acc(*w, &mut |gw| gemm(input, rows, out_dim, val(*x).data(), true, g, false, gw, 1.0));
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for row in g.chunks(out_dim) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    });
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = val(*a).shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = out.shape()[2];
                let (da, db) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &db[i * k * n..(i + 1) * k * n];
                        // trans_b: dA = G·B, else dA = G·Bᵀ
                        gemm(m, n, k, gi, false, bi, !*trans_b, &mut ga[i * m * k..(i + 1) * m * k], 1.0);
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &da[i * m * k..(i + 1) * m * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gi, true, ai, false, gbi, 1.0);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, gbi, 1.0);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, v)| *x += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, v)| *x += v));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, v)| *x += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, v)| *x -= v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for ((x, v), o) in ga.iter_mut().zip(g).zip(vb) {
                        *x += v * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, v), o) in gb.iter_mut().zip(g).zip(va) {
                        *x += v * o;
                    }
                });
            }
            Op::AddTrailing(x, v) => {
                let d = val(*v).len();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*v, &mut |gv| {
                    for row in g.chunks(d) {
                        gv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MulTrailing(x, v) => {
                let vv = val(*v).data();
                let d = vv.len();
                acc(*x, &mut |gx| {
                    for (grow, orow) in gx.chunks_mut(d).zip(g.chunks(d)) {
                        for ((a, b), c) in grow.iter_mut().zip(orow).zip(vv) {
                            *a += b * c;
                        }
                    }
                });
                let xv = val(*x).data();
                acc(*v, &mut |gv| {
                    for (orow, xrow) in g.chunks(d).zip(xv.chunks(d)) {
                        for ((a, b), c) in gv.iter_mut().zip(orow).zip(xrow) {
                            *a += b * c;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b)),
            Op::Shift(x) | Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
            Op::Permute(x, axes) => {
                let idx = permute_index(val(*x).shape(), axes);
                acc(*x, &mut |gx| {
                    for (o, &src) in idx.iter().enumerate() {
                        gx[src] += g[o];
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let chunk = val(x).shape()[*axis] * inner;
                    if live(x) {
                        acc(x, &mut |gx| {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                gx[o * chunk..(o + 1) * chunk].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                            }
                        });
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = val(*x).shape();
                let len = out.shape()[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = (o * shape[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[base..base + len * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Gather(x, idx) => {
                let d = val(*x).last_dim();
                acc(*x, &mut |gx| {
                    for (r, row) in g.chunks(idx.len()).enumerate() {
                        for (j, &i) in idx.iter().enumerate() {
                            gx[r * d + i] += row[j];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = out.last_dim();
                acc(*x, &mut |gx| {
                    for ((grow, yrow), orow) in gx.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(orow).map(|(y, o)| y * o).sum();
                        for ((a, y), o) in grow.iter_mut().zip(yrow).zip(orow) {
                            *a += y * (o - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = val(*gain).data();
                let d = gv.len();
                acc(*gain, &mut |gg| {
                    for (orow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, o), h) in gg.iter_mut().zip(orow).zip(hrow) {
                            *a += o * h;
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for orow in g.chunks(d) {
                        gb.iter_mut().zip(orow).for_each(|(a, o)| *a += o);
                    }
                });
                acc(*x, &mut |gx| {
                    let mut dh = vec![0.0; d];
                    for (r, ((grow, orow), hrow)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = orow[j] * gv[j];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        for j in 0..d {
                            grow[j] += k * (d as f64 * dh[j] - s1 - hrow[j] * s2);
                        }
                    }
                });
            }
            Op::InstanceNorm { x, mask, xhat, inv_std } => {
                let feats = inv_std.len();
                let n = mask.iter().filter(|&&m| m).count() as f64;
                let mut s1 = vec![0.0; feats];
                let mut s2 = vec![0.0; feats];
                for ((orow, hrow), _) in g.chunks(feats).zip(xhat.chunks(feats)).zip(mask).filter(|(_, &m)| m) {
                    for f in 0..feats {
                        s1[f] += orow[f];
                        s2[f] += orow[f] * hrow[f];
                    }
                }
                acc(*x, &mut |gx| {
                    let rows = gx.chunks_mut(feats).zip(g.chunks(feats)).zip(xhat.chunks(feats)).zip(mask);
                    for (((grow, orow), hrow), _) in rows.filter(|(_, &m)| m) {
                        for f in 0..feats {
                            grow[f] += inv_std[f] / n * (n * orow[f] - s1[f] - hrow[f] * s2[f]);
                        }
                    }
                });
            }
            Op::MaskedMean { x, mask, count } => {
                let feats = g.len();
                let c = *count as f64;
                acc(*x, &mut |gx| {
                    for (grow, _) in gx.chunks_mut(feats).zip(mask).filter(|(_, &m)| m) {
                        grow.iter_mut().zip(g).for_each(|(a, o)| *a += o / c);
                    }
                });
            }
            Op::MaskedStd { x, mask, mean, count } => {
                let feats = g.len();
                let c = *count as f64;
                let std = out.data();
                let xv = val(*x).data();
                acc(*x, &mut |gx| {
                    for ((grow, xrow), _) in gx.chunks_mut(feats).zip(xv.chunks(feats)).zip(mask).filter(|(_, &m)| m) {
                        for f in 0..feats {
                            grow[f] += g[f] * (xrow[f] - mean[f]) / (c * std[f]);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, o), v) in gx.iter_mut().zip(g).zip(xv) {
                        *a += o * gelu_parts(*v).1;
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((a, o), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += o * y * (1.0 - y);
                }
            }),
            Op::Ln(x) => {
                let xv = val(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, o), v) in gx.iter_mut().zip(g).zip(xv) {
                        *a += o / v;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, o), v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > lo && v < hi {
                            *a += o;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0])),
            Op::RowNorms(x) => {
                let xv = val(*x).data();
                let d = xv.len() / out.len();
                acc(*x, &mut |gx| {
                    for (((grow, xrow), o), y) in gx.chunks_mut(d).zip(xv.chunks(d)).zip(g).zip(out.data()) {
                        // subgradient 0 at the origin
                        if *y > 0.0 {
                            grow.iter_mut().zip(xrow).for_each(|(a, v)| *a += o * v / y);
                        }
                    }
                });
            }
        }
    }
}

fn masked_moments(data: &[f64], feats: usize, mask: &[bool], count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; feats];
    for (row, _) in data.chunks(feats).zip(mask).filter(|(_, &m)| m) {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= count as f64);
    let mut var = vec![0.0; feats];
    for (row, _) in data.chunks(feats).zip(mask).filter(|(_, &m)| m) {
        for f in 0..feats {
            let c = row[f] - mean[f];
            var[f] += c * c;
        }
    }
    var.iter_mut().for_each(|a| *a /= count as f64);
    (mean, var)
}
