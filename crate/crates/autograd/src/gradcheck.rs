//! Central finite differences for checking analytic gradients.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::{Tape, Tensor, Var};

/// Numerical gradient of `f` at `x` using step `h`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Entry-wise `|a - n| / max(|a|, |n|, floor)`, maximized over the vectors.
///
/// `floor` keeps entries whose true gradient is essentially zero from turning
/// round-off into large relative errors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst relative error of the tape's gradient with respect to every input of
/// the scalar graph `build`, against central differences with step `h`.
pub fn input_gradient_error(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var, h: f64, floor: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], x.len());
        let numeric = central_difference(
            |probe| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, y)| {
                        let value = if j == k { Tensor::new(y.shape().to_vec(), probe.to_vec()).expect("same shape") } else { y.clone() };
                        tape.input(value)
                    })
                    .collect();
                let loss = build(&mut tape, &vars);
                tape.value(loss).item()
            },
            x.data(),
            h,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric, floor));
    }
    worst
}

/// Weighted sum with fixed random weights, so upstream gradients differ per entry.
pub fn probe_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let w = Tensor::randn(tape.shape(x).to_vec(), 1.0, &mut StdRng::seed_from_u64(seed));
    let w = tape.constant(w);
    let p = tape.mul(x, w).expect("same shape");
    tape.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Every differentiable op on random inputs: `(name, worst relative error)`.
pub fn op_suite(h: f64, floor: f64) -> Vec<(&'static str, f64)> {
    let mut r = StdRng::seed_from_u64(6);
    let x = Tensor::randn(vec![3, 4, 6], 1.0, &mut r);
    let y = Tensor::randn(vec![3, 4, 6], 1.0, &mut r);
    let v6 = Tensor::randn(vec![6], 1.0, &mut r);
    let m = Tensor::randn(vec![5, 7], 1.0, &mut r);
    let w = Tensor::randn(vec![7, 3], 1.0, &mut r);
    let b3 = Tensor::randn(vec![3], 1.0, &mut r);
    let ba = Tensor::randn(vec![3, 4, 5], 1.0, &mut r);
    let bb = Tensor::randn(vec![3, 5, 2], 1.0, &mut r);
    let bt = Tensor::randn(vec![3, 2, 5], 1.0, &mut r);
    let in_mask = [true, true, false, true, true, true, true, false, true, true, true, true];
    let keep = [true, false, true, true, true, false];
    let cases: Vec<(&'static str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![m.clone(), w.clone()], Box::new(|t, v| { let o = t.matmul(v[0], v[1]).unwrap(); probe_sum(t, o, 30) })),
        ("linear", vec![m.clone(), w.clone(), b3], Box::new(|t, v| { let o = t.linear(v[0], v[1], Some(v[2])).unwrap(); probe_sum(t, o, 31) })),
        ("add", vec![x.clone(), y.clone()], Box::new(|t, v| { let o = t.add(v[0], v[1]).unwrap(); probe_sum(t, o, 1) })),
        ("sub", vec![x.clone(), y.clone()], Box::new(|t, v| { let o = t.sub(v[0], v[1]).unwrap(); probe_sum(t, o, 2) })),
        ("mul", vec![x.clone(), y.clone()], Box::new(|t, v| { let o = t.mul(v[0], v[1]).unwrap(); probe_sum(t, o, 3) })),
        ("add_trailing", vec![x.clone(), v6.clone()], Box::new(|t, v| { let o = t.add_trailing(v[0], v[1]).unwrap(); probe_sum(t, o, 4) })),
        ("mul_trailing", vec![x.clone(), v6.clone()], Box::new(|t, v| { let o = t.mul_trailing(v[0], v[1]).unwrap(); probe_sum(t, o, 5) })),
        ("scale", vec![x.clone()], Box::new(|t, v| { let o = t.scale(v[0], -1.7); probe_sum(t, o, 6) })),
        ("add_scalar", vec![x.clone()], Box::new(|t, v| { let o = t.add_scalar(v[0], 0.4); let o = t.mul(o, o).unwrap(); probe_sum(t, o, 32) })),
        ("reshape", vec![x.clone()], Box::new(|t, v| { let o = t.reshape(v[0], &[12, 6]).unwrap(); probe_sum(t, o, 7) })),
        ("permute", vec![x.clone()], Box::new(|t, v| { let o = t.permute(v[0], &[2, 0, 1]).unwrap(); probe_sum(t, o, 8) })),
        ("concat", vec![x.clone(), y.clone()], Box::new(|t, v| { let o = t.concat(&[v[0], v[1]], 1).unwrap(); probe_sum(t, o, 9) })),
        ("narrow", vec![x.clone()], Box::new(|t, v| { let o = t.narrow(v[0], 1, 1, 2).unwrap(); probe_sum(t, o, 10) })),
        ("gather_last", vec![x.clone()], Box::new(|t, v| { let o = t.gather_last(v[0], &[5, 0, 0, 3]).unwrap(); probe_sum(t, o, 11) })),
        ("softmax", vec![x.clone()], Box::new(|t, v| { let o = t.softmax_last(v[0]); probe_sum(t, o, 12) })),
        ("masked_softmax", vec![x.clone()], Box::new(move |t, v| { let o = t.masked_softmax_last(v[0], &keep).unwrap(); probe_sum(t, o, 13) })),
        ("layer_norm", vec![x.clone(), v6.clone(), v6.clone()], Box::new(|t, v| { let o = t.layer_norm(v[0], v[1], v[2]).unwrap(); probe_sum(t, o, 14) })),
        ("instance_norm", vec![x.clone()], Box::new(move |t, v| { let o = t.instance_norm(v[0], 2, &in_mask).unwrap(); probe_sum(t, o, 15) })),
        ("masked_mean", vec![x.clone()], Box::new(|t, v| { let o = t.masked_mean(v[0], 1, &[true, false, true]).unwrap(); probe_sum(t, o, 16) })),
        ("masked_std", vec![x.clone()], Box::new(|t, v| { let o = t.masked_std(v[0], 2, &[true; 12]).unwrap(); probe_sum(t, o, 17) })),
        ("gelu", vec![x.clone()], Box::new(|t, v| { let o = t.gelu(v[0]); probe_sum(t, o, 18) })),
        ("sigmoid", vec![x.clone()], Box::new(|t, v| { let o = t.sigmoid(v[0]); probe_sum(t, o, 19) })),
        ("ln", vec![x.clone()], Box::new(|t, v| { let s = t.sigmoid(v[0]); let o = t.ln(s); probe_sum(t, o, 20) })),
        ("clamp", vec![x.clone()], Box::new(|t, v| { let o = t.clamp(v[0], -5.0, 5.0); probe_sum(t, o, 21) })),
        ("row_norms", vec![x.clone()], Box::new(|t, v| { let o = t.row_norms(v[0]); probe_sum(t, o, 22) })),
        ("sum", vec![x.clone()], Box::new(|t, v| { let m = t.mul(v[0], v[0]).unwrap(); t.sum(m) })),
        ("mean", vec![x.clone()], Box::new(|t, v| { let m = t.mul(v[0], v[0]).unwrap(); t.mean(m) })),
        ("add_all", vec![x.clone(), y.clone()], Box::new(|t, v| { let a = probe_sum(t, v[0], 33); let b = probe_sum(t, v[1], 34); t.add_all(&[a, b, a]).unwrap() })),
        ("bmm", vec![ba.clone(), bb], Box::new(|t, v| { let o = t.bmm(v[0], v[1], false).unwrap(); probe_sum(t, o, 23) })),
        ("bmm_nt", vec![ba, bt], Box::new(|t, v| { let o = t.bmm(v[0], v[1], true).unwrap(); probe_sum(t, o, 24) })),
    ];
    cases.into_iter().map(|(name, inputs, build)| (name, input_gradient_error(&inputs, &*build, h, floor))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
