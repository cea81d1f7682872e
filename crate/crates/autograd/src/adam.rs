use crate::error::{invalid, Result, TensorError};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        let v = m.clone();
        AdamState { config, step: 0, params, m, v }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn moments(&self, slot: usize) -> (&[f64], &[f64]) {
        (&self.m[slot], &self.v[slot])
    }

    /// Overwrites the moment buffers of one slot (checkpoint restore).
    pub fn set_moments(&mut self, slot: usize, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != self.m[slot].len() || v.len() != self.v[slot].len() {
            return Err(TensorError::ShapeMismatch { op: "set_moments", lhs: vec![self.m[slot].len()], rhs: vec![m.len()] });
        }
        self.m[slot] = m;
        self.v[slot] = v;
        Ok(())
    }

    /// One bias-corrected Adam update using the gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(invalid("adam", format!("learning rate must be positive, got {lr}")));
        }
        for (slot, &id) in self.params.iter().enumerate() {
            if store.value(id).len() != self.m[slot].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: store.value(id).shape().to_vec(),
                    rhs: vec![self.m[slot].len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, &id) in self.params.iter().enumerate() {
            let (value, grad) = store.parts_mut(id);
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (((w, g), m), v) in value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Tape, Tensor};

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut adam = AdamState::new(&store, vec![w], AdamConfig::default());
        adam.step(&mut store, 0.1).unwrap();
        assert_eq!(store.value(w).data(), &[1.0, -2.0, 0.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&grads);
        let mut adam = AdamState::new(&store, vec![w], AdamConfig::default());
        adam.step(&mut store, 0.01).unwrap();
        assert!((store.value(w).item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store, vec![w], AdamConfig::default());
        let mut losses = Vec::new();
        let mut approach = None;
        for step in 0..100 {
            store.zero_grad();
            let mut tape = Tape::new();
            let x = tape.param(&store, w);
            let d = tape.add_scalar(x, -3.0);
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq);
            losses.push(tape.value(loss).item());
            if approach.is_none() && store.value(w).item() >= 3.0 {
                approach = Some(step);
            }
            let grads = tape.backward(loss).unwrap();
            store.accumulate(&grads);
            adam.step(&mut store, 0.1).unwrap();
        }
        assert!((store.value(w).item() - 3.0).abs() < 0.5);
        // momentum overshoots the minimum; the loss falls monotonically until w first crosses 3
        let approach = approach.expect("w never reached 3");
        assert!(losses[..=approach].windows(2).all(|p| p[1] <= p[0]), "loss not monotone: {losses:?}");
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store, vec![w], AdamConfig::default());
        assert!(adam.step(&mut store, 0.0).is_err());
    }
}
