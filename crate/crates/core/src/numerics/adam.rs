//! Adam with standard bias correction.

use super::{NumericsError, ParamGrads, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment estimates per parameter slot plus the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> AdamState {
        let m = (0..store.len())
            .map(|s| vec![0.0; store.tensor(s).len()])
            .collect::<Vec<_>>();
        AdamState {
            config,
            v: m.clone(),
            m,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &ParamGrads,
    ) -> Result<(), NumericsError> {
        if grads.len() != store.len() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![store.len()],
                found: vec![grads.len()],
            });
        }
        self.step_count += 1;
        let t = self.step_count;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for slot in 0..store.len() {
            let g = grads.slot(slot);
            let p = store.tensor_mut(slot);
            if g.len() != p.len() {
                return Err(NumericsError::ShapeMismatch {
                    expected: vec![p.len()],
                    found: vec![g.len()],
                });
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.check_finite("adam parameter update")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn single_param(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![value]));
        store
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = single_param(1.5);
        let grads = ParamGrads::zeros_like(&store);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("p").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // grad 1 at t=1: m_hat = v_hat = 1, so the step is lr/(1+eps).
        let mut store = single_param(0.0);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.slot_mut(0)[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        let p = store.get("p").unwrap().data()[0];
        assert!((p + 1e-4).abs() < 1e-9, "param {p}");
    }

    #[test]
    fn step_counter_increments() {
        let mut store = single_param(0.0);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.slot_mut(0)[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = single_param(0.0);
        let other = {
            let mut s = ParamStore::new();
            s.insert("a", Tensor::vector(vec![0.0, 0.0]));
            s
        };
        let grads = ParamGrads::zeros_like(&other);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        assert!(adam.step(&mut store, &grads).is_err());
    }
}
