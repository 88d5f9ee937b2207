//! Adam with classic L2 weight decay folded into the gradient.

use crate::error::{Error, Result};
use crate::model::Container;
use crate::ndgrad::Tensor;

use super::TrainConfig;

/// First/second moment buffers, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState {
    entries: Vec<(String, Vec<f64>, Vec<f64>)>,
    steps: usize,
}

impl AdamState {
    pub fn new(params: &[(String, Tensor)]) -> AdamState {
        AdamState {
            entries: params
                .iter()
                .map(|(name, t)| (name.clone(), vec![0.0; t.numel()], vec![0.0; t.numel()]))
                .collect(),
            steps: 0,
        }
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&String, &Vec<f64>, &Vec<f64>)> {
        self.entries.iter().map(|(n, m, v)| (n, m, v))
    }

    pub fn load_arrays(&mut self, c: &Container) -> Result<()> {
        for (name, m, v) in self.entries.iter_mut() {
            let mk = format!("state.adam.m.{name}");
            let vk = format!("state.adam.v.{name}");
            let find = |key: &str| -> Result<&Vec<f64>> {
                c.arrays
                    .iter()
                    .find(|(n, _, _)| n == key)
                    .map(|(_, _, d)| d)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer array {key}")))
            };
            m.copy_from_slice(find(&mk)?);
            v.copy_from_slice(find(&vk)?);
        }
        // step count rides along in train_state; recovered via set_steps
        Ok(())
    }

    pub fn set_steps(&mut self, steps: usize) {
        self.steps = steps;
    }

    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64, cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(Error::Usage(
                "optimizer state does not match the trainable parameter set".into(),
            ));
        }
        self.steps += 1;
        let (b1, b2) = cfg.adam_betas;
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        for ((name, t), (ename, m, v)) in params.iter().zip(self.entries.iter_mut()) {
            debug_assert_eq!(name, ename);
            let grad = t.grad_or_zeros();
            t.update_data(|data| {
                for i in 0..data.len() {
                    let g = grad[i] + cfg.weight_decay * data[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            });
        }
        Ok(())
    }
}
