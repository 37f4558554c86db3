use crate::error::{Error, Result};
use crate::model::ModelWeights;

pub const DEFAULT_LEARNING_RATE: f32 = 1e-3;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(weights: &ModelWeights, learning_rate: f32) -> Self {
        let sizes: Vec<usize> = weights.named().iter().map(|(_, t)| t.numel()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moments, in checkpoint tensor order.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// One update from `grads` (checkpoint tensor order). A zero learning rate
    /// leaves every weight bit-identical.
    pub fn apply(&mut self, weights: &mut ModelWeights, grads: &[Vec<f32>]) -> Result<()> {
        let mut params = weights.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} weights and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for (((param, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != m.len() {
                return Err(Error::shape("adam", &[m.len()], &[g.len()]));
            }
            let w = param.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                if lr != 0.0 {
                    w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}
