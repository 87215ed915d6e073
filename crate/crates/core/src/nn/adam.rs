use super::tensor::ModelWeights;
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Multiplier applied to the learning rate once per completed epoch.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            decay: 0.96,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments plus the step and epoch counters driving bias correction
/// and the exponential learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
    pub completed_epochs: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            completed_epochs: 0,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.lr
            * self
                .config
                .decay
                .powi(self.completed_epochs.min(i32::MAX as u64) as i32)
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of `weights` in place.
    pub fn apply(&mut self, weights: &mut ModelWeights, grads: &ModelWeights) -> Result<()> {
        weights.check_compatible(grads)?;
        if self.m.is_empty() {
            self.m = weights
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect();
            self.v = self.m.clone();
        } else if self.m.len() != weights.tensors().len()
            || self
                .m
                .iter()
                .zip(weights.tensors())
                .any(|(m, t)| m.len() != t.len())
        {
            return Err(NnError::ShapeMismatch(
                "optimizer state does not match weights".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.effective_lr();
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (((w, g), m), v) in weights
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..w.data.len() {
                let gi = g.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Value-passing form of [`AdamState::apply`].
pub fn adam_step(
    mut weights: ModelWeights,
    grads: &ModelWeights,
    mut state: AdamState,
) -> Result<(ModelWeights, AdamState)> {
    state.apply(&mut weights, grads)?;
    Ok((weights, state))
}
