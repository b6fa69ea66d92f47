use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len(), "adam state length");
        assert_eq!(grads.len(), self.m.len(), "gradient length");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Flat parameters and gradients of one network together with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub params: Vec<f64>,
    pub grads: Vec<f64>,
    pub adam: AdamState,
}

impl ParameterBlock {
    pub fn new(params: Vec<f64>) -> Self {
        let len = params.len();
        Self {
            params,
            grads: vec![0.0; len],
            adam: AdamState::new(len),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot(self.params.clone())
    }

    pub fn restore(&mut self, snapshot: &ParamSnapshot) {
        self.params.copy_from_slice(&snapshot.0);
    }
}

/// A frozen copy of network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot(Vec<f64>);

impl ParamSnapshot {
    pub fn params(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamSnapshot {
    fn from(params: Vec<f64>) -> Self {
        Self(params)
    }
}

/// Adam step on the block's own gradients and moment state.
pub fn adam_step(block: &mut ParameterBlock, cfg: &AdamConfig) {
    let ParameterBlock { params, grads, adam } = block;
    adam.step(params, grads, cfg);
}

/// Rescale `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
