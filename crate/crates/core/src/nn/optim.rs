use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `lr(epoch) = initial · factor^⌊epoch / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub factor: f64,
    pub every: usize,
}

impl StepSchedule {
    pub fn lr_at(&self, initial: f64, epoch: usize) -> f64 {
        if self.every == 0 {
            return initial;
        }
        initial * self.factor.powi((epoch / self.every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: StepSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: StepSchedule { factor: 0.1, every: 80 },
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.schedule.factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lr: config.lr,
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }

    /// Applies the step schedule at an epoch boundary.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.config.schedule.lr_at(self.config.lr, epoch);
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], decay: &[bool]) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n || decay.len() != n {
            return Err(Error::shape("optimizer parameters", n, params.len().min(grads.len()).min(decay.len())));
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} at parameter {k} (step {})",
                grads[k],
                self.step + 1
            )));
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for k in 0..n {
            let g = grads[k];
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            let mut p = params[k];
            if decay[k] {
                p -= self.lr * c.weight_decay * p;
            }
            params[k] = p - self.lr * mhat / (vhat.sqrt() + c.eps);
        }
        Ok(())
    }
}
