//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use serde::{Deserialize, Serialize};

/// Linear warmup, then cosine decay from `peak` to `floor * peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub floor: f64,
}

impl Schedule {
    pub fn new(peak: f64, total_steps: usize, warmup_frac: f64, floor: f64) -> Self {
        let warmup_steps = ((total_steps as f64 * warmup_frac).round() as usize).max(1).min(total_steps.max(1));
        Schedule { peak, total_steps, warmup_steps, floor }
    }

    /// Learning rate of the 0-based step `s`.
    pub fn lr(&self, s: usize) -> f64 {
        if s < self.warmup_steps {
            return self.peak * (s + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((s - self.warmup_steps) as f64 / span).min(1.0);
        let min = self.floor * self.peak;
        min + (self.peak - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(n: usize, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        AdamW { beta1: betas.0, beta2: betas.1, eps, weight_decay, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One update. `decay[i]` marks entries subject to weight decay.
    pub fn step(&mut self, p: &mut [f64], g: &[f64], decay: &[bool], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let upd = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            let wd = if decay[i] { self.weight_decay * p[i] } else { 0.0 };
            p[i] -= lr * (upd + wd);
        }
    }
}
