//! Adam with bias correction, operating on a named parameter set.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Named trainable tensors. Parameter ids are positions in `tensors`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| (t.rows, t.cols)).collect()
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        Adam {
            cfg,
            m: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
            v: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut params.tensors[i];
            for e in 0..g.data.len() {
                let grad = g.data[e];
                m.data[e] = self.cfg.beta1 * m.data[e] + (1.0 - self.cfg.beta1) * grad;
                v.data[e] = self.cfg.beta2 * v.data[e] + (1.0 - self.cfg.beta2) * grad * grad;
                let m_hat = m.data[e] / bc1;
                let v_hat = v.data[e] / bc2;
                p.data[e] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_on_quadratic() {
        // f(x) = sum x^2, gradient 2x; Adam should drive x to ~0.
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &params);
        for _ in 0..500 {
            let grads = vec![Tensor::from_vec(
                1,
                3,
                params.tensors[0].data.iter().map(|x| 2.0 * x).collect(),
            )];
            opt.step(&mut params, &grads);
        }
        for x in &params.tensors[0].data {
            assert!(x.abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn first_step_size_is_lr() {
        // With bias correction the very first update has magnitude ~lr.
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 1, vec![1.0]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &params);
        opt.step(&mut params, &[Tensor::from_vec(1, 1, vec![0.37])]);
        assert!((params.tensors[0].data[0] - 0.9).abs() < 1e-6);
    }
}
