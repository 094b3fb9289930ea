//! Adam optimizer with bias correction.

use super::nn::Parameter;
use super::Tensor;

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    // First/second moment buffers, aligned with the parameter list.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Parameter]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters; missing gradients are treated as zero
    /// (the moments still decay).
    pub fn step(&mut self, params: &[Parameter], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let g = p.tensor.grad();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.tensor.with_data_mut(|data| {
                for j in 0..data.len() {
                    let gj = g.as_ref().map_or(0.0, |g| g[j]);
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            });
        }
    }

    pub fn zero_grads(&self, params: &[Parameter]) {
        for p in params {
            p.tensor.zero_grad();
        }
    }

    /// Optimizer state as named tensors so checkpoints can restore training
    /// bit-identically.
    pub fn state_tensors(&self, params: &[Parameter]) -> Vec<Parameter> {
        let mut out = Vec::with_capacity(params.len() * 2 + 1);
        out.push(Parameter {
            name: "optim.adam.step".into(),
            tensor: Tensor::from_vec(&[1], vec![self.step as f64]),
        });
        for (i, p) in params.iter().enumerate() {
            out.push(Parameter {
                name: format!("optim.adam.m.{}", p.name),
                tensor: Tensor::from_vec(p.tensor.shape(), self.m[i].clone()),
            });
            out.push(Parameter {
                name: format!("optim.adam.v.{}", p.name),
                tensor: Tensor::from_vec(p.tensor.shape(), self.v[i].clone()),
            });
        }
        out
    }

    pub fn load_state(&mut self, params: &[Parameter], lookup: impl Fn(&str) -> Option<Vec<f64>>) {
        if let Some(s) = lookup("optim.adam.step") {
            self.step = s[0] as u64;
        }
        for (i, p) in params.iter().enumerate() {
            if let Some(m) = lookup(&format!("optim.adam.m.{}", p.name)) {
                self.m[i] = m;
            }
            if let Some(v) = lookup(&format!("optim.adam.v.{}", p.name)) {
                self.v[i] = v;
            }
        }
    }
}
