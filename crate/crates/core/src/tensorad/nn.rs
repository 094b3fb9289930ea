//! Layers built on the tensor ops: linear, conv+BN+ReLU blocks, residual
//! blocks and a GRU cell, plus parameter registration for checkpoints.

use super::{seed_acc_with, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Named trainable tensor. Names are hierarchical paths and must be unique
/// within a model.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Collects named parameters (and named non-trainable state like batchnorm
/// running statistics) for optimizers and checkpoints.
#[derive(Default)]
pub struct ParamSet {
    pub params: Vec<Parameter>,
    pub state: Vec<Parameter>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor) {
        let name = name.into();
        debug_assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            tensor: tensor.clone(),
        });
    }

    pub fn push_state(&mut self, name: impl Into<String>, tensor: &Tensor) {
        self.state.push(Parameter {
            name: name.into(),
            tensor: tensor.clone(),
        });
    }
}

/// Kaiming-uniform initialization: U(±√(6/fan_in)).
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).requires_grad()
}

/// Plain uniform U(±1/√fan_in) used for recurrent weights.
pub fn simple_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).requires_grad()
}

/// Fully connected layer on 1-D inputs.
pub struct Linear {
    pub weight: Tensor, // [out, in]
    pub bias: Tensor,   // [out]
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: kaiming_uniform(rng, &[out_dim, in_dim], in_dim),
            bias: Tensor::zeros(&[out_dim]).requires_grad(),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.weight.matmul(x).add(&self.bias)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.weight"), &self.weight);
        set.push(format!("{prefix}.bias"), &self.bias);
    }
}

/// Two-layer perceptron with ReLU between, the building block of the graph
/// stage.
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            l1: Linear::new(rng, in_dim, hidden),
            l2: Linear::new(rng, hidden, out_dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.l2.forward(&self.l1.forward(x).relu())
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.l1.register(&format!("{prefix}.l1"), set);
        self.l2.register(&format!("{prefix}.l2"), set);
    }
}

/// Whether batch statistics are computed fresh (training) or read from the
/// running buffers (evaluation). `update_running` is off during gradient
/// checking so repeated forwards stay identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train { update_running: bool },
    Eval,
}

/// 2-D batch normalization over the spatial extent of a single example.
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    channels: usize,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
            channels,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        match mode {
            BnMode::Train { update_running } => self.forward_train(x, update_running),
            BnMode::Eval => self.forward_eval(x),
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Tensor {
        // y = γ·(x − μ_run)/√(σ²_run + ε) + β, composed so γ and β still
        // receive gradients.
        let rm = self.running_mean.to_vec();
        let rv = self.running_var.to_vec();
        let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let inv = Tensor::from_vec(&[self.channels], inv_std.clone());
        let shift: Vec<f64> = rm
            .iter()
            .zip(&inv_std)
            .map(|(m, is)| -m * is)
            .collect();
        let shift = Tensor::from_vec(&[self.channels], shift);
        let a = self.gamma.mul(&inv);
        let b = self.gamma.mul(&shift).add(&self.beta);
        x.channel_affine(&a, &b)
    }

    fn forward_train(&self, x: &Tensor, update_running: bool) -> Tensor {
        let (c, h, w) = match x.shape() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("batchnorm input must be [C,H,W], got {s:?}"),
        };
        assert_eq!(c, self.channels, "batchnorm channel mismatch");
        let hw = h * w;
        let xv = x.to_vec();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let plane = &xv[ci * hw..(ci + 1) * hw];
            let m: f64 = plane.iter().sum::<f64>() / hw as f64;
            let v: f64 = plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / hw as f64;
            mean[ci] = m;
            var[ci] = v;
        }
        if update_running {
            let mut rm = self.running_mean.to_vec();
            let mut rv = self.running_var.to_vec();
            for ci in 0..c {
                rm[ci] = (1.0 - self.momentum) * rm[ci] + self.momentum * mean[ci];
                rv[ci] = (1.0 - self.momentum) * rv[ci] + self.momentum * var[ci];
            }
            self.running_mean.set_data(&rm);
            self.running_var.set_data(&rv);
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        for ci in 0..c {
            for i in 0..hw {
                xhat[ci * hw + i] = (xv[ci * hw + i] - mean[ci]) * inv_std[ci];
            }
        }
        let gv = self.gamma.to_vec();
        let bv = self.beta.to_vec();
        let mut out = vec![0.0; xv.len()];
        for ci in 0..c {
            for i in 0..hw {
                out[ci * hw + i] = xhat[ci * hw + i] * gv[ci] + bv[ci];
            }
        }

        let px = x.clone();
        let pg = self.gamma.clone();
        let pb = self.beta.clone();
        let xhat_saved = xhat;
        let inv_saved = inv_std;
        Tensor::result_pub(
            vec![c, h, w],
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            Box::new(move |g| {
                // Standard batchnorm backward over each channel plane.
                let n = hw as f64;
                let gamma = pg.with_data(|d| d.to_vec());
                seed_acc_with(&px, c * hw, |buf| {
                    for ci in 0..c {
                        let gch = &g[ci * hw..(ci + 1) * hw];
                        let xh = &xhat_saved[ci * hw..(ci + 1) * hw];
                        let sum_g: f64 = gch.iter().sum();
                        let sum_gx: f64 = gch.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = gamma[ci] * inv_saved[ci] / n;
                        for i in 0..hw {
                            buf[ci * hw + i] +=
                                k * (n * gch[i] - sum_g - xh[i] * sum_gx);
                        }
                    }
                });
                seed_acc_with(&pg, c, |buf| {
                    for ci in 0..c {
                        let gch = &g[ci * hw..(ci + 1) * hw];
                        let xh = &xhat_saved[ci * hw..(ci + 1) * hw];
                        buf[ci] += gch.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                seed_acc_with(&pb, c, |buf| {
                    for ci in 0..c {
                        buf[ci] += g[ci * hw..(ci + 1) * hw].iter().sum::<f64>();
                    }
                });
            }),
        )
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.gamma"), &self.gamma);
        set.push(format!("{prefix}.beta"), &self.beta);
        set.push_state(format!("{prefix}.running_mean"), &self.running_mean);
        set.push_state(format!("{prefix}.running_var"), &self.running_var);
    }
}

/// Convolution block: conv → batchnorm → optional ReLU.
pub struct ConvB {
    pub weight: Tensor, // [Cout,Cin,k,k]
    pub bn: BatchNorm2d,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
}

impl ConvB {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        assert!(k == 3 || k == 1, "ConvB supports 3x3 and 1x1 kernels");
        Self {
            weight: kaiming_uniform(rng, &[cout, cin, k, k], cin * k * k),
            bn: BatchNorm2d::new(cout),
            stride,
            pad: k / 2,
            relu: true,
        }
    }

    pub fn no_relu(mut self) -> Self {
        self.relu = false;
        self
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        let y = x.conv2d(&self.weight, None, self.stride, self.pad);
        let y = self.bn.forward(&y, mode);
        if self.relu {
            y.relu()
        } else {
            y
        }
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.weight"), &self.weight);
        self.bn.register(&format!("{prefix}.bn"), set);
    }
}

/// Pre-activation residual block (ResNet v2): x + conv(relu(bn(conv(relu(bn(x)))))).
pub struct ResB {
    pub bn1: BatchNorm2d,
    pub conv1: Tensor,
    pub bn2: BatchNorm2d,
    pub conv2: Tensor,
}

impl ResB {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        Self {
            bn1: BatchNorm2d::new(channels),
            conv1: kaiming_uniform(rng, &[channels, channels, 3, 3], channels * 9),
            bn2: BatchNorm2d::new(channels),
            conv2: kaiming_uniform(rng, &[channels, channels, 3, 3], channels * 9),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        let y = self.bn1.forward(x, mode).relu().conv2d(&self.conv1, None, 1, 1);
        let y = self.bn2.forward(&y, mode).relu().conv2d(&self.conv2, None, 1, 1);
        x.add(&y)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.bn1.register(&format!("{prefix}.bn1"), set);
        set.push(format!("{prefix}.conv1"), &self.conv1);
        self.bn2.register(&format!("{prefix}.bn2"), set);
        set.push(format!("{prefix}.conv2"), &self.conv2);
    }
}

/// Gated recurrent unit cell.
///
/// z = σ(W_z·[h,x] + b_z), r = σ(W_r·[h,x] + b_r),
/// ĥ = tanh(W_h·[r⊙h, x] + b_h), h' = (1−z)⊙h + z⊙ĥ.
pub struct GruCell {
    pub w_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub b_h: Tensor,
    pub hidden: usize,
    pub input: usize,
}

impl GruCell {
    pub fn new(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> Self {
        let cat = hidden + input;
        Self {
            w_z: simple_uniform(rng, &[hidden, cat], cat),
            b_z: Tensor::zeros(&[hidden]).requires_grad(),
            w_r: simple_uniform(rng, &[hidden, cat], cat),
            b_r: Tensor::zeros(&[hidden]).requires_grad(),
            w_h: simple_uniform(rng, &[hidden, cat], cat),
            b_h: Tensor::zeros(&[hidden]).requires_grad(),
            hidden,
            input,
        }
    }

    pub fn forward(&self, h: &Tensor, x: &Tensor) -> Tensor {
        assert_eq!(h.shape(), &[self.hidden], "gru hidden shape");
        assert_eq!(x.shape(), &[self.input], "gru input shape");
        let hx = Tensor::concat(&[h, x]);
        let z = self.w_z.matmul(&hx).add(&self.b_z).sigmoid();
        let r = self.w_r.matmul(&hx).add(&self.b_r).sigmoid();
        let rh = r.mul(h);
        let rhx = Tensor::concat(&[&rh, x]);
        let cand = self.w_h.matmul(&rhx).add(&self.b_h).tanh();
        let one_minus_z = z.neg().add_scalar(1.0);
        one_minus_z.mul(h).add(&z.mul(&cand))
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.w_z"), &self.w_z);
        set.push(format!("{prefix}.b_z"), &self.b_z);
        set.push(format!("{prefix}.w_r"), &self.w_r);
        set.push(format!("{prefix}.b_r"), &self.b_r);
        set.push(format!("{prefix}.w_h"), &self.w_h);
        set.push(format!("{prefix}.b_h"), &self.b_h);
    }
}
