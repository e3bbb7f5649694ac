use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, matmul, Tensor2D, Transpose};
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const DROPOUT_P: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2D,
    pub grad: Tensor2D,
}

impl Param {
    pub fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2D::zeros(r, c),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform in `±sqrt(1 / fan_in)`.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor2D::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `out × in`
    pub weight: Param,
    /// `1 × out`
    pub bias: Param,
    input: Option<Tensor2D>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = fan_in_uniform(outputs, inputs, inputs, rng);
        let bias = fan_in_uniform(1, outputs, inputs, rng);
        Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&mut self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.in_features() {
            return Err(Error::Shape(format!(
                "linear layer expects {} features, got {}",
                self.in_features(),
                x.cols()
            )));
        }
        let mut y = Tensor2D::zeros(x.rows(), self.out_features());
        let bias = self.bias.value.data();
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(bias);
        }
        gemm(x, &self.weight.value, Transpose::Right, 1.0, &mut y);
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor2D) -> Tensor2D {
        let x = self.input.as_ref().expect("linear backward before forward");
        gemm(dy, x, Transpose::Left, 1.0, &mut self.weight.grad);
        let db = self.bias.grad.data_mut();
        for r in 0..dy.rows() {
            for (g, d) in db.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        matmul(dy, &self.weight.value, Transpose::None)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `d/dx [x σ(x)] = σ(x) (1 + x (1 - σ(x)))`.
pub fn silu_slope(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Default)]
pub struct Silu {
    input: Option<Tensor2D>,
}

impl Silu {
    pub fn forward(&mut self, x: &Tensor2D) -> Tensor2D {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = silu(*v));
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor2D) -> Tensor2D {
        let x = self.input.as_ref().expect("silu backward before forward");
        let mut dx = dy.clone();
        for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            *g *= silu_slope(v);
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    normalized: Tensor2D,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Per-feature batch normalization over the batch (row) axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor2D,
    /// Updated with the unbiased batch variance.
    pub running_var: Tensor2D,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BatchNormCache>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        let mut ones = Tensor2D::zeros(1, features);
        ones.fill(1.0);
        Self {
            gamma: Param::new(ones.clone()),
            beta: Param::new(Tensor2D::zeros(1, features)),
            running_mean: Tensor2D::zeros(1, features),
            running_var: ones,
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.cols()
    }

    pub fn forward(&mut self, x: &Tensor2D, mode: Mode) -> Result<Tensor2D> {
        let f = self.features();
        if x.cols() != f {
            return Err(Error::Shape(format!(
                "batch norm expects {f} features, got {}",
                x.cols()
            )));
        }
        let n = x.rows();
        let (mean, var) = match mode {
            Mode::Train => {
                if n == 0 {
                    return Err(Error::EmptyBatch);
                }
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);

                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let mom = self.momentum;
                for j in 0..f {
                    let rm = &mut self.running_mean.data_mut()[j];
                    *rm = (1.0 - mom) * *rm + mom * mean[j];
                    let rv = &mut self.running_var.data_mut()[j];
                    *rv = (1.0 - mom) * *rv + mom * var[j] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Tensor2D::zeros(n, f);
        let mut y = Tensor2D::zeros(n, f);
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            let xr = x.row(r);
            let nr = normalized.row_mut(r);
            for j in 0..f {
                nr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(r);
            for j in 0..f {
                yr[j] = gamma[j] * normalized.get(r, j) + beta[j];
            }
        }
        self.cache = Some(BatchNormCache {
            normalized,
            inv_std,
            mode,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor2D) -> Tensor2D {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let (n, f) = dy.shape();
        let xhat = &cache.normalized;
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..n {
            for j in 0..f {
                let d = dy.get(r, j);
                sum_dy[j] += d;
                sum_dy_xhat[j] += d * xhat.get(r, j);
            }
        }
        for j in 0..f {
            self.gamma.grad.data_mut()[j] += sum_dy_xhat[j];
            self.beta.grad.data_mut()[j] += sum_dy[j];
        }

        let gamma = self.gamma.value.data();
        let mut dx = Tensor2D::zeros(n, f);
        match cache.mode {
            Mode::Eval => {
                for r in 0..n {
                    for j in 0..f {
                        dx.set(r, j, dy.get(r, j) * gamma[j] * cache.inv_std[j]);
                    }
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for r in 0..n {
                    for j in 0..f {
                        let scale = gamma[j] * cache.inv_std[j] / nf;
                        let v = nf * dy.get(r, j) - sum_dy[j] - xhat.get(r, j) * sum_dy_xhat[j];
                        dx.set(r, j, scale * v);
                    }
                }
            }
        }
        dx
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor2D, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor2D {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.gen::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor2D) -> Tensor2D {
        let mut dx = dy.clone();
        if let Some(mask) = &self.mask {
            for (g, m) in dx.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        dx
    }
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits.
pub fn softmax_cross_entropy(logits: &Tensor2D, labels: &[u8]) -> Result<(f64, Tensor2D)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows of logits",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut grad = Tensor2D::zeros(n, k);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[label];
        let g = grad.row_mut(r);
        for j in 0..k {
            g[j] = (row[j] - log_z).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}
