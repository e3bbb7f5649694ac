use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::fan_in_uniform;
use crate::nn::{build_classifier, build_encoder, Mode, Param, Sequential, Tensor2D};
use crate::quad_reg::{CubeHead, LatentVector, ProbeQuadraticForm, QuadLossGrad};

pub const LATENT_DIM: usize = 3;
pub const PROBE_COUNT: usize = 3;
const PROBE_INIT_NOISE: f64 = 0.01;

/// Trainable coefficients of one probe form.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    /// `3 × 3`, kept symmetric.
    pub a: Param,
    /// `1 × 3`
    pub b: Param,
    /// `1 × 1`
    pub c: Param,
}

impl ProbeParams {
    fn init(rng: &mut ChaCha8Rng) -> Self {
        let a = Tensor2D::from_fn(3, 3, |i, j| {
            if i == j {
                1.0 + rng.gen_range(-PROBE_INIT_NOISE..PROBE_INIT_NOISE)
            } else {
                0.0
            }
        });
        let c = Tensor2D::from_vec(1, 1, vec![1.0]).expect("scalar");
        Self {
            a: Param::new(a),
            b: Param::new(Tensor2D::zeros(1, 3)),
            c: Param::new(c),
        }
    }

    pub fn form(&self) -> ProbeQuadraticForm {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            row.copy_from_slice(self.a.value.row(i));
        }
        let mut b = [0.0; 3];
        b.copy_from_slice(self.b.value.data());
        ProbeQuadraticForm {
            a,
            b,
            c: self.c.value.data()[0],
        }
    }

    pub fn symmetrize(&mut self) {
        let m = &mut self.a.value;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let s = 0.5 * (m.get(i, j) + m.get(j, i));
                m.set(i, j, s);
                m.set(j, i, s);
            }
        }
    }
}

/// Encoder, classifier, cube head and probe forms.
#[derive(Debug, Clone)]
pub struct Bcmem {
    pub encoder: Sequential,
    pub classifier: Sequential,
    /// `8 × 3`
    pub head_weight: Param,
    /// `1 × 8`
    pub head_bias: Param,
    pub probes: Vec<ProbeParams>,
    dropout_rng: ChaCha8Rng,
}

impl Bcmem {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&mut rng);
        let classifier = build_classifier(&mut rng);
        let head_weight = Param::new(fan_in_uniform(8, LATENT_DIM, LATENT_DIM, &mut rng));
        let head_bias = Param::new(fan_in_uniform(1, 8, LATENT_DIM, &mut rng));
        let probes = (0..PROBE_COUNT).map(|_| ProbeParams::init(&mut rng)).collect();
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(u64::MAX);
        Self {
            encoder,
            classifier,
            head_weight,
            head_bias,
            probes,
            dropout_rng,
        }
    }

    pub fn cube_head(&self) -> CubeHead {
        let mut head = CubeHead::default();
        for e in 0..8 {
            head.weight[e].copy_from_slice(self.head_weight.value.row(e));
        }
        head.bias.copy_from_slice(self.head_bias.value.data());
        head
    }

    pub fn probe_forms(&self) -> [ProbeQuadraticForm; PROBE_COUNT] {
        [0, 1, 2].map(|k| self.probes[k].form())
    }

    pub fn encode(&mut self, x: &Tensor2D, mode: Mode) -> Result<Tensor2D> {
        self.encoder.forward(x, mode, &mut self.dropout_rng)
    }

    pub fn classify(&mut self, z: &Tensor2D, mode: Mode) -> Result<Tensor2D> {
        self.classifier.forward(z, mode, &mut self.dropout_rng)
    }

    /// Accumulates the regularizer's head and probe gradients scaled by `weight`.
    pub fn accumulate_quad_grads(&mut self, grad: &QuadLossGrad, weight: f64) {
        let hw = self.head_weight.grad.data_mut();
        for e in 0..8 {
            for k in 0..3 {
                hw[e * 3 + k] += weight * grad.head.weight[e][k];
            }
        }
        for (g, v) in self.head_bias.grad.data_mut().iter_mut().zip(grad.head.bias) {
            *g += weight * v;
        }
        for (p, g) in self.probes.iter_mut().zip(&grad.probes) {
            let a = p.a.grad.data_mut();
            for i in 0..3 {
                for j in 0..3 {
                    a[i * 3 + j] += weight * g.a[i][j];
                }
            }
            for (dst, v) in p.b.grad.data_mut().iter_mut().zip(g.b) {
                *dst += weight * v;
            }
            p.c.grad.data_mut()[0] += weight * g.c;
        }
    }

    /// All trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        out.extend(self.classifier.params_mut());
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        for p in &mut self.probes {
            out.push(&mut p.a);
            out.push(&mut p.b);
            out.push(&mut p.c);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn after_step(&mut self) {
        for p in &mut self.probes {
            p.symmetrize();
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Every tensor a checkpoint stores, including batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out = self.encoder.named_tensors("encoder");
        out.extend(self.classifier.named_tensors("classifier"));
        out.push(("cube_head.weight".into(), &self.head_weight.value));
        out.push(("cube_head.bias".into(), &self.head_bias.value));
        for (k, p) in self.probes.iter().enumerate() {
            out.push((format!("probe.{k}.a"), &p.a.value));
            out.push((format!("probe.{k}.b"), &p.b.value));
            out.push((format!("probe.{k}.c"), &p.c.value));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2D)> {
        let mut out = self.encoder.named_tensors_mut("encoder");
        out.extend(self.classifier.named_tensors_mut("classifier"));
        out.push(("cube_head.weight".into(), &mut self.head_weight.value));
        out.push(("cube_head.bias".into(), &mut self.head_bias.value));
        for (k, p) in self.probes.iter_mut().enumerate() {
            out.push((format!("probe.{k}.a"), &mut p.a.value));
            out.push((format!("probe.{k}.b"), &mut p.b.value));
            out.push((format!("probe.{k}.c"), &mut p.c.value));
        }
        out
    }

    /// Name of the first tensor (parameter, gradient or statistic) holding a
    /// non-finite value.
    pub fn first_non_finite(&mut self) -> Option<String> {
        if let Some((name, _)) = self.named_tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            return Some(name);
        }
        let names: Vec<String> = self
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !n.ends_with("running_mean") && !n.ends_with("running_var"))
            .collect();
        self.params_mut()
            .iter()
            .zip(names)
            .find(|(p, _)| !p.grad.is_finite())
            .map(|(_, n)| format!("{n}.grad"))
    }

    /// Overwrites tensors by name. Every tensor of the model must be supplied
    /// with a matching shape.
    pub fn load_tensors(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor2D>) -> Result<()> {
        for (name, dst) in self.named_tensors_mut() {
            let src = lookup(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        Ok(())
    }
}

pub fn latents_of(z: &Tensor2D) -> Vec<LatentVector> {
    (0..z.rows())
        .map(|r| {
            let row = z.row(r);
            LatentVector([row[0], row[1], row[2]])
        })
        .collect()
}
