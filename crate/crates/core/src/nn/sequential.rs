use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, Dropout, Linear, Mode, Param, Silu, DROPOUT_P};
use super::tensor::Tensor2D;
use crate::error::Result;

pub const ENCODER_WIDTHS: [usize; 6] = [784, 512, 256, 128, 64, 3];
pub const CLASSIFIER_WIDTHS: [usize; 7] = [3, 512, 512, 512, 128, 64, 10];

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Silu(Silu),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
}

/// A feed-forward stack that caches what it needs for one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    /// `Linear → SiLU → BatchNorm → Dropout` for every hidden width, then a
    /// bare output `Linear`.
    pub fn mlp(widths: &[usize], dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::Linear(Linear::new(pair[0], pair[1], rng)));
            if i + 2 < widths.len() {
                layers.push(Layer::Silu(Silu::default()));
                layers.push(Layer::BatchNorm(BatchNorm::new(pair[1])));
                layers.push(Layer::Dropout(Dropout::new(dropout)));
            }
        }
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor2D, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor2D> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Linear(l) => l.forward(&h)?,
                Layer::Silu(s) => s.forward(&h),
                Layer::BatchNorm(b) => b.forward(&h, mode)?,
                Layer::Dropout(d) => d.forward(&h, mode, rng),
            };
        }
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor2D) -> Tensor2D {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Linear(l) => l.backward(&g),
                Layer::Silu(s) => s.backward(&g),
                Layer::BatchNorm(b) => b.backward(&g),
                Layer::Dropout(d) => d.backward(&g),
            };
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                Layer::Silu(_) | Layer::Dropout(_) => {}
            }
        }
        out
    }

    /// Trainable parameters and running statistics, named `{prefix}.{index}.{field}`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor2D)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("{prefix}.{i}.weight"), &l.weight.value));
                    out.push((format!("{prefix}.{i}.bias"), &l.bias.value));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{prefix}.{i}.gamma"), &b.gamma.value));
                    out.push((format!("{prefix}.{i}.beta"), &b.beta.value));
                    out.push((format!("{prefix}.{i}.running_mean"), &b.running_mean));
                    out.push((format!("{prefix}.{i}.running_var"), &b.running_var));
                }
                Layer::Silu(_) | Layer::Dropout(_) => {}
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor2D)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("{prefix}.{i}.weight"), &mut l.weight.value));
                    out.push((format!("{prefix}.{i}.bias"), &mut l.bias.value));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{prefix}.{i}.gamma"), &mut b.gamma.value));
                    out.push((format!("{prefix}.{i}.beta"), &mut b.beta.value));
                    out.push((format!("{prefix}.{i}.running_mean"), &mut b.running_mean));
                    out.push((format!("{prefix}.{i}.running_var"), &mut b.running_var));
                }
                Layer::Silu(_) | Layer::Dropout(_) => {}
            }
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(l) => Some(l.out_features()),
            _ => None,
        })
    }
}

pub fn build_encoder(rng: &mut ChaCha8Rng) -> Sequential {
    Sequential::mlp(&ENCODER_WIDTHS, DROPOUT_P, rng)
}

pub fn build_classifier(rng: &mut ChaCha8Rng) -> Sequential {
    Sequential::mlp(&CLASSIFIER_WIDTHS, DROPOUT_P, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn block_pattern_follows_table_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = build_encoder(&mut rng);
        // 4 hidden blocks of 4 layers plus the output linear
        assert_eq!(enc.layers.len(), 17);
        assert!(matches!(enc.layers[0], Layer::Linear(_)));
        assert!(matches!(enc.layers[1], Layer::Silu(_)));
        assert!(matches!(enc.layers[2], Layer::BatchNorm(_)));
        assert!(matches!(enc.layers[3], Layer::Dropout(_)));
        assert!(matches!(enc.layers[16], Layer::Linear(_)));
        assert_eq!(enc.output_width(), Some(3));

        let cls = build_classifier(&mut rng);
        assert_eq!(cls.layers.len(), 21);
        assert_eq!(cls.output_width(), Some(10));
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Linear: in·out + out; BatchNorm: 2·width.
        let enc_expected = (784 * 512 + 512) + (512 * 256 + 256) + (256 * 128 + 128)
            + (128 * 64 + 64) + (64 * 3 + 3) + 2 * (512 + 256 + 128 + 64);
        let cls_expected = (3 * 512 + 512) + 2 * (512 * 512 + 512) + (512 * 128 + 128)
            + (128 * 64 + 64) + (64 * 10 + 10) + 2 * (512 * 3 + 128 + 64);
        assert_eq!(build_encoder(&mut rng).param_count(), enc_expected);
        assert_eq!(build_classifier(&mut rng).param_count(), cls_expected);
    }

    #[test]
    fn zero_image_forward_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut enc = build_encoder(&mut rng);
        let mut cls = build_classifier(&mut rng);
        let z = enc.forward(&Tensor2D::zeros(1, 784), Mode::Eval, &mut rng).unwrap();
        let logits = cls.forward(&z, Mode::Eval, &mut rng).unwrap();
        assert_eq!(logits.shape(), (1, 10));
        assert!(logits.is_finite());
    }
}
