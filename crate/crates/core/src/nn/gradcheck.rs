//! Central-difference checks of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{BatchNorm, Linear, Mode, Silu};
use super::sequential::{Layer, Sequential};
use super::tensor::Tensor2D;
use crate::quad_reg::{
    cube_discriminant, cube_discriminant_grad, quad_loss, quad_loss_backward, CubeHead,
    LatentVector, ProbeQuadraticForm, QuadLossMode,
};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

fn central_difference(f: &mut impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub fragment: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

/// Checks every parameter and input coordinate of `seq` against central
/// differences of `Σ R ⊙ seq(x)` for a fixed random projection `R`. Dropout
/// layers must have `p = 0`.
pub fn check_sequential(
    name: &str,
    seq: &mut Sequential,
    x: &Tensor2D,
    mode: Mode,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> GradcheckReport {
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    let out = seq.forward(x, mode, &mut fwd_rng).expect("forward");
    let projection = Tensor2D::from_fn(out.rows(), out.cols(), |_, _| rng.gen_range(-1.0..1.0));
    let objective = |seq: &mut Sequential, x: &Tensor2D| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let y = seq.forward(x, mode, &mut r).expect("forward");
        y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum()
    };

    for p in seq.params_mut() {
        p.zero_grad();
    }
    seq.forward(x, mode, &mut fwd_rng).expect("forward");
    let dx = seq.backward(&projection);
    let analytic: Vec<Vec<f64>> = seq
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let n_params = analytic.len();
    for (pi, grads) in analytic.iter().enumerate().take(n_params) {
        for (i, &g) in grads.iter().enumerate() {
            let original = seq.params_mut()[pi].value.data()[i];
            let mut f = |v: f64| {
                seq.params_mut()[pi].value.data_mut()[i] = v;
                objective(seq, x)
            };
            let numeric = central_difference(&mut f, original, step);
            seq.params_mut()[pi].value.data_mut()[i] = original;
            worst = worst.max(relative_error(g, numeric));
            checked += 1;
        }
    }
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let original = x.data()[i];
        let mut f = |v: f64| {
            probe.data_mut()[i] = v;
            objective(seq, &probe)
        };
        let numeric = central_difference(&mut f, original, step);
        probe.data_mut()[i] = original;
        worst = worst.max(relative_error(dx.data()[i], numeric));
        checked += 1;
    }

    GradcheckReport {
        fragment: name.to_string(),
        checked,
        max_relative_error: worst,
    }
}

fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

pub fn check_linear_silu(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Sequential {
        layers: vec![
            Layer::Linear(Linear::new(6, 5, &mut rng)),
            Layer::Silu(Silu::default()),
        ],
    };
    let x = random_input(4, 6, &mut rng);
    check_sequential("linear+silu", &mut seq, &x, Mode::Train, DEFAULT_STEP, &mut rng)
}

pub fn check_batchnorm(seed: u64, mode: Mode) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNorm::new(4);
    for (g, b) in bn.gamma.value.data_mut().iter_mut().zip(bn.beta.value.data_mut()) {
        *g = rng.gen_range(0.5..1.5);
        *b = rng.gen_range(-0.5..0.5);
    }
    for (m, v) in bn.running_mean.data_mut().iter_mut().zip(bn.running_var.data_mut()) {
        *m = rng.gen_range(-0.5..0.5);
        *v = rng.gen_range(0.5..2.0);
    }
    let mut seq = Sequential {
        layers: vec![Layer::BatchNorm(bn)],
    };
    let x = random_input(6, 4, &mut rng);
    let name = match mode {
        Mode::Train => "batchnorm(train)",
        Mode::Eval => "batchnorm(eval)",
    };
    check_sequential(name, &mut seq, &x, mode, DEFAULT_STEP, &mut rng)
}

/// Width-reduced encoder `16 → 8 → 3` in train mode with dropout disabled.
pub fn check_small_encoder(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Sequential::mlp(&[16, 8, 3], 0.0, &mut rng);
    let x = random_input(5, 16, &mut rng);
    check_sequential("encoder(16-8-3)", &mut seq, &x, Mode::Train, DEFAULT_STEP, &mut rng)
}

fn random_head(rng: &mut ChaCha8Rng) -> CubeHead {
    let mut head = CubeHead::default();
    for e in 0..8 {
        head.bias[e] = rng.gen_range(-0.8..0.8);
        for k in 0..3 {
            head.weight[e][k] = rng.gen_range(-0.8..0.8);
        }
    }
    head
}

fn random_latents(n: usize, rng: &mut ChaCha8Rng) -> Vec<LatentVector> {
    (0..n)
        .map(|_| LatentVector([0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))))
        .collect()
}

fn random_probes(rng: &mut ChaCha8Rng) -> [ProbeQuadraticForm; 3] {
    [0, 1, 2].map(|_| {
        let mut p = ProbeQuadraticForm::default();
        for i in 0..3 {
            for j in 0..3 {
                p.a[i][j] += rng.gen_range(-0.4..0.4);
            }
            p.b[i] = rng.gen_range(-0.5..0.5);
        }
        p.c = rng.gen_range(0.5..1.5);
        p.symmetrize();
        p
    })
}

/// Applies `visit` to every scalar of a head, latent batch and probe set, in
/// a fixed order shared by the analytic and numeric sides.
fn for_each_scalar(
    head: &mut CubeHead,
    latents: &mut [LatentVector],
    probes: &mut [ProbeQuadraticForm; 3],
    mut visit: impl FnMut(&mut f64),
) {
    for e in 0..8 {
        for k in 0..3 {
            visit(&mut head.weight[e][k]);
        }
        visit(&mut head.bias[e]);
    }
    for z in latents.iter_mut() {
        for k in 0..3 {
            visit(&mut z.0[k]);
        }
    }
    for p in probes.iter_mut() {
        for i in 0..3 {
            for j in 0..3 {
                visit(&mut p.a[i][j]);
            }
            visit(&mut p.b[i]);
        }
        visit(&mut p.c);
    }
}

pub fn check_quad_loss(seed: u64, mode: QuadLossMode) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = random_head(&mut rng);
    let latents = random_latents(4, &mut rng);
    let probes = random_probes(&mut rng);

    let grad = quad_loss_backward(&head, &probes, &latents, mode).expect("non-empty batch");
    let mut g_head = CubeHead {
        weight: grad.head.weight,
        bias: grad.head.bias,
    };
    let mut g_latents: Vec<LatentVector> = grad.latents.iter().map(|g| LatentVector(*g)).collect();
    let mut g_probes = grad.probes.map(|g| ProbeQuadraticForm { a: g.a, b: g.b, c: g.c });
    let mut analytic = Vec::new();
    for_each_scalar(&mut g_head, &mut g_latents, &mut g_probes, |v| analytic.push(*v));

    // A latent only enters its own sample's term, and the batch loss is the
    // mean of the per-sample terms. Differencing that term alone keeps the
    // other samples' values out of the cancellation.
    let head_scalars = 8 * 4;
    let latent_scalars = 3 * latents.len();
    let batch = latents.len() as f64;

    let mut worst = 0.0f64;
    let total = analytic.len();
    for (idx, &a) in analytic.iter().enumerate() {
        if (head_scalars..head_scalars + latent_scalars).contains(&idx) {
            let (i, k) = ((idx - head_scalars) / 3, (idx - head_scalars) % 3);
            let mut term = |v: f64| {
                let mut z = latents[i];
                z.0[k] = v;
                quad_loss(&head, &probes, &[z], mode).expect("non-empty batch") / batch
            };
            let numeric = central_difference(&mut term, latents[i].0[k], DEFAULT_STEP);
            worst = worst.max(relative_error(a, numeric));
            continue;
        }
        let evaluate = |delta: f64| {
            let mut h = head;
            let mut zs = latents.clone();
            let mut ps = probes;
            let mut n = 0;
            for_each_scalar(&mut h, &mut zs, &mut ps, |v| {
                if n == idx {
                    *v += delta;
                }
                n += 1;
            });
            quad_loss(&h, &ps, &zs, mode).expect("non-empty batch")
        };
        let numeric = (evaluate(DEFAULT_STEP) - evaluate(-DEFAULT_STEP)) / (2.0 * DEFAULT_STEP);
        worst = worst.max(relative_error(a, numeric));
    }

    GradcheckReport {
        fragment: format!("quad_loss({mode})"),
        checked: total,
        max_relative_error: worst,
    }
}

pub fn check_cube_discriminant(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = random_head(&mut rng);
    let z = random_latents(1, &mut rng)[0];
    let g = cube_discriminant_grad(&head, &z);

    let mut worst = 0.0f64;
    let mut checked = 0;
    for e in 0..8 {
        for k in 0..3 {
            let mut f = |v: f64| {
                let mut h = head;
                h.weight[e][k] = v;
                cube_discriminant(&h, &z)
            };
            let n = central_difference(&mut f, head.weight[e][k], DEFAULT_STEP);
            worst = worst.max(relative_error(g.head.weight[e][k], n));
            checked += 1;
        }
        let mut f = |v: f64| {
            let mut h = head;
            h.bias[e] = v;
            cube_discriminant(&h, &z)
        };
        let n = central_difference(&mut f, head.bias[e], DEFAULT_STEP);
        worst = worst.max(relative_error(g.head.bias[e], n));
        checked += 1;
    }
    for k in 0..3 {
        let mut f = |v: f64| {
            let mut zz = z;
            zz.0[k] = v;
            cube_discriminant(&head, &zz)
        };
        let n = central_difference(&mut f, z.0[k], DEFAULT_STEP);
        worst = worst.max(relative_error(g.latent[k], n));
        checked += 1;
    }
    GradcheckReport {
        fragment: "cube_discriminant".into(),
        checked,
        max_relative_error: worst,
    }
}

/// Every fragment at one seed.
pub fn run_suite(seed: u64) -> Vec<GradcheckReport> {
    vec![
        check_linear_silu(seed),
        check_batchnorm(seed, Mode::Train),
        check_batchnorm(seed, Mode::Eval),
        check_small_encoder(seed),
        check_cube_discriminant(seed),
        check_quad_loss(seed, QuadLossMode::Cube),
        check_quad_loss(seed, QuadLossMode::Probe),
    ]
}
