//! Differentiable discriminant-consistency regularizer on 3-dimensional
//! latent codes.
//!
//! Two instantiations of the composition target are available:
//!
//! * [`QuadLossMode::Cube`]: each latent `z` is mapped to a real cube
//!   `c(z) = W z + b`. The three slice forms of a cube share a discriminant
//!   `D(z)`, and so does the composition of any two of them, so the residual for
//!   each of the three slice pairs is `D - D·D·D² = D - D⁴`. The loss is
//!   `(3 / B) Σᵢ (Dᵢ - Dᵢ⁴)²`.
//! * [`QuadLossMode::Probe`]: three learned ternary quadratics
//!   `Q_k(z) = zᵀA_k z + b_kᵀz + c_k` are compared through the determinants of
//!   their 4×4 augmented matrices, with the symmetrized product as the
//!   composition. This term only depends on the probe coefficients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

/// Slice-pair index triples `(p, q, r)`: `(p, q)` composed, `r` the remaining probe.
pub const PROBE_PAIRS: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatentVector(pub [f64; 3]);

impl LatentVector {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Affine map from a latent code to the eight entries of a real cube, in the
/// same `4i + 2j + k` order as [`crate::cube_algebra::Cube`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubeHead {
    pub weight: [[f64; 3]; 8],
    pub bias: [f64; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubeHeadGrad {
    pub weight: [[f64; 3]; 8],
    pub bias: [f64; 8],
}

impl CubeHead {
    pub fn cube(&self, z: &LatentVector) -> [f64; 8] {
        let mut out = self.bias;
        for (e, w) in out.iter_mut().zip(&self.weight) {
            *e += w[0] * z.0[0] + w[1] * z.0[1] + w[2] * z.0[2];
        }
        out
    }
}

/// `Q(z) = zᵀ A z + bᵀ z + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeQuadraticForm {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
    pub c: f64,
}

impl Default for ProbeQuadraticForm {
    fn default() -> Self {
        Self {
            a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            b: [0.0; 3],
            c: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeGrad {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
    pub c: f64,
}

impl ProbeQuadraticForm {
    /// `[[A, b/2], [bᵀ/2, c]]`.
    pub fn augmented(&self) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.a[i][j];
            }
            m[i][3] = self.b[i] / 2.0;
            m[3][i] = self.b[i] / 2.0;
        }
        m[3][3] = self.c;
        m
    }

    /// Replaces `A` by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..3 {
            for j in (i + 1)..3 {
                let s = 0.5 * (self.a[i][j] + self.a[j][i]);
                self.a[i][j] = s;
                self.a[j][i] = s;
            }
        }
    }
}

impl ProbeGrad {
    /// Pulls a gradient with respect to the augmented matrix back onto
    /// `(A, b, c)`.
    fn from_augmented(g: &Mat4) -> Self {
        let mut out = Self::default();
        for i in 0..3 {
            for j in 0..3 {
                out.a[i][j] = g[i][j];
            }
            out.b[i] = 0.5 * (g[i][3] + g[3][i]);
        }
        out.c = g[3][3];
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadLossMode {
    #[default]
    Cube,
    Probe,
    None,
}

impl fmt::Display for QuadLossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuadLossMode::Cube => "cube",
            QuadLossMode::Probe => "probe",
            QuadLossMode::None => "none",
        })
    }
}

impl FromStr for QuadLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(QuadLossMode::Cube),
            "probe" => Ok(QuadLossMode::Probe),
            "none" => Ok(QuadLossMode::None),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Real-valued slice forms `(a, b, c)` of a cube, same formulas as the exact
/// integer version.
pub fn slice_forms_real(e: &[f64; 8]) -> [[f64; 3]; 3] {
    let form = |m: [f64; 4], n: [f64; 4]| {
        let det = |x: [f64; 4]| x[0] * x[3] - x[1] * x[2];
        let (dm, dn) = (det(m), det(n));
        let cross = m[0] * n[3] + n[0] * m[3] - m[1] * n[2] - n[1] * m[2];
        [-dm, -cross, -dn]
    };
    [
        form([e[0], e[1], e[2], e[3]], [e[4], e[5], e[6], e[7]]),
        form([e[0], e[2], e[4], e[6]], [e[1], e[3], e[5], e[7]]),
        form([e[0], e[4], e[1], e[5]], [e[2], e[6], e[3], e[7]]),
    ]
}

fn form_discriminant(f: &[f64; 3]) -> f64 {
    f[1] * f[1] - 4.0 * f[0] * f[2]
}

/// Discriminant of the first slice form of a real cube, and its gradient with
/// respect to the eight entries.
pub fn real_cube_discriminant(e: &[f64; 8]) -> (f64, [f64; 8]) {
    let a = -(e[0] * e[3] - e[1] * e[2]);
    let c = -(e[4] * e[7] - e[5] * e[6]);
    let b = -(e[0] * e[7] + e[4] * e[3] - e[1] * e[6] - e[5] * e[2]);
    let d = b * b - 4.0 * a * c;

    let (gb, ga, gc) = (2.0 * b, -4.0 * c, -4.0 * a);
    let grad = [
        -ga * e[3] - gb * e[7],
        ga * e[2] + gb * e[6],
        ga * e[1] + gb * e[5],
        -ga * e[0] - gb * e[4],
        -gc * e[7] - gb * e[3],
        gc * e[6] + gb * e[2],
        gc * e[5] + gb * e[1],
        -gc * e[4] - gb * e[0],
    ];
    (d, grad)
}

pub fn cube_discriminant(head: &CubeHead, z: &LatentVector) -> f64 {
    real_cube_discriminant(&head.cube(z)).0
}

/// Slice discriminants of `c(z)` computed from all three slicings.
pub fn cube_slice_discriminants(head: &CubeHead, z: &LatentVector) -> [f64; 3] {
    slice_forms_real(&head.cube(z)).map(|f| form_discriminant(&f))
}

/// Gradients of `D(z)` with respect to the latent and the head parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubeDiscriminantGrad {
    pub value: f64,
    pub latent: [f64; 3],
    pub head: CubeHeadGrad,
}

pub fn cube_discriminant_grad(head: &CubeHead, z: &LatentVector) -> CubeDiscriminantGrad {
    let (value, d_entries) = real_cube_discriminant(&head.cube(z));
    let mut out = CubeDiscriminantGrad {
        value,
        ..Default::default()
    };
    for (e, g) in d_entries.iter().enumerate() {
        out.head.bias[e] = *g;
        for k in 0..3 {
            out.head.weight[e][k] = g * z.0[k];
            out.latent[k] += g * head.weight[e][k];
        }
    }
    out
}

/// `|D (D³ - 1)|`, the per-sample violation of the cube-mode constraint.
pub fn discriminant_residual(d: f64) -> f64 {
    (d * (d * d * d - 1.0)).abs()
}

pub fn probe_eval(p: &ProbeQuadraticForm, z: &LatentVector) -> f64 {
    let z = &z.0;
    let mut acc = p.c;
    for i in 0..3 {
        acc += p.b[i] * z[i];
        for j in 0..3 {
            acc += z[i] * p.a[i][j] * z[j];
        }
    }
    acc
}

/// Gradient of [`probe_eval`] with respect to `z` and the coefficients.
pub fn probe_eval_grad(p: &ProbeQuadraticForm, z: &LatentVector) -> ([f64; 3], ProbeGrad) {
    let z = &z.0;
    let mut dz = p.b;
    let mut g = ProbeGrad {
        b: *z,
        c: 1.0,
        ..Default::default()
    };
    for i in 0..3 {
        for j in 0..3 {
            dz[i] += (p.a[i][j] + p.a[j][i]) * z[j];
            g.a[i][j] = z[i] * z[j];
        }
    }
    (dz, g)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det4(m: &Mat4) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    det
}

/// Cofactor matrix, i.e. `∂det(M)/∂M`.
pub fn cofactor4(m: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut minor = [[0.0; 3]; 3];
            let rows = (0..4).filter(|&r| r != i);
            for (mi, r) in rows.enumerate() {
                let cols = (0..4).filter(|&c| c != j);
                for (mj, c) in cols.enumerate() {
                    minor[mi][mj] = m[r][c];
                }
            }
            let d = minor[0][0] * (minor[1][1] * minor[2][2] - minor[1][2] * minor[2][1])
                - minor[0][1] * (minor[1][0] * minor[2][2] - minor[1][2] * minor[2][0])
                + minor[0][2] * (minor[1][0] * minor[2][1] - minor[1][1] * minor[2][0]);
            *cell = if (i + j) % 2 == 0 { d } else { -d };
        }
    }
    out
}

fn mat_mul4(x: &Mat4, y: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| x[i][k] * y[k][j]).sum();
        }
    }
    out
}

/// `½ (X Y + Y X)`.
pub fn jordan_product(x: &Mat4, y: &Mat4) -> Mat4 {
    let xy = mat_mul4(x, y);
    let yx = mat_mul4(y, x);
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = 0.5 * (xy[i][j] + yx[i][j]);
        }
    }
    out
}

/// Discriminant of a ternary quadratic: the determinant of its augmented matrix.
pub fn probe_discriminant(p: &ProbeQuadraticForm) -> f64 {
    det4(&p.augmented())
}

pub fn jordan_compose(p: &ProbeQuadraticForm, q: &ProbeQuadraticForm) -> Mat4 {
    jordan_product(&p.augmented(), &q.augmented())
}

pub fn total_loss(task_loss: f64, quad: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(task_loss + lambda * quad)
}

/// Regularizer value plus gradients for every input it depends on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadLossGrad {
    pub loss: f64,
    /// One row per latent; all zero outside cube mode.
    pub latents: Vec<[f64; 3]>,
    pub head: CubeHeadGrad,
    pub probes: [ProbeGrad; 3],
}

fn cube_loss_terms(head: &CubeHead, latents: &[LatentVector]) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = latents
        .iter()
        .map(|z| {
            let d = cube_discriminant(head, z);
            let r = d - d * d * d * d;
            r * r
        })
        .sum();
    Ok(3.0 * sum / latents.len() as f64)
}

fn probe_loss_terms(probes: &[ProbeQuadraticForm; 3]) -> f64 {
    let aug = probes.map(|p| p.augmented());
    let dets = aug.map(|m| det4(&m));
    PROBE_PAIRS
        .iter()
        .map(|&(p, q, r)| {
            let t = det4(&jordan_product(&aug[p], &aug[q])) - dets[p] * dets[q] * dets[r] * dets[r];
            t * t
        })
        .sum()
}

pub fn quad_loss(
    head: &CubeHead,
    probes: &[ProbeQuadraticForm; 3],
    latents: &[LatentVector],
    mode: QuadLossMode,
) -> Result<f64> {
    match mode {
        QuadLossMode::Cube => cube_loss_terms(head, latents),
        QuadLossMode::Probe => Ok(probe_loss_terms(probes)),
        QuadLossMode::None => Ok(0.0),
    }
}

pub fn quad_loss_backward(
    head: &CubeHead,
    probes: &[ProbeQuadraticForm; 3],
    latents: &[LatentVector],
    mode: QuadLossMode,
) -> Result<QuadLossGrad> {
    let mut out = QuadLossGrad {
        latents: vec![[0.0; 3]; latents.len()],
        ..Default::default()
    };
    match mode {
        QuadLossMode::None => {}
        QuadLossMode::Cube => {
            if latents.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let scale = 3.0 / latents.len() as f64;
            let mut sum = 0.0;
            for (z, gz) in latents.iter().zip(out.latents.iter_mut()) {
                let g = cube_discriminant_grad(head, z);
                let d = g.value;
                let r = d - d * d * d * d;
                sum += r * r;
                let dl_dd = scale * 2.0 * r * (1.0 - 4.0 * d * d * d);
                for k in 0..3 {
                    gz[k] = dl_dd * g.latent[k];
                }
                for e in 0..8 {
                    out.head.bias[e] += dl_dd * g.head.bias[e];
                    for k in 0..3 {
                        out.head.weight[e][k] += dl_dd * g.head.weight[e][k];
                    }
                }
            }
            out.loss = scale * sum;
        }
        QuadLossMode::Probe => {
            let aug = probes.map(|p| p.augmented());
            let dets = aug.map(|m| det4(&m));
            let cofs = aug.map(|m| cofactor4(&m));
            let mut grads = [[[0.0; 4]; 4]; 3];
            for &(p, q, r) in &PROBE_PAIRS {
                let j = jordan_product(&aug[p], &aug[q]);
                let t = det4(&j) - dets[p] * dets[q] * dets[r] * dets[r];
                out.loss += t * t;
                let dt = 2.0 * t;
                let gj = cofactor4(&j);
                // ∂det(½(PQ + QP))/∂P = ½(G Qᵀ + Qᵀ G) with G the cofactor of the product.
                let through_product = |other: &Mat4| {
                    let mut m = [[0.0; 4]; 4];
                    for a in 0..4 {
                        for b in 0..4 {
                            let mut s = 0.0;
                            for k in 0..4 {
                                s += gj[a][k] * other[b][k] + other[k][a] * gj[k][b];
                            }
                            m[a][b] = 0.5 * s;
                        }
                    }
                    m
                };
                let gp = through_product(&aug[q]);
                let gq = through_product(&aug[p]);
                let wp = dets[q] * dets[r] * dets[r];
                let wq = dets[p] * dets[r] * dets[r];
                let wr = 2.0 * dets[p] * dets[q] * dets[r];
                for a in 0..4 {
                    for b in 0..4 {
                        grads[p][a][b] += dt * (gp[a][b] - wp * cofs[p][a][b]);
                        grads[q][a][b] += dt * (gq[a][b] - wq * cofs[q][a][b]);
                        grads[r][a][b] -= dt * wr * cofs[r][a][b];
                    }
                }
            }
            out.probes = grads.map(|g| ProbeGrad::from_augmented(&g));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube_algebra::{slice_forms, Cube};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_head(rng: &mut ChaCha8Rng, scale: f64) -> CubeHead {
        let mut h = CubeHead::default();
        for e in 0..8 {
            h.bias[e] = rng.gen_range(-scale..scale);
            for k in 0..3 {
                h.weight[e][k] = rng.gen_range(-scale..scale);
            }
        }
        h
    }

    fn random_probe(rng: &mut ChaCha8Rng) -> ProbeQuadraticForm {
        let mut p = ProbeQuadraticForm::default();
        for i in 0..3 {
            for j in 0..3 {
                p.a[i][j] = rng.gen_range(-1.0..1.0);
            }
            p.b[i] = rng.gen_range(-1.0..1.0);
        }
        p.c = rng.gen_range(-1.0..1.0);
        p.symmetrize();
        p
    }

    fn latent(rng: &mut ChaCha8Rng) -> LatentVector {
        LatentVector([0, 1, 2].map(|_| rng.gen_range(-1.0..1.0)))
    }

    /// Leibniz formula over all 24 permutations.
    fn det4_leibniz(m: &Mat4) -> f64 {
        let mut total = 0.0;
        let mut perm = [0usize, 1, 2, 3];
        fn permutations(k: usize, perm: &mut [usize; 4], out: &mut Vec<[usize; 4]>) {
            if k == 4 {
                out.push(*perm);
                return;
            }
            for i in k..4 {
                perm.swap(k, i);
                permutations(k + 1, perm, out);
                perm.swap(k, i);
            }
        }
        let mut all = Vec::new();
        permutations(0, &mut perm, &mut all);
        for p in all {
            let mut inversions = 0;
            for i in 0..4 {
                for j in (i + 1)..4 {
                    if p[i] > p[j] {
                        inversions += 1;
                    }
                }
            }
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * (0..4).map(|i| m[i][p[i]]).product::<f64>();
        }
        total
    }

    #[test]
    fn zero_head_has_zero_discriminant() {
        let head = CubeHead::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(cube_discriminant(&head, &latent(&mut rng)), 0.0);
        }
    }

    #[test]
    fn bias_only_head_matches_exact_cube() {
        let entries = [1i64, 0, 0, 1, 0, 1, 1, 0];
        let exact = slice_forms(&Cube::new(entries))[0].discriminant();
        let head = CubeHead {
            weight: [[0.0; 3]; 8],
            bias: entries.map(|e| e as f64),
        };
        let d = cube_discriminant(&head, &LatentVector([0.3, -2.0, 7.0]));
        assert_eq!(d, exact as f64);
        assert_eq!(d, 4.0);
    }

    #[test]
    fn real_slice_discriminants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let head = random_head(&mut rng, 2.0);
            let [d1, d2, d3] = cube_slice_discriminants(&head, &latent(&mut rng));
            let scale = d1.abs().max(1e-300);
            assert!((d1 - d2).abs() / scale < 1e-9 || (d1 - d2).abs() < 1e-12);
            assert!((d1 - d3).abs() / scale < 1e-9 || (d1 - d3).abs() < 1e-12);
        }
    }

    #[test]
    fn real_slice_forms_match_integer_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let entries: [i64; 8] = [0; 8].map(|_| rng.gen_range(-9..=9));
            let exact = slice_forms(&Cube::new(entries));
            let real = slice_forms_real(&entries.map(|e| e as f64));
            for (x, r) in exact.iter().zip(real) {
                assert_eq!([x.a as f64, x.b as f64, x.c as f64], r);
            }
        }
    }

    #[test]
    fn probe_eval_examples() {
        let z = LatentVector([1.0, 2.0, 3.0]);
        let constant = ProbeQuadraticForm {
            a: [[0.0; 3]; 3],
            b: [0.0; 3],
            c: 5.0,
        };
        assert_eq!(probe_eval(&constant, &z), 5.0);
        let sum_sq = ProbeQuadraticForm {
            c: 0.0,
            ..Default::default()
        };
        assert_eq!(probe_eval(&sum_sq, &z), 14.0);
    }

    #[test]
    fn probe_eval_matches_homogenized_form() {
        // [z; 1]ᵀ Ã [z; 1] is an independent route to the same value.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = random_probe(&mut rng);
            let z = latent(&mut rng);
            let m = p.augmented();
            let h = [z.0[0], z.0[1], z.0[2], 1.0];
            let mut via_aug = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    via_aug += h[i] * m[i][j] * h[j];
                }
            }
            assert!((probe_eval(&p, &z) - via_aug).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_discriminant_examples() {
        let unit = ProbeQuadraticForm::default();
        assert_eq!(probe_discriminant(&unit), 1.0);
        let singular = ProbeQuadraticForm {
            c: 0.0,
            ..Default::default()
        };
        assert_eq!(probe_discriminant(&singular), 0.0);
    }

    #[test]
    fn det4_matches_leibniz() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_probe(&mut rng);
            let m = p.augmented();
            assert!((probe_discriminant(&p) - det4_leibniz(&m)).abs() < 1e-10);
            let general: Mat4 = [[0.0; 4]; 4].map(|r| r.map(|_: f64| rng.gen_range(-2.0..2.0)));
            assert!((det4(&general) - det4_leibniz(&general)).abs() < 1e-10);
        }
    }

    #[test]
    fn cofactor_is_determinant_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Mat4 = [[0.0; 4]; 4].map(|r| r.map(|_: f64| rng.gen_range(-2.0..2.0)));
        let cof = cofactor4(&m);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut plus = m;
                let mut minus = m;
                plus[i][j] += h;
                minus[i][j] -= h;
                let fd = (det4_leibniz(&plus) - det4_leibniz(&minus)) / (2.0 * h);
                assert!((fd - cof[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn jordan_identity_and_commuting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_probe(&mut rng);
        let mut identity = ProbeQuadraticForm::default();
        identity.c = 1.0;
        assert_eq!(jordan_compose(&p, &identity), p.augmented());

        // Diagonal augmented matrices commute.
        let diag = |v: [f64; 4]| ProbeQuadraticForm {
            a: [[v[0], 0.0, 0.0], [0.0, v[1], 0.0], [0.0, 0.0, v[2]]],
            b: [0.0; 3],
            c: v[3],
        };
        let x = diag([2.0, -1.5, 0.5, 3.0]);
        let y = diag([0.25, 4.0, -2.0, 1.5]);
        let lhs = det4(&jordan_compose(&x, &y));
        let rhs = probe_discriminant(&x) * probe_discriminant(&y);
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn jordan_symmetric_and_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p1 = random_probe(&mut rng);
        let p2 = random_probe(&mut rng);
        let q = random_probe(&mut rng);
        let j = jordan_compose(&p1, &q);
        for a in 0..4 {
            for b in 0..4 {
                assert!((j[a][b] - j[b][a]).abs() < 1e-12);
            }
        }
        for _ in 0..3 {
            let (s, t) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mix = |x: &Mat4, y: &Mat4| {
                let mut m = [[0.0; 4]; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        m[a][b] = s * x[a][b] + t * y[a][b];
                    }
                }
                m
            };
            let combined = jordan_product(&mix(&p1.augmented(), &p2.augmented()), &q.augmented());
            let separate = mix(&jordan_compose(&p1, &q), &jordan_compose(&p2, &q));
            for a in 0..4 {
                for b in 0..4 {
                    assert!((combined[a][b] - separate[a][b]).abs() < 1e-12);
                }
            }
        }
    }

    fn uniform_d_head(d: f64) -> CubeHead {
        // Entries (1, 0, 0, 1, 0, s, s, 0) give a = -1, b = 0, c = s², so D = 4 s².
        let s = (d / 4.0).sqrt();
        CubeHead {
            weight: [[0.0; 3]; 8],
            bias: [1.0, 0.0, 0.0, 1.0, 0.0, s, s, 0.0],
        }
    }

    #[test]
    fn cube_loss_examples() {
        let probes = [ProbeQuadraticForm::default(); 3];
        let zs = vec![LatentVector([0.1, 0.2, 0.3]), LatentVector([-1.0, 0.0, 2.0])];
        for (d, expected) in [(1.0, 0.0), (0.0, 0.0), (2.0, 588.0)] {
            let head = uniform_d_head(d);
            assert!((cube_discriminant(&head, &zs[0]) - d).abs() < 1e-12);
            let loss = quad_loss(&head, &probes, &zs, QuadLossMode::Cube).unwrap();
            assert!((loss - expected).abs() < 1e-9, "D = {d}: {loss}");
        }
        assert!(matches!(
            quad_loss(&uniform_d_head(1.0), &probes, &[], QuadLossMode::Cube),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn probe_and_none_modes() {
        let probes = [ProbeQuadraticForm::default(); 3];
        let head = CubeHead::default();
        assert_eq!(quad_loss(&head, &probes, &[], QuadLossMode::Probe).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let zs: Vec<_> = (0..4).map(|_| latent(&mut rng)).collect();
        assert_eq!(quad_loss(&random_head(&mut rng, 1.0), &probes, &zs, QuadLossMode::None).unwrap(), 0.0);

        let probes = [0, 1, 2].map(|_| random_probe(&mut rng));
        let a = quad_loss(&head, &probes, &zs, QuadLossMode::Probe).unwrap();
        let b = quad_loss(&head, &probes, &zs[..1], QuadLossMode::Probe).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(2.3, 10.0, 0.0).unwrap(), 2.3);
        assert!((total_loss(2.3, 10.0, 0.1).unwrap() - 3.3).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(total_loss(1.0, 1.0, -0.1), Err(Error::NegativeLambda(_))));
    }

    #[test]
    fn stationary_configurations_have_zero_gradient() {
        let probes = [ProbeQuadraticForm::default(); 3];
        let zs = vec![LatentVector([0.5, -0.5, 1.0]); 3];
        let g = quad_loss_backward(&CubeHead::default(), &probes, &zs, QuadLossMode::Cube).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.head.bias.iter().all(|v| *v == 0.0));

        let g = quad_loss_backward(&uniform_d_head(1.0), &probes, &zs, QuadLossMode::Cube).unwrap();
        assert!(g.loss.abs() < 1e-20);
        assert!(g.head.bias.iter().all(|v| v.abs() < 1e-12));
        assert!(g.latents.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetrize_is_exact() {
        let mut p = ProbeQuadraticForm::default();
        p.a[0][1] = 0.3;
        p.a[1][0] = 0.1;
        p.symmetrize();
        assert_eq!(p.a[0][1], p.a[1][0]);
        assert!((p.a[0][1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("cube".parse::<QuadLossMode>().unwrap(), QuadLossMode::Cube);
        assert_eq!("probe".parse::<QuadLossMode>().unwrap(), QuadLossMode::Probe);
        assert_eq!("none".parse::<QuadLossMode>().unwrap(), QuadLossMode::None);
        assert!("gauss".parse::<QuadLossMode>().is_err());
    }
}
