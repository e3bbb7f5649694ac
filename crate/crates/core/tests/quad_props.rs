use bcmem::quad_reg::{
    cube_discriminant, cube_slice_discriminants, jordan_compose, quad_loss, CubeHead,
    LatentVector, ProbeQuadraticForm, QuadLossMode,
};
use proptest::prelude::*;

fn coeff() -> impl Strategy<Value = f64> {
    -2.0f64..2.0
}

fn head() -> impl Strategy<Value = CubeHead> {
    (
        prop::array::uniform8(prop::array::uniform3(coeff())),
        prop::array::uniform8(coeff()),
    )
        .prop_map(|(weight, bias)| CubeHead { weight, bias })
}

fn latents() -> impl Strategy<Value = Vec<LatentVector>> {
    prop::collection::vec(prop::array::uniform3(coeff()).prop_map(LatentVector), 1..24)
}

fn probe() -> impl Strategy<Value = ProbeQuadraticForm> {
    (
        prop::array::uniform3(prop::array::uniform3(coeff())),
        prop::array::uniform3(coeff()),
        coeff(),
    )
        .prop_map(|(a, b, c)| {
            let mut p = ProbeQuadraticForm { a, b, c };
            p.symmetrize();
            p
        })
}

fn probes() -> impl Strategy<Value = [ProbeQuadraticForm; 3]> {
    (probe(), probe(), probe()).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn real_slices_share_discriminant(h in head(), zs in latents()) {
        for z in &zs {
            let [d1, d2, d3] = cube_slice_discriminants(&h, z);
            let scale = d1.abs().max(d2.abs()).max(d3.abs()).max(1.0);
            prop_assert!((d1 - d2).abs() <= 1e-9 * scale);
            prop_assert!((d1 - d3).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn losses_are_non_negative(h in head(), p in probes(), zs in latents()) {
        for mode in [QuadLossMode::Cube, QuadLossMode::Probe, QuadLossMode::None] {
            prop_assert!(quad_loss(&h, &p, &zs, mode).unwrap() >= 0.0);
        }
    }

    #[test]
    fn cube_loss_ignores_sample_order(h in head(), p in probes(), zs in latents(), seed in any::<u64>()) {
        let mut shuffled = zs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = quad_loss(&h, &p, &zs, QuadLossMode::Cube).unwrap();
        let b = quad_loss(&h, &p, &shuffled, QuadLossMode::Cube).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn cube_loss_is_the_mean_of_sample_losses(h in head(), p in probes(), zs in latents()) {
        let batch = quad_loss(&h, &p, &zs, QuadLossMode::Cube).unwrap();
        let mean = zs
            .iter()
            .map(|z| quad_loss(&h, &p, std::slice::from_ref(z), QuadLossMode::Cube).unwrap())
            .sum::<f64>()
            / zs.len() as f64;
        prop_assert!((batch - mean).abs() <= 1e-12 * batch.abs().max(1.0));
    }

    #[test]
    fn probe_loss_ignores_batch(h in head(), p in probes(), zs in latents(), other in latents()) {
        let a = quad_loss(&h, &p, &zs, QuadLossMode::Probe).unwrap();
        let b = quad_loss(&h, &p, &other, QuadLossMode::Probe).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cube_loss_vanishes_exactly_on_roots(zs in latents(), root in prop::bool::ANY) {
        // bias-only cube (1,0,0,1,0,s,s,0) has D = 4s²; D ∈ {0, 1} at s = 0, 1/2
        let s = if root { 0.5 } else { 0.0 };
        let h = CubeHead { weight: [[0.0; 3]; 8], bias: [1.0, 0.0, 0.0, 1.0, 0.0, s, s, 0.0] };
        for z in &zs {
            let d = cube_discriminant(&h, z);
            prop_assert!(d == 0.0 || d == 1.0);
        }
        prop_assert_eq!(quad_loss(&h, &[ProbeQuadraticForm::default(); 3], &zs, QuadLossMode::Cube).unwrap(), 0.0);
    }

    #[test]
    fn jordan_compose_is_symmetric_and_bilinear(p in probe(), q in probe(), r in probe(), t in coeff()) {
        let pq = jordan_compose(&p, &q);
        let qp = jordan_compose(&q, &p);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((pq[i][j] - qp[i][j]).abs() < 1e-12);
                prop_assert!((pq[i][j] - pq[j][i]).abs() < 1e-12);
            }
        }
        // linear in the first argument: (p + t r) ∘ q = p∘q + t (r∘q)
        let mut sum = p;
        for i in 0..3 {
            for j in 0..3 {
                sum.a[i][j] += t * r.a[i][j];
            }
            sum.b[i] += t * r.b[i];
        }
        sum.c += t * r.c;
        let lhs = jordan_compose(&sum, &q);
        let rq = jordan_compose(&r, &q);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((lhs[i][j] - (pq[i][j] + t * rq[i][j])).abs() < 1e-10);
            }
        }
    }
}
