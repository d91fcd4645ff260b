use i2r_core::io::{decode_tensor, encode_tensor};
use i2r_core::normality::tile_failure_rate;
use i2r_core::rectifier::blend;
use i2r_core::{
    draw_standard_normal, omnibus_test, scan_mask, OperatorFamily, ParametricOperator, Rng, ScanConfig, Tensor3,
};
use proptest::prelude::*;

fn noise(seed: u64, shape: (usize, usize, usize)) -> Tensor3 {
    draw_standard_normal(&mut Rng::new(seed), shape)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_bytes_round_trip(h in 1usize..9, w in 1usize..9, c in 1usize..5, seed: u64) {
        let t = noise(seed, (h, w, c));
        let bytes = encode_tensor(&t).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        // values are stored in single precision; bytes survive exactly
        prop_assert_eq!(back.shape(), t.shape());
        for (a, b) in back.as_slice().iter().zip(t.as_slice()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
        prop_assert_eq!(encode_tensor(&back).unwrap(), bytes);
    }

    #[test]
    fn omnibus_ignores_order_and_affine_maps(
        seed: u64,
        n in 20usize..120,
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let v = noise(seed, (n, 1, 1)).into_vec();
        let base = omnibus_test(&v).unwrap();
        let mut moved: Vec<f64> = v.iter().rev().map(|x| scale * x + shift).collect();
        moved.rotate_left(n / 3);
        let other = omnibus_test(&moved).unwrap();
        prop_assert!(rel_close(base.k2, other.k2, 1e-7), "{} vs {}", base.k2, other.k2);
        prop_assert!((base.p - other.p).abs() < 1e-9);
        // a reflection flips skewness and leaves kurtosis alone
        let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
        let f = omnibus_test(&flipped).unwrap();
        prop_assert!(rel_close(f.z1, -base.z1, 1e-9));
        prop_assert!(rel_close(f.z2, base.z2, 1e-9));
    }

    #[test]
    fn larger_alpha_masks_more(seed: u64, a in 0.001f64..0.2, extra in 0.0f64..0.3, stride in 1usize..5) {
        let mut z = noise(seed, (12, 12, 3));
        // plant a defect so the mask is not trivially empty
        for v in 0..3 {
            z.set_tile(4, 4, v, 4, &[2.5; 16]);
        }
        let small = scan_mask(&z, &ScanConfig::new(4, stride, a, 3).unwrap()).unwrap();
        let large = scan_mask(&z, &ScanConfig::new(4, stride, (a + extra).min(0.99), 3).unwrap()).unwrap();
        for (s, l) in small.mask.as_slice().iter().zip(large.mask.as_slice()) {
            prop_assert!(s <= l);
        }
        prop_assert!(small.windows_failed <= large.windows_failed);
        prop_assert!(small.masked_count() >= 48);
    }

    #[test]
    fn blend_keeps_unmasked_entries(seed: u64, density in 0.0f64..1.0) {
        let shape = (8, 8, 2);
        let z = noise(seed, shape);
        let s = noise(seed.wrapping_add(1), shape);
        let mut pick = Rng::new(seed.wrapping_add(2));
        let m = Tensor3::from_fn(shape, |_, _, _| f64::from(pick.uniform() < density));
        let out = blend(&z, &m, &s).unwrap();
        for i in 0..out.len() {
            let want = if m.as_slice()[i] == 0.0 { z.as_slice()[i] } else { s.as_slice()[i] };
            prop_assert_eq!(out.as_slice()[i].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn parametric_operator_transposes(
        seed: u64,
        size in prop::sample::select(vec![1usize, 3, 5]),
        factor in 1usize..4,
        h in 5usize..11,
        w in 5usize..11,
    ) {
        let families = [
            OperatorFamily::GaussianBlur,
            OperatorFamily::MotionBlur,
            OperatorFamily::Downsample { factor },
        ];
        for family in families {
            let op = ParametricOperator::new(family, size).unwrap();
            let theta = noise(seed, (1, op.theta_len(), 1)).into_vec();
            let x = noise(seed ^ 1, (h, w, 2));
            let v = noise(seed ^ 2, op.output_shape(x.shape()));
            let lhs = op.apply(&x, &theta).unwrap().dot(&v);
            let rhs = x.dot(&op.adjoint_input(&theta, &v, x.shape()).unwrap());
            prop_assert!(rel_close(lhs, rhs, 1e-10), "{family}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn theta_gradient_matches_differences() {
    for family in [OperatorFamily::GaussianBlur, OperatorFamily::Downsample { factor: 2 }] {
        let op = ParametricOperator::new(family, 3).unwrap();
        let x = noise(1, (8, 8, 1));
        let v = noise(2, op.output_shape(x.shape()));
        let theta = noise(3, (1, 9, 1)).into_vec();
        let grad = op.adjoint_theta(&theta, &x, &v).unwrap();
        let f = |t: &[f64]| op.apply(&x, t).unwrap().dot(&v);
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut p = theta.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let fd = (up - f(&p)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{family} theta[{i}]: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn genuine_noise_rejection_rate_is_near_alpha() {
    let rates: Vec<f64> = (0..20)
        .map(|s| tile_failure_rate(&noise(900 + s, (32, 32, 3)), 4, 0.1).unwrap())
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((0.07..0.13).contains(&mean), "{mean}");
}
