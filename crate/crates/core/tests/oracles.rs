//! Kernels against straightforward reference loops.

mod common;

use leafnet::tensor::{kernels, Rng, Tensor};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_seven_loops(
        n in 1usize..3, c in 1usize..5, h in 3usize..10, w in 3usize..10,
        o in 1usize..5, stride in 1usize..3, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Tensor::<f32>::randn(&[n, c, h, w], 0.0, 1.0, &mut rng).unwrap();
        let wt = Tensor::<f32>::randn(&[o, c, 3, 3], 0.0, 1.0, &mut rng).unwrap();
        let got = kernels::conv2d(&x, &wt, stride).unwrap();
        let (want, oh, ow) = common::naive_conv2d(x.data(), wt.data(), n, c, h, w, o, stride);
        prop_assert_eq!(got.shape(), &[n, o, oh, ow][..]);
        prop_assert_eq!(got.data(), &want[..]);
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..12, k in 1usize..30, n in 1usize..600, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = Tensor::<f32>::randn(&[m, k], 0.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f32>::randn(&[k, n], 0.0, 1.0, &mut rng).unwrap();
        let got = kernels::matmul(&a, &b).unwrap();
        prop_assert_eq!(got.data(), &common::naive_matmul(a.data(), b.data(), m, k, n)[..]);
    }

    /// The backward pass is the adjoint of the (linear) forward map:
    /// <conv(x, w), dy> = <x, dx> = <w, dw>.
    #[test]
    fn conv2d_backward_is_adjoint(
        n in 1usize..3, c in 1usize..4, h in 3usize..8, w in 3usize..8,
        o in 1usize..4, stride in 1usize..3, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Tensor::<f64>::randn(&[n, c, h, w], 0.0, 1.0, &mut rng).unwrap();
        let wt = Tensor::<f64>::randn(&[o, c, 3, 3], 0.0, 1.0, &mut rng).unwrap();
        let y = kernels::conv2d(&x, &wt, stride).unwrap();
        let dy = Tensor::<f64>::randn(y.shape(), 0.0, 1.0, &mut rng).unwrap();
        let (dx, dw) = kernels::conv2d_backward(&x, &wt, stride, &dy).unwrap();
        let lhs = dot(y.data(), dy.data());
        prop_assert!((lhs - dot(x.data(), dx.data())).abs() <= 1e-9 * (1.0 + lhs.abs()));
        prop_assert!((lhs - dot(wt.data(), dw.data())).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn global_max_pool_matches_scan(n in 1usize..3, c in 1usize..4, hw in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Tensor::<f32>::randn(&[n, c, hw, 1], 0.0, 1.0, &mut rng).unwrap();
        let (y, _) = kernels::global_max_pool(&x).unwrap();
        for (i, plane) in x.data().chunks(hw).enumerate() {
            let m = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(y.data()[i], m);
        }
    }
}

#[test]
fn batch_norm_matches_two_pass_formula() {
    let mut rng = Rng::new(4);
    let (n, c, h, w) = (3, 4, 5, 2);
    let x = Tensor::<f64>::randn(&[n, c, h, w], 2.0, 3.0, &mut rng).unwrap();
    let gamma = Tensor::<f64>::randn(&[c], 1.0, 0.2, &mut rng).unwrap();
    let beta = Tensor::<f64>::randn(&[c], 0.0, 0.2, &mut rng).unwrap();
    let eps = 1e-5;
    let (y, _) = kernels::batch_norm_train(&x, &gamma, &beta, eps).unwrap();
    let m = (n * h * w) as f64;
    for ch in 0..c {
        let vals: Vec<(usize, f64)> = (0..n)
            .flat_map(|b| (0..h * w).map(move |p| (b * c + ch) * h * w + p))
            .map(|i| (i, x.data()[i]))
            .collect();
        let mean = vals.iter().map(|v| v.1).sum::<f64>() / m;
        let var = vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / m;
        for &(i, v) in &vals {
            let want = gamma.data()[ch] * (v - mean) / (var + eps).sqrt() + beta.data()[ch];
            assert!((y.data()[i] - want).abs() < 1e-12, "channel {ch}");
        }
    }
}

#[test]
fn conv_is_thread_count_invariant() {
    let mut rng = Rng::new(12);
    let x = Tensor::<f32>::randn(&[6, 8, 12, 12], 0.0, 1.0, &mut rng).unwrap();
    let w = Tensor::<f32>::randn(&[16, 8, 3, 3], 0.0, 1.0, &mut rng).unwrap();
    let dy = Tensor::<f32>::randn(&[6, 16, 12, 12], 0.0, 1.0, &mut rng).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let y = kernels::conv2d(&x, &w, 1).unwrap();
                let (dx, dw) = kernels::conv2d_backward(&x, &w, 1, &dy).unwrap();
                (y.into_data(), dx.into_data(), dw.into_data())
            })
    };
    assert_eq!(run(1), run(5));
}
