use apnet_core::ops::{
    avg_pool_clipped, bilinear_resize, concat_channels, conv2d, conv2d_output_dims, softmax_cross_entropy,
    split_channels, ConvGeom, ConvParams,
};
use apnet_core::{Dims, LabelMap, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, dims: Dims) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0))
}

#[test]
fn dilated_output_size_by_hand() {
    // floor((8 + 2*2 - 2*(3-1) - 1) / 1) + 1 = 8
    let d = conv2d_output_dims(Dims::new(1, 1, 8, 8), Dims::new(1, 1, 3, 3), 1, ConvGeom::new(1, 2, 2)).unwrap();
    assert_eq!((d.h, d.w), (8, 8));
    // floor((9 + 2 - 2 - 1) / 2) + 1 = 5
    let d = conv2d_output_dims(Dims::new(1, 1, 9, 9), Dims::new(1, 1, 3, 3), 1, ConvGeom::new(2, 1, 1)).unwrap();
    assert_eq!((d.h, d.w), (5, 5));
}

#[test]
fn pooling_preserves_constants_exhaustively() {
    for h in 1..=16 {
        for w in 1..=16 {
            // a dyadic constant sums and divides exactly
            let exact = Tensor4::filled(Dims::new(1, 1, h, w), 0.375f64);
            let rounded = Tensor4::filled(Dims::new(1, 1, h, w), 0.3f64);
            for k in 1..=h.max(w) {
                for s in 1..=k {
                    let y = avg_pool_clipped(&exact, k, s).unwrap();
                    assert_eq!((y.dims().h, y.dims().w), (h.div_ceil(s), w.div_ceil(s)));
                    assert!(y.data().iter().all(|&v| v == 0.375), "{h}x{w} k={k} s={s}");
                    let y = avg_pool_clipped(&rounded, k, s).unwrap();
                    assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12), "{h}x{w} k={k} s={s}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_without_bias(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, stride in 1usize..3, dilation in 1usize..3) {
        let dims = Dims::new(1, 2, 7, 6);
        let (x, y) = (random(seed, dims), random(seed ^ 0xff, dims));
        let params = ConvParams::new(random(seed ^ 7, Dims::new(3, 2, 3, 3)), vec![0.0; 3], ConvGeom::new(stride, dilation, dilation)).unwrap();
        let mix = Tensor4::from_fn(dims, |n, c, h, w| a * x.at(n, c, h, w) + b * y.at(n, c, h, w));
        let lhs = conv2d(&mix, &params).unwrap();
        let (cx, cy) = (conv2d(&x, &params).unwrap(), conv2d(&y, &params).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_then_split_round_trips(seed in any::<u64>(), n in 1usize..3, chans in proptest::collection::vec(1usize..4, 1..5), h in 1usize..5, w in 1usize..5) {
        let parts: Vec<Tensor4<f64>> = chans.iter().enumerate().map(|(i, &c)| random(seed + i as u64, Dims::new(n, c, h, w))).collect();
        let refs: Vec<&Tensor4<f64>> = parts.iter().collect();
        let joined = concat_channels(&refs).unwrap();
        prop_assert_eq!(joined.dims().c, chans.iter().sum::<usize>());
        let back = split_channels(joined.data(), joined.dims(), &chans);
        for (p, b) in parts.iter().zip(&back) {
            prop_assert_eq!(p.data(), &b[..]);
        }
    }

    #[test]
    fn resize_to_same_size_is_identity(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let x = random(seed, Dims::new(2, 3, h, w));
        let y = bilinear_resize(&x, h, w).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn resize_stays_within_input_range(seed in any::<u64>(), oh in 1usize..20, ow in 1usize..20) {
        let x = random(seed, Dims::new(1, 1, 5, 7));
        let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn cross_entropy_is_non_negative(seed in any::<u64>(), c in 2usize..6) {
        let logits = random(seed, Dims::new(2, c, 3, 4)).map(|v| 10.0 * v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<LabelMap> = (0..2).map(|_| LabelMap::from_fn(3, 4, |_, _| rng.random_range(0..c as u8))).collect();
        prop_assert!(softmax_cross_entropy(&logits, &targets, None).unwrap() >= 0.0);
        let uniform = Tensor4::filled(Dims::new(2, c, 3, 4), 0.7);
        let l = softmax_cross_entropy(&uniform, &targets, None).unwrap();
        prop_assert!((l - (c as f64).ln()).abs() < 1e-12);
    }
}
