//! Property tests for the spec-level invariants that hold over whole input
//! families rather than single examples.

use proptest::prelude::*;

use rja_core::codec;
use rja_core::image::{normalize, resize_bilinear, NormalizationSpec, RawImage};
use rja_core::jpegsim::soft_round;
use rja_core::transform::{
    apply_lut, invert_lut, AdapterParams, ChannelLut, GammaGrid, LUT_SIZE,
};

fn arb_image(max_side: usize) -> impl Strategy<Value = RawImage<f64>> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h * 3)
                .prop_map(move |data| RawImage::new(w, h, data))
        })
}

/// Strictly increasing LUT with pinned endpoints built from positive
/// increments (the same construction the fitter's constraint uses).
fn arb_lut() -> impl Strategy<Value = ChannelLut<f64>> {
    proptest::collection::vec(1e-9f64..1.0, LUT_SIZE * 3).prop_map(|inc| {
        let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for c in 0..3 {
            let mut cum = 0.0;
            let cums: Vec<f64> = inc[c * LUT_SIZE..(c + 1) * LUT_SIZE]
                .iter()
                .map(|v| {
                    cum += v;
                    cum
                })
                .collect();
            let (lo, hi) = (cums[0], cums[LUT_SIZE - 1]);
            let mut e: Vec<f64> = cums.iter().map(|v| (v - lo) / (hi - lo)).collect();
            e[0] = 0.0;
            e[LUT_SIZE - 1] = 1.0;
            channels[c] = e;
        }
        ChannelLut::new(channels).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resize_preserves_value_range(img in arb_image(12), ow in 1usize..24, oh in 1usize..24) {
        let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = resize_bilinear(&img, ow, oh);
        // Convex weights can never overshoot the source range.
        for &v in out.data() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn normalize_monotone_and_exact_at_endpoints(
        black in 0.0f64..1000.0,
        span in 1.0f64..4000.0,
        samples in proptest::collection::vec(-100.0f64..5000.0, 3..60),
    ) {
        let spec = NormalizationSpec::new(black, black + span).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() - sorted.len() % 3;
        let img = RawImage::new(n / 3, 1, sorted[..n].to_vec());
        let out = normalize(&img, spec);
        for w in out.data().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        let ends = RawImage::new(1, 1, vec![black, black + span, black + span / 2.0]);
        let out = normalize(&ends, spec);
        prop_assert_eq!(out.data()[0], 0.0);
        prop_assert_eq!(out.data()[1], 1.0);
    }

    #[test]
    fn lut_roundtrip_and_monotonicity(lut in arb_lut(), img in arb_image(8)) {
        let mapped = apply_lut(&img, &lut);
        let back = invert_lut(&mapped, &lut);
        prop_assert!(img.max_abs_diff(&back) <= 1e-10);
        // Strict monotonicity per channel on a sorted ramp.
        let ramp: Vec<f64> = (0..40).flat_map(|i| {
            let v = i as f64 / 39.0;
            [v, v, v]
        }).collect();
        let out = apply_lut(&RawImage::new(40, 1, ramp), &lut);
        for c in 0..3 {
            let plane = out.channel_plane(c);
            for w in plane.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn quantized_luts_stay_strictly_increasing(lut in arb_lut()) {
        // The u16 lattice repair must keep strict monotonicity for any valid
        // input, including near-flat runs; deserialize re-validates it.
        let params = AdapterParams {
            luts: lut,
            gamma: GammaGrid::constant(1.0).unwrap(),
            dct: None,
            color: None,
        };
        let q = codec::quantize(&params).unwrap();
        for c in 0..3 {
            let e = q.luts.channel(c);
            prop_assert_eq!(e[0], 0.0);
            prop_assert_eq!(e[LUT_SIZE - 1], 1.0);
            for i in 1..LUT_SIZE {
                prop_assert!(e[i] > e[i - 1]);
            }
        }
        let payload = codec::serialize(&params).unwrap();
        let (back, _) = codec::deserialize(&payload).unwrap();
        prop_assert_eq!(back, q);
    }

    #[test]
    fn soft_round_exact_at_integers(z in -50i64..50, n in 1usize..32) {
        prop_assert_eq!(soft_round(z as f64, n), z as f64);
    }

    #[test]
    fn gamma_stays_in_unit_range(img in arb_image(8), g in 0.14f64..7.38) {
        let grid = GammaGrid::constant(g).unwrap();
        let out = rja_core::apply_gamma(&img, &grid);
        for &v in out.data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // 0 and 1 are preserved exactly.
        let ends = RawImage::new(1, 1, vec![0.0, 1.0, 0.5]);
        let out = rja_core::apply_gamma(&ends, &grid);
        prop_assert_eq!(out.data()[0], 0.0);
        prop_assert_eq!(out.data()[1], 1.0);
    }
}

#[test]
fn load_save_identity_for_100_random_images() {
    use rand::prelude::*;
    use rja_core::image::{load_raw, save_raw, ImageFormat};
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(1234);
    for i in 0..100 {
        let (w, h) = (1 + rng.gen_range(0..9), 1 + rng.gen_range(0..9));
        let img = RawImage::new(w, h, (0..w * h * 3).map(|_| rng.gen::<f64>()).collect());

        let png = dir.path().join(format!("{i}.png"));
        save_raw(&img, &png, ImageFormat::Png16).unwrap();
        let back: RawImage<f64> = load_raw(&png, ImageFormat::Png16).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.0 / 65535.0, "png16 image {i}");

        let pfm = dir.path().join(format!("{i}.pfm"));
        save_raw(&img, &pfm, ImageFormat::Pfm).unwrap();
        let back: RawImage<f64> = load_raw(&pfm, ImageFormat::Pfm).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32, "pfm image {i}");
        }
    }
}
