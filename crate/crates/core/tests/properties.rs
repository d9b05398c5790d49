use dced_core::image::{Mask, RawImage};
use dced_core::net::{gate_decision, GateDecision};
use dced_core::preprocess::{contrast_normalize, gray_to_tensor, resize_plane, unity_mask};
use dced_core::train::{kfold_split, mse, AdamState};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn adam_descends_a_quadratic(
        start in prop::collection::vec(-5.0f32..5.0, 1..8),
        centre in -2.0f32..2.0,
    ) {
        let mut x = start.clone();
        let mut adam = AdamState::new([x.len()]);
        let dist = |x: &[f32]| x.iter().map(|&v| ((v - centre) as f64).powi(2)).sum::<f64>();
        let before = dist(&x);
        for _ in 0..300 {
            let grad: Vec<f32> = x.iter().map(|&v| 2.0 * (v - centre)).collect();
            adam.apply(vec![&mut x[..]], &[grad], 0.05).unwrap();
        }
        prop_assert!(dist(&x) <= before.max(1e-6) * 0.05 + 1e-3, "{} -> {}", before, dist(&x));
    }

    #[test]
    fn mse_gradient_matches_differences(
        pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..40),
    ) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let g: Vec<f64> = pairs.iter().map(|x| x.1 as f64).collect();
        let (loss, grad) = mse(&p, &g).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(mse(&g, &p).unwrap().0, loss);
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (mse(&up, &g).unwrap().0 - mse(&down, &g).unwrap().0) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-8, "entry {}: {} vs {}", i, fd, grad[i]);
        }
    }

    #[test]
    fn kfold_partitions_the_rest(
        n in 2usize..60,
        k in 2usize..8,
        frac in 0.3f64..=1.0,
        seed in any::<u64>(),
    ) {
        let Ok(folds) = kfold_split(n, k, frac, seed) else {
            // only too few items for k folds is an error
            let keep = (n as f64 * frac).round() as usize;
            prop_assert!(keep < k);
            return Ok(());
        };
        prop_assert_eq!(folds.len(), k);
        let mut validation: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        validation.extend(&folds[0].test);
        validation.sort_unstable();
        prop_assert_eq!(validation, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.validation.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            prop_assert_eq!(&f.test, &folds[0].test);
            prop_assert_eq!(f.train.len() + f.validation.len() + f.test.len(), n);
            prop_assert!(f.train.iter().all(|i| !f.validation.contains(i) && !f.test.contains(i)));
        }
        prop_assert_eq!(kfold_split(n, k, frac, seed).unwrap(), folds);
    }

    #[test]
    fn contrast_stretch_is_monotone(data in prop::collection::vec(any::<u8>(), 64)) {
        let img = RawImage::gray(8, 8, data.clone()).unwrap();
        let out = contrast_normalize(&img, 1.0, 99.0).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                if data[i] < data[j] {
                    prop_assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }

    #[test]
    fn plane_resize_stays_in_hull(
        src in prop::collection::vec(0.0f32..1.0, 16),
        w in 1usize..20,
        h in 1usize..20,
    ) {
        let out = resize_plane(&src, 4, 4, w, h).unwrap();
        let (lo, hi) = src.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert_eq!(out.len(), w * h);
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        prop_assert_eq!(out[0], src[0]);
    }

    #[test]
    fn masks_are_binary(data in prop::collection::vec(any::<u8>(), 36), threshold in any::<u8>()) {
        let m = unity_mask(&RawImage::gray(6, 6, data.clone()).unwrap(), threshold).unwrap();
        for (v, &raw) in m.data().iter().zip(&data) {
            prop_assert_eq!(*v, u8::from(raw >= threshold));
        }
        let back = unity_mask(&m.render(), 128).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn probability_threshold(probs in prop::collection::vec(0.0f32..=1.0, 25)) {
        let m = Mask::from_probabilities(5, 5, &probs).unwrap();
        for (v, p) in m.data().iter().zip(&probs) {
            prop_assert_eq!(*v, u8::from(*p >= 0.5));
        }
    }

    #[test]
    fn gate_is_a_threshold(c in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let d = gate_decision(c, t);
        prop_assert_eq!(d == GateDecision::Advance, c >= t);
        prop_assert_eq!(gate_decision(t, t), GateDecision::Advance);
    }

    #[test]
    fn tensor_input_in_unit_range(data in prop::collection::vec(any::<u8>(), 16)) {
        let t = gray_to_tensor(&RawImage::gray(4, 4, data.clone()).unwrap()).unwrap();
        prop_assert_eq!(t.len(), 48);
        for c in 0..3 {
            for (v, &raw) in t.plane(0, c).iter().zip(&data) {
                prop_assert_eq!(*v, raw as f32 / 255.0);
            }
        }
    }
}
