//! Invariants checked over generated inputs.

use leafnet::checkpoint;
use leafnet::data::{holdout_count, resize_bilinear, stratified_split, DatasetManifest, Sample, SplitSpec};
use leafnet::metrics::{f1_score, format_fixed4, Aggregation, ConfusionMatrix};
use leafnet::nn::{LayerSpec, ModelSpec, ResNet9};
use leafnet::optim::CosineSchedule;
use leafnet::tensor::{kernels, Rng, Tensor};
use proptest::prelude::*;

fn confusion(k: usize, pairs: &[(usize, usize)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(k);
    for &(t, p) in pairs {
        cm.update(t % k, p % k).unwrap();
    }
    cm
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, k in 2usize..60, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = Rng::new(seed);
        let logits = Tensor::<f64>::randn(&[rows, k], 0.0, scale, &mut rng).unwrap();
        let p = kernels::softmax(&logits).unwrap();
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let shifted = logits.map(|v| v + 1234.5);
        let a = kernels::log_softmax(&logits).unwrap();
        let b = kernels::log_softmax(&shifted).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    }

    #[test]
    fn micro_and_weighted_identities(k in 2usize..20, pairs in prop::collection::vec((0usize..20, 0usize..20), 1..400)) {
        let cm = confusion(k, &pairs);
        let acc = cm.accuracy().unwrap();
        let micro = cm.overall(Aggregation::Micro).unwrap();
        prop_assert_eq!(micro.precision, acc);
        prop_assert_eq!(micro.recall, acc);
        // support-weighted recall telescopes to trace / total
        let weighted = cm.overall(Aggregation::Weighted).unwrap();
        prop_assert!((weighted.recall - acc).abs() < 1e-12);
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        for c in 0..k {
            let m = cm.per_class(c);
            let lo = m.precision.min(m.recall);
            let hi = m.precision.max(m.recall);
            prop_assert!(m.f1 >= lo - 1e-15 && m.f1 <= hi + 1e-15);
        }
    }

    #[test]
    fn merge_equals_joint_accumulation(k in 2usize..10, a in prop::collection::vec((0usize..10, 0usize..10), 0..100), b in prop::collection::vec((0usize..10, 0usize..10), 0..100)) {
        let mut left = confusion(k, &a);
        left.merge(&confusion(k, &b)).unwrap();
        let joint: Vec<_> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(left, confusion(k, &joint));
    }

    #[test]
    fn f1_is_symmetric_and_bounded(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let f = f1_score(p, r);
        prop_assert_eq!(f, f1_score(r, p));
        prop_assert!(f <= p.max(r) + 1e-15);
    }

    #[test]
    fn fixed4_is_nearest_four_place_decimal(n in 0u64..100_000_000) {
        let x = n as f64 / 1e8;
        let s = format_fixed4(x);
        let (int, frac) = s.split_once('.').unwrap();
        prop_assert_eq!(frac.len(), 4);
        prop_assert!(int == "0" || int == "1");
        // integer arithmetic on the exact 8-digit decimal: round half up
        let want = (n + 5_000) / 10_000;
        let got: u64 = format!("{int}{frac}").parse().unwrap();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn cosine_is_monotone_with_exact_endpoints(base in 1e-5f64..1.0, total in 1u64..5000, probes in prop::collection::vec(0u64..5000, 2..50)) {
        let s = CosineSchedule::new(base, total);
        prop_assert_eq!(s.lr(0), base);
        prop_assert_eq!(s.lr(total), 0.0);
        let mut steps: Vec<u64> = probes.into_iter().map(|p| p % (total + 1)).collect();
        steps.sort_unstable();
        for w in steps.windows(2) {
            prop_assert!(s.lr(w[1]) <= s.lr(w[0]));
        }
    }

    #[test]
    fn split_partitions_every_class(counts in prop::collection::vec(2usize..60, 1..8), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample { path: format!("c{c}/{i}.png").into(), class_index: c });
            }
        }
        let m = DatasetManifest {
            class_names: (0..counts.len()).map(|c| format!("c{c}")).collect(),
            samples,
            source_root: "r".into(),
        };
        let (train, hold) = stratified_split(&m, &SplitSpec { train_fraction: frac, seed }).unwrap();
        prop_assert_eq!(train.len() + hold.len(), m.len());
        for (c, &n) in counts.iter().enumerate() {
            let h = hold.class_counts()[c];
            prop_assert_eq!(h, holdout_count(n, frac));
            prop_assert!(h >= 1 && h < n);
            prop_assert_eq!(train.class_counts()[c] + h, n);
        }
        let mut all: Vec<_> = train.samples.iter().chain(&hold.samples).map(|s| s.path.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), m.len());
    }

    #[test]
    fn constant_images_resize_to_constants(w in 1usize..40, h in 1usize..40, size in 1usize..50, v in any::<u8>()) {
        let rgb = vec![v; w * h * 3];
        let out = resize_bilinear(&rgb, w, h, size).unwrap();
        prop_assert!(out.iter().all(|&x| (x - v as f64).abs() < 1e-9));
    }

    #[test]
    fn rng_helpers(seed in any::<u64>(), bound in 1usize..1000, n in 0usize..200) {
        let mut rng = Rng::new(seed);
        prop_assert!(rng.below(bound) < bound);
        let u = rng.next_f64();
        prop_assert!((0.0..1.0).contains(&u));
        let mut p = rng.permutation(n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_round_trip_any_architecture(
        seed in any::<u64>(),
        classes in 2usize..8,
        widths in prop::collection::vec(1usize..12, 1..3),
        residuals in 0usize..2,
    ) {
        let mut layers: Vec<LayerSpec> = widths.iter().enumerate().map(|(i, &w)| LayerSpec::Conv {
            out_channels: w,
            stride: if i == 0 { 1 } else { 2 },
        }).collect();
        layers.extend(std::iter::repeat_n(LayerSpec::Residual, residuals));
        let spec = ModelSpec { layers, ..ModelSpec::resnet9(classes, 8) };
        let model = ResNet9::<f32>::init(spec, &mut Rng::new(seed)).unwrap();
        let names: Vec<String> = (0..classes).map(|i| format!("k{i}")).collect();
        let bytes = checkpoint::to_bytes(&model, &names, &serde_json::Value::Null).unwrap();
        let loaded = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(loaded.model.spec(), model.spec());
        let again = checkpoint::to_bytes(&loaded.model, &loaded.class_names, &serde_json::Value::Null).unwrap();
        prop_assert_eq!(bytes, again);
    }
}
