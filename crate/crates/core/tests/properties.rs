mod common;

use closer_core::data::{augment, rotate_image, synth_gaussian_classes, AugmentationSpec, CropSpec, ImageShape, Sample, SynthSpec};
use closer_core::encoder::EncoderParams;
use closer_core::ib::{covariances, ib_lower_bound, CovarianceSummary};
use closer_core::losses::{inter_loss_value, intra_loss_value, sce_loss_value, ssc_loss_value, view_pairs};
use closer_core::metrics::{angular_histogram, spread_stats, transferability_from_features};
use closer_core::numerics::{angular_distance, cosine_similarity, Tensor};
use closer_core::protocol::{Prototype, PrototypeBank};
use closer_core::seed;
use proptest::prelude::*;

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
}

/// `rows x d` matrix with rows bounded away from zero.
fn matrix_strategy(rows: std::ops::RangeInclusive<usize>, d: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Tensor> {
    (rows, d).prop_flat_map(|(m, n)| {
        prop::collection::vec(vec_strategy(n), m).prop_map(|rs| Tensor::from_rows(&rs).unwrap())
    })
}

/// Product of Givens rotations with the given angles.
fn rotate(t: &Tensor, angles: &[f64]) -> Tensor {
    let d = t.cols();
    let mut data = t.data().to_vec();
    for (k, &a) in angles.iter().enumerate() {
        let (i, j) = (k % d, (k + 1) % d);
        if i == j {
            continue;
        }
        let (c, s) = (a.cos(), a.sin());
        for row in data.chunks_mut(d) {
            let (x, y) = (row[i], row[j]);
            row[i] = c * x - s * y;
            row[j] = s * x + c * y;
        }
    }
    Tensor::matrix(t.rows(), d, data).unwrap()
}

fn labels_with_pairs(n: usize, classes: usize, raw: &[usize]) -> Vec<usize> {
    let mut l: Vec<usize> = raw.iter().take(n).map(|v| v % classes).collect();
    l[0] = 0;
    l[1] = 0;
    l[2] = 1;
    l
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_scale_free(a in vec_strategy(5), b in vec_strategy(5), s in 0.01f64..100.0) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn angular_triangle_inequality(a in vec_strategy(4), b in vec_strategy(4), c in vec_strategy(4)) {
        let ab = angular_distance(&a, &b).unwrap();
        let bc = angular_distance(&b, &c).unwrap();
        let ac = angular_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn tensor_length_matches_shape(m in 1usize..6, n in 1usize..6) {
        prop_assert!(Tensor::matrix(m, n, vec![0.0; m * n]).is_ok());
        prop_assert!(Tensor::matrix(m, n, vec![0.0; m * n + 1]).is_err());
    }

    #[test]
    fn embeddings_are_unit_and_deterministic(seed in any::<u64>(), x in matrix_strategy(1..=6, 4..=4)) {
        let p = EncoderParams::init(&[4, 16, 3], seed).unwrap();
        match p.embed(&x) {
            Ok(z) => {
                for row in z.row_iter() {
                    let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-12);
                }
                prop_assert_eq!(z, p.embed(&x).unwrap());
            }
            // All hidden units inactive: the raw output is zero and cannot be normalized.
            Err(e) => prop_assert!(matches!(e, closer_core::Error::DegenerateInput(_))),
        }
    }

    #[test]
    fn sce_nonnegative_and_monotone_in_margin(
        f in matrix_strategy(1..=6, 3..=3),
        w in matrix_strategy(2..=5, 3..=3),
        raw in prop::collection::vec(0usize..100, 6),
        tau in 0.02f64..1.0,
        m1 in 0.0f64..0.5,
        dm in 0.0f64..0.5,
    ) {
        let labels: Vec<usize> = raw.iter().take(f.rows()).map(|v| v % w.rows()).collect();
        let l1 = sce_loss_value(&f, &labels, &w, tau, m1).unwrap();
        let l2 = sce_loss_value(&f, &labels, &w, tau, m1 + dm).unwrap();
        prop_assert!(l1 >= 0.0);
        prop_assert!(l2 >= l1 - 1e-12);
    }

    #[test]
    fn pair_losses_ignore_label_names(
        f in matrix_strategy(3..=8, 2..=5),
        raw in prop::collection::vec(0usize..100, 8),
        shift in 1usize..50,
    ) {
        let labels = labels_with_pairs(f.rows(), 3, &raw);
        let renamed: Vec<usize> = labels.iter().map(|l| (2 - l) * 7 + shift).collect();
        prop_assert_eq!(inter_loss_value(&f, &labels).unwrap(), inter_loss_value(&f, &renamed).unwrap());
        prop_assert_eq!(intra_loss_value(&f, &labels).unwrap(), intra_loss_value(&f, &renamed).unwrap());
    }

    #[test]
    fn cosine_losses_are_rotation_invariant(
        f in matrix_strategy(4..=8, 3..=5),
        raw in prop::collection::vec(0usize..100, 8),
        angles in prop::collection::vec(-3.2f64..3.2, 6),
        tau in 0.05f64..1.0,
    ) {
        let labels = labels_with_pairs(f.rows(), 3, &raw);
        let g = rotate(&f, &angles);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9 * (1.0 + a.abs());
        prop_assert!(close(inter_loss_value(&f, &labels).unwrap(), inter_loss_value(&g, &labels).unwrap()));
        prop_assert!(close(intra_loss_value(&f, &labels).unwrap(), intra_loss_value(&g, &labels).unwrap()));
        let half = f.rows() / 2;
        let fv = f.select_rows(&(0..2 * half).collect::<Vec<_>>()).unwrap();
        let gv = g.select_rows(&(0..2 * half).collect::<Vec<_>>()).unwrap();
        prop_assert!(close(
            ssc_loss_value(&fv, &view_pairs(half), tau).unwrap(),
            ssc_loss_value(&gv, &view_pairs(half), tau).unwrap()
        ));
    }

    #[test]
    fn classify_ignores_positive_scaling(
        protos in prop::collection::vec(vec_strategy(3), 2..6),
        z in vec_strategy(3),
        sp in 0.01f64..100.0,
        sz in 0.01f64..100.0,
    ) {
        let params = EncoderParams::init(&[2, 2], 0).unwrap();
        let make = |s: f64| {
            let ps = protos.iter().enumerate().map(|(c, m)| Prototype {
                class_id: c,
                mean: m.iter().map(|v| v * s).collect(),
                count: 1,
            }).collect();
            PrototypeBank::from_prototypes(ps, &params).unwrap()
        };
        let (c1, s1) = make(1.0).classify_feature(&z).unwrap();
        let zs: Vec<f64> = z.iter().map(|v| v * sz).collect();
        let (c2, _) = make(sp).classify_feature(&zs).unwrap();
        let mut sorted = s1.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(c1, c2);
    }

    #[test]
    fn transferability_rotation_and_scale_invariant(
        protos in matrix_strategy(2..=5, 3..=3),
        feats in matrix_strategy(1..=8, 3..=3),
        angles in prop::collection::vec(-3.2f64..3.2, 4),
        s in 0.1f64..10.0,
    ) {
        let rows = |t: &Tensor| t.row_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let t0 = transferability_from_features(&rows(&protos), &feats).unwrap();
        let rp = rotate(&protos, &angles);
        let rf = rotate(&feats, &angles);
        let scaled = Tensor::matrix(rf.rows(), 3, rf.data().iter().map(|v| v * s).collect()).unwrap();
        let t1 = transferability_from_features(&rows(&rp), &scaled).unwrap();
        prop_assert!((t0 - t1).abs() < 1e-8 * (1.0 + t0.abs()));
    }

    #[test]
    fn metrics_are_order_independent(
        feats in matrix_strategy(4..=12, 3..=3),
        raw in prop::collection::vec(0usize..100, 12),
        key in any::<u64>(),
    ) {
        let labels: Vec<usize> = raw.iter().take(feats.rows()).map(|v| v % 3).collect();
        let protos: Vec<Prototype> = (0..3).map(|c| Prototype {
            class_id: c,
            mean: vec![(c as f64).cos(), (c as f64).sin(), 0.3],
            count: 1,
        }).collect();
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| seed::mix(key ^ i as u64));
        let pf = feats.select_rows(&order).unwrap();
        let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = spread_stats(&feats, &labels, &protos).unwrap();
        let b = spread_stats(&pf, &pl, &protos).unwrap();
        let near = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-14,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(near(a.intra, b.intra) && near(a.inter, b.inter));
        let means: Vec<Vec<f64>> = protos.iter().map(|p| p.mean.clone()).collect();
        let ta = transferability_from_features(&means, &feats).unwrap();
        let tb = transferability_from_features(&means, &pf).unwrap();
        prop_assert!((ta - tb).abs() < 1e-14);
    }

    #[test]
    fn histogram_conserves_counts(
        feats in matrix_strategy(1..=30, 2..=2),
        raw in prop::collection::vec(0usize..100, 30),
        bins in 4usize..40,
    ) {
        let labels: Vec<usize> = raw.iter().take(feats.rows()).map(|v| v % 4).collect();
        let h = angular_histogram(&feats, &labels, bins).unwrap();
        let total: usize = h.iter().map(|c| c.counts.iter().sum::<usize>()).sum();
        prop_assert_eq!(total, labels.len());
        for c in &h {
            prop_assert_eq!(c.counts.len(), bins);
            let n = labels.iter().filter(|&&l| l == c.class_id).count();
            prop_assert_eq!(c.counts.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn covariances_ignore_order_and_follow_relabeling(seed in any::<u64>(), key in any::<u64>()) {
        let ds = synth_gaussian_classes(&SynthSpec {
            classes: 3, per_class: 8, input_dim: 3, center_separation: 2.0, cluster_std: 0.5, seed,
        }).unwrap();
        let x = ds.inputs().unwrap();
        let feats = Tensor::from_rows(&x.row_iter().map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect::<Vec<_>>()
        }).collect::<Vec<_>>()).unwrap();
        let labels = ds.labels();
        let base = covariances(&feats, &labels).unwrap();

        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| seed::mix(key ^ i as u64));
        let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let shuffled = covariances(&feats.select_rows(&order).unwrap(), &pl).unwrap();
        prop_assert_eq!(&base, &shuffled);

        let relabel = |l: usize| [20, 5, 11][l];
        let renamed = covariances(&feats, &labels.iter().map(|&l| relabel(l)).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(renamed.log_det_total, base.log_det_total);
        for (i, &c) in base.class_ids.iter().enumerate() {
            let j = renamed.class_ids.iter().position(|&r| r == relabel(c)).unwrap();
            prop_assert_eq!(renamed.log_det_within[j], base.log_det_within[i]);
        }
    }

    #[test]
    fn ib_bound_monotone(
        d in 2usize..12,
        within in prop::collection::vec(5.0f64..30.0, 2..6),
        total in 1.0f64..20.0,
        which in 0usize..6,
        delta in 0.01f64..1.0,
    ) {
        let base = d as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let w: Vec<f64> = within.iter().map(|v| -base - v).collect();
        let t = -base - total;
        let b0 = ib_lower_bound(&CovarianceSummary::from_log_dets(d, w.clone(), t).unwrap()).unwrap();
        let mut up = w.clone();
        let i = which % w.len();
        up[i] += delta.min(within[i] / 2.0);
        let b1 = ib_lower_bound(&CovarianceSummary::from_log_dets(d, up, t).unwrap()).unwrap();
        prop_assert!(b1 > b0);
        let b2 = ib_lower_bound(&CovarianceSummary::from_log_dets(d, w, t + delta.min(total / 2.0)).unwrap()).unwrap();
        prop_assert!(b2 < b0);
    }

    #[test]
    fn augmentation_keeps_label_and_width(
        side in 2usize..7,
        label in any::<usize>(),
        pad in 0usize..4,
        flip in 0.0f64..=1.0,
        noise in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let shape = ImageShape { rows: side, cols: side, channels: 1 };
        let mut r = seed::rng(seed);
        let s = Sample { input: (0..side * side).map(|i| (i as f64 * 0.37).fract()).collect(), label };
        let spec = AugmentationSpec { crop: Some(CropSpec { pad, size: side }), hflip_prob: flip, noise_std: noise, stream: 0 };
        let out = augment(&s, &spec, Some(shape), &mut r).unwrap();
        prop_assert_eq!(out.label, label);
        prop_assert_eq!(out.input.len(), s.input.len());
        prop_assert!(out.input.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rotation_is_a_lossless_permutation(side in 1usize..8, ch in 1usize..4, turns in 0u32..8, seed in any::<u64>()) {
        let shape = ImageShape { rows: side, cols: side, channels: ch };
        let x: Vec<f64> = (0..shape.len()).map(|i| seed::mix(seed ^ i as u64) as f64).collect();
        let y = rotate_image(&x, shape, turns).unwrap();
        let mut a = x.clone();
        let mut b = y.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(rotate_image(&y, shape, 4 - turns % 4).unwrap(), x);
    }

    #[test]
    fn synthetic_generation_is_seeded(seed in any::<u64>()) {
        let spec = SynthSpec { classes: 3, per_class: 4, input_dim: 5, center_separation: 2.0, cluster_std: 1.0, seed };
        prop_assert_eq!(synth_gaussian_classes(&spec).unwrap(), synth_gaussian_classes(&spec).unwrap());
    }
}
