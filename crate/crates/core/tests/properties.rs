use std::path::PathBuf;

use proptest::prelude::*;

use wavetex::data::image::bin_of;
use wavetex::data::{hist_equalize, Dataset, ImageSample, Split};
use wavetex::metrics::{confusion, roc_auc, top1_accuracy};
use wavetex::ops::softmax_rows;
use wavetex::wavelet::{haar_inverse, haar_split, interleave, lazy_split};
use wavetex::Tensor;

fn image(max_half: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..3usize, 1..3usize, 1..=max_half, 1..=max_half).prop_flat_map(|(n, c, h, w)| {
        let shape = vec![n, c, 2 * h, 2 * w];
        prop::collection::vec(-100.0..100.0f64, n * c * 4 * h * w)
            .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    })
}

fn gray(side: usize) -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0u8..=255, side * side)
        .prop_map(move |d| Tensor::new(vec![1, side, side], d.iter().map(|v| *v as f32 / 255.0).collect()).unwrap())
}

proptest! {
    #[test]
    fn haar_round_trip(x in image(8)) {
        let back = haar_inverse(&haar_split(&x).unwrap()).unwrap();
        prop_assert!(x.max_abs_diff(&back) < 1e-12);
    }

    #[test]
    fn ll_preserves_mean(x in image(6)) {
        let ll = haar_split(&x).unwrap().ll;
        prop_assert!((ll.mean() - x.mean()).abs() < 1e-12);
    }

    #[test]
    fn lazy_split_inverts(x in image(5), axis in 2..4usize) {
        let (e, o) = lazy_split(&x, axis).unwrap();
        prop_assert_eq!(interleave(&e, &o, axis).unwrap(), x);
    }

    #[test]
    fn equalization_is_idempotent_up_to_quantization(img in gray(12)) {
        let once = hist_equalize(&img).unwrap();
        let twice = hist_equalize(&once).unwrap();
        prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(once.max_abs_diff(&twice) <= 1.0 / 255.0 + 1e-6);
    }

    #[test]
    fn equalization_never_sharpens_the_peak(img in gray(10)) {
        let peak = |t: &Tensor<f32>| {
            let mut h = [0usize; 256];
            for v in t.data() {
                h[bin_of(*v)] += 1;
            }
            h.into_iter().max().unwrap()
        };
        prop_assert!(peak(&hist_equalize(&img).unwrap()) <= peak(&img));
    }

    #[test]
    fn roc_is_monotone_and_auc_is_rank_based(
        raw in prop::collection::vec((0..40u32, any::<bool>()), 2..60)
    ) {
        let mut pos: Vec<bool> = raw.iter().map(|r| r.1).collect();
        pos[0] = true;
        pos[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 40.0).collect();
        let (curve, auc) = roc_auc(&scores, &pos).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let first = curve.first().unwrap();
        let last = curve.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in curve.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let (_, auc2) = roc_auc(&warped, &pos).unwrap();
        prop_assert!((auc - auc2).abs() < 1e-12);
    }

    #[test]
    fn accuracy_counts_errors(pairs in prop::collection::vec((0..4usize, 0..4usize), 1..80)) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let errors = pairs.iter().filter(|p| p.0 != p.1).count();
        let acc = top1_accuracy(&pred, &truth).unwrap();
        prop_assert!((acc - (1.0 - errors as f64 / pairs.len() as f64)).abs() < 1e-12);
        let cm = confusion(&pred, &truth, 1).unwrap();
        prop_assert_eq!(cm.tp + cm.fp + cm.fn_ + cm.tn, pairs.len());
        let binary_errors = pairs.iter().filter(|p| (p.0 == 1) != (p.1 == 1)).count();
        let bin_acc = cm.accuracy().unwrap();
        prop_assert!((bin_acc - (1.0 - binary_errors as f64 / pairs.len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in prop::collection::vec(prop::collection::vec(-30.0..30.0f64, 3), 1..6), shift in -50.0..50.0f64) {
        let n = rows.len();
        let flat: Vec<f64> = rows.concat();
        let p = softmax_rows(&Tensor::new(vec![n, 3], flat.clone()).unwrap()).unwrap();
        let shifted = softmax_rows(&Tensor::new(vec![n, 3], flat.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        for (i, row) in p.data().chunks(3).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let am = |r: &[f64]| (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b });
            prop_assert_eq!(am(row), am(&rows[i]));
        }
        prop_assert!(p.max_abs_diff(&shifted) < 1e-9);
    }

    #[test]
    fn epoch_is_a_partition(n in 1..40usize, bs in 1..10usize, seed in any::<u64>(), epoch in 0..5usize) {
        let samples: Vec<ImageSample> = (0..n)
            .map(|i| ImageSample {
                pixels: Tensor::full(&[1, 4, 4], (i % 7) as f32 / 7.0),
                label: i % 3,
                path: PathBuf::from(format!("s{i}.pgm")),
            })
            .collect();
        let data = Dataset::from_samples(Split::Train, samples).unwrap();
        let order = data.epoch_order(seed, epoch, true);
        prop_assert_eq!(&order, &data.epoch_order(seed, epoch, true));
        let mut seen = Vec::new();
        let mut sizes = Vec::new();
        for b in data.batches(&order, bs, None) {
            let b = b.unwrap();
            sizes.push(b.labels.len());
            prop_assert_eq!(b.images.shape()[0], b.labels.len());
            seen.extend(b.indices.iter().copied());
        }
        prop_assert!(sizes[..sizes.len() - 1].iter().all(|s| *s == bs));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let mut labels: Vec<usize> = seen.iter().map(|i| data.samples()[*i].label).collect();
        let mut want = data.labels();
        labels.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(labels, want);
    }
}
