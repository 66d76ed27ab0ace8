use apnet_core::metrics::ConfusionMatrix;
use apnet_core::LabelMap;
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = (usize, LabelMap, LabelMap)> {
    (1usize..=5, 1usize..=8, 1usize..=8).prop_flat_map(|(c, h, w)| {
        let cells = proptest::collection::vec(0..c as u8, h * w);
        (Just(c), cells.clone(), cells).prop_map(move |(c, g, p)| {
            (c, LabelMap::new(h, w, g).unwrap(), LabelMap::new(h, w, p).unwrap())
        })
    })
}

/// IoU by direct set counting over pixels.
fn brute_iou(c: usize, gt: &LabelMap, pred: &LabelMap) -> Vec<Option<f64>> {
    (0..c as u8)
        .map(|k| {
            let pixels = gt.data().iter().zip(pred.data());
            let inter = pixels.clone().filter(|(&g, &p)| g == k && p == k).count();
            let union = pixels.filter(|(&g, &p)| g == k || p == k).count();
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matrix_metrics_equal_brute_force((c, gt, pred) in pair()) {
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&gt, &pred, None).unwrap();

        let ious = brute_iou(c, &gt, &pred);
        prop_assert_eq!(cm.iou_per_class(), ious.clone());

        let defined: Vec<f64> = ious.into_iter().flatten().collect();
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        prop_assert_eq!(cm.mean_iou().unwrap(), miou);

        let correct = gt.data().iter().zip(pred.data()).filter(|(g, p)| g == p).count();
        let acc = correct as f64 / gt.data().len() as f64;
        prop_assert_eq!(cm.pixel_accuracy().unwrap(), acc);
        prop_assert_eq!(cm.total(), gt.data().len() as u64);
    }

    #[test]
    fn accumulation_is_order_independent(a in pair(), b in pair()) {
        let c = a.0.max(b.0);
        let mut one = ConfusionMatrix::new(c);
        one.accumulate(&a.1, &a.2, None).unwrap();
        one.accumulate(&b.1, &b.2, None).unwrap();
        let mut other = ConfusionMatrix::new(c);
        other.accumulate(&b.1, &b.2, None).unwrap();
        let mut tail = ConfusionMatrix::new(c);
        tail.accumulate(&a.1, &a.2, None).unwrap();
        other.merge(&tail).unwrap();
        prop_assert_eq!(one, other);
    }

    #[test]
    fn iou_bounded_and_accuracy_is_trace_over_total((c, gt, pred) in pair()) {
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&gt, &pred, None).unwrap();
        for v in cm.iou_per_class().into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(cm.pixel_accuracy().unwrap(), cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn ignored_pixels_are_not_counted((c, gt, pred) in pair(), mask in proptest::collection::vec(any::<bool>(), 64)) {
        let mut masked = gt.clone();
        for (v, &m) in masked.data_mut().iter_mut().zip(&mask) {
            if m {
                *v = 255;
            }
        }
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&masked, &pred, Some(255)).unwrap();
        let kept = masked.data().iter().filter(|&&v| v != 255).count();
        prop_assert_eq!(cm.total(), kept as u64);
    }
}

#[test]
fn hand_count_fixture() {
    let gt = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    let pred = LabelMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&gt, &pred, None).unwrap();
    assert_eq!(cm.iou_per_class(), vec![Some(0.5), Some(2.0 / 3.0)]);
    let r = cm.report();
    assert_eq!(r.to_csv().lines().last(), Some(",mIoU,58.33"));
    assert!(r.to_csv().contains(",PixelAcc,75.00"));
    assert!(r.to_json().contains("\"miou_percent\""));
}

#[test]
fn empty_class_names_fall_back_to_ids() {
    let gt = LabelMap::filled(2, 2, 1);
    let mut cm = ConfusionMatrix::new(3).with_class_names(Vec::new()).unwrap();
    cm.accumulate(&gt, &gt, None).unwrap();
    let names: Vec<String> = cm.report().classes.into_iter().map(|r| r.class_name).collect();
    assert_eq!(names, ["0", "1", "2"]);
}
