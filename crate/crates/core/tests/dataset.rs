use std::collections::BTreeSet;

use apnet_core::data::io::{read_labels, write_labels};
use apnet_core::data::synth::{generate, generate_samples};
use apnet_core::data::{Manifest, Sample, SynthSpec};
use apnet_core::{Error, LabelMap};
use proptest::prelude::*;

fn spec(seed: u64) -> SynthSpec {
    SynthSpec { seed, ..SynthSpec::default() }
}

fn mirror(labels: &LabelMap) -> LabelMap {
    LabelMap::from_fn(labels.height(), labels.width(), |y, x| labels.at(y, labels.width() - 1 - x))
}

/// Every twin lies wholly in its own half and nothing touches the border.
fn valid_layout(spec: &SynthSpec, labels: &LabelMap) -> bool {
    let half = spec.side / 2;
    let twins = spec.twin_pairs();
    (0..labels.height()).all(|y| {
        (0..labels.width()).all(|x| {
            let c = labels.at(y, x);
            let border = y == 0 || x == 0 || y + 1 == labels.height() || x + 1 == labels.width();
            if c == 0 {
                return true;
            }
            !border
                && twins.iter().all(|t| (c != t.left || x < half) && (c != t.right || x >= half))
                && (c as usize) < spec.num_classes()
        })
    })
}

#[test]
fn mirrored_and_swapped_samples_are_valid() {
    let s = spec(4);
    for sample in generate_samples(&s, 6, 3).unwrap() {
        assert!(valid_layout(&s, &sample.labels));
        let mut swapped = mirror(&sample.labels);
        for t in s.twin_pairs() {
            for v in swapped.data_mut() {
                if *v == t.left {
                    *v = t.right;
                } else if *v == t.right {
                    *v = t.left;
                }
            }
        }
        assert!(valid_layout(&s, &swapped));
        // without the swap the twins end up on the wrong side
        assert!(!valid_layout(&s, &mirror(&sample.labels)));
    }
}

#[test]
fn twins_share_intensity() {
    let clean = SynthSpec { noise: 0.0, blur: 0, ..spec(3) };
    for sample in generate_samples(&clean, 3, 2).unwrap() {
        for t in clean.twin_pairs() {
            let value = |c: u8| {
                let v: BTreeSet<u32> = sample
                    .labels
                    .data()
                    .iter()
                    .zip(sample.image.data())
                    .filter(|(&l, _)| l == c)
                    .map(|(_, v)| v.to_bits())
                    .collect();
                assert_eq!(v.len(), 1, "class {c} is not flat");
                v.into_iter().next().unwrap()
            };
            assert_eq!(value(t.left), value(t.right));
        }
    }
}

#[test]
fn slices_morph_smoothly() {
    let s = spec(6);
    let series = generate_samples(&s, 1, 6).unwrap();
    for pair in series.windows(2) {
        assert_ne!(pair[0].labels, pair[1].labels);
        for c in 1..s.num_classes() as u8 {
            let (a, b) = (&pair[0].labels, &pair[1].labels);
            let both = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == c && y == c).count();
            let either = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == c || y == c).count();
            assert!(both as f64 / either as f64 > 0.5, "class {c} jumps between slices");
        }
    }
}

#[test]
fn generation_is_seeded() {
    let a = generate_samples(&spec(9), 2, 3).unwrap();
    let b = generate_samples(&spec(9), 2, 3).unwrap();
    let c = generate_samples(&spec(10), 2, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|s| s.labels.classes_present().len() == spec(9).num_classes()));
}

#[test]
fn written_dataset_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(2);
    let manifest = generate(&s, 3, 2, dir.path()).unwrap();
    let reread = Manifest::read(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(reread.entries, manifest.entries);
    assert_eq!(reread.class_names, s.class_names());
    let loaded: Vec<Sample> = reread.load().unwrap();
    assert_eq!(loaded, generate_samples(&s, 3, 2).unwrap());
}

#[test]
fn manifest_with_mismatched_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&spec(1), 2, 1, dir.path()).unwrap();
    let label = dir.path().join(&manifest.entries[0].label);
    write_labels(&label, &LabelMap::filled(8, 8, 0)).unwrap();
    let err = manifest.validate().unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn missing_label_file_names_the_path() {
    let err = read_labels(std::path::Path::new("/nonexistent/labels.png")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/labels.png"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn splits_never_share_a_series(val in 0usize..4, test in 0usize..4, seed in any::<u64>()) {
        let series = 9;
        let manifest = Manifest {
            root: ".".into(),
            side: 64,
            num_classes: 6,
            class_names: Vec::new(),
            entries: (0..series * 3)
                .map(|i| apnet_core::data::Entry {
                    image: format!("i{i}.png").into(),
                    label: format!("l{i}.png").into(),
                    series: format!("s{}", i / 3),
                    slice: (i % 3) as u32,
                })
                .collect(),
        };
        let split = manifest.split_by_series(val, test, seed).unwrap();
        let ids = |m: &Manifest| m.series_ids().into_iter().map(String::from).collect::<BTreeSet<_>>();
        let (tr, va, te) = (ids(&split.train), ids(&split.val), ids(&split.test));
        prop_assert_eq!((va.len(), te.len()), (val, test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert_eq!(tr.len() + va.len() + te.len(), series);
        prop_assert_eq!(split.train.entries.len() + split.val.entries.len() + split.test.entries.len(), series * 3);
    }
}
