use apnet_core::data::synth::generate_samples;
use apnet_core::data::SynthSpec;
use apnet_core::model::Apnet;
use apnet_core::train::{self, history_csv, poly_lr, sgd_step, Preset, Sgd, TrainConfig, TrainOutputs};
use apnet_core::{ApnetConfig, Dims, LabelMap, Tensor4};
use proptest::prelude::*;

/// 2.5e-5 * 0.5^0.9 evaluated to 40 significant digits.
const MIDPOINT: f64 = 1.339716828170366455266257906279e-5;

#[test]
fn poly_schedule_endpoints_and_midpoint() {
    let p = TrainConfig::full_scale();
    assert_eq!(poly_lr(0, p.base_lr, p.max_iter, p.power).unwrap(), 2.5e-5);
    assert_eq!(poly_lr(p.max_iter, p.base_lr, p.max_iter, p.power).unwrap(), 0.0);
    let mid = poly_lr(p.max_iter / 2, p.base_lr, p.max_iter, p.power).unwrap();
    assert!(((mid - MIDPOINT) / MIDPOINT).abs() < 1e-12, "{mid:e}");
    assert!(poly_lr(p.max_iter + 1, p.base_lr, p.max_iter, p.power).is_err());
}

proptest! {
    #[test]
    fn poly_schedule_strictly_decreases(max_iter in 2usize..5000, power in 0.1f64..3.0, base in 1e-6f64..1.0) {
        let mut prev = f64::INFINITY;
        for it in (0..=max_iter).step_by((max_iter / 50).max(1)) {
            let lr = poly_lr(it, base, max_iter, power).unwrap();
            prop_assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_matches_hand_evaluation(p in -5.0f64..5.0, g in -5.0f64..5.0, v in -1.0f64..1.0, lr in 0.0f64..0.5, m in 0.0f64..0.99, wd in 0.0f64..0.01) {
        let (mut param, mut vel) = ([p], [v]);
        sgd_step(&mut param, &[g], &mut vel, lr, m, wd).unwrap();
        let v_new = m * v + g + wd * p;
        prop_assert_eq!(vel[0], v_new);
        prop_assert_eq!(param[0], p - lr * v_new);
    }
}

#[test]
fn sgd_descends_a_quadratic() {
    // f(x) = 0.5 * sum a_i x_i^2
    let a = [1.0, 3.0, 0.5];
    let mut x = [2.0, -1.0, 4.0];
    let mut v = [0.0; 3];
    let f = |x: &[f64]| 0.5 * x.iter().zip(&a).map(|(x, a)| a * x * x).sum::<f64>();
    let mut prev = f(&x);
    for _ in 0..50 {
        let g: Vec<f64> = x.iter().zip(&a).map(|(x, a)| a * x).collect();
        sgd_step(&mut x, &g, &mut v, 0.05, 0.0, 0.0).unwrap();
        let now = f(&x);
        assert!(now < prev);
        prev = now;
    }
}

fn tiny_model() -> ApnetConfig {
    ApnetConfig {
        input_size: 32,
        num_classes: 4,
        backbone_channels: vec![4, 4, 8],
        spp: Some(apnet_core::spp::SppConfig::new(vec![1, 2, 3], 8)),
        ..ApnetConfig::default()
    }
}

fn tiny_data() -> Vec<apnet_core::data::Sample> {
    let spec = SynthSpec {
        side: 32,
        pairs: 1,
        unpaired: 1,
        radius: [0.09375, 0.125],
        seed: 2,
        ..SynthSpec::default()
    };
    generate_samples(&spec, 2, 2).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut model = Apnet::<f32>::new(tiny_model(), 1).unwrap();
    let before = model.params.clone();
    let mut opt = Sgd::new(&model.params, 0.9, 5e-4);
    let data = tiny_data();
    let x = Tensor4::stack(&[data[0].image.clone(), data[1].image.clone()]).unwrap();
    let y = vec![data[0].labels.clone(), data[1].labels.clone()];
    for _ in 0..20 {
        let lg = model.loss_and_grads(&x, &y, None).unwrap();
        opt.step(&mut model.params, &lg.grads, 0.0).unwrap();
    }
    assert_eq!(model.params, before);
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data();
    let cfg = TrainConfig {
        base_lr: 0.02,
        max_iter: 30,
        val_every: 10,
        log_every: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = |seed| {
        let c = TrainConfig { seed, ..cfg.clone() };
        train::train(&tiny_model(), &c, &data, &data[..1], &TrainOutputs::default()).unwrap()
    };
    let (a, b, c) = (run(7), run(7), run(8));
    assert_eq!(a.losses, b.losses);
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.model, b.model);
    assert_ne!(a.losses, c.losses);
}

#[test]
fn loss_falls_below_the_uniform_start() {
    let spec = SynthSpec { seed: 1, ..SynthSpec::default() };
    let data = generate_samples(&spec, 2, 4).unwrap();
    let base = ApnetConfig {
        num_classes: spec.num_classes(),
        ..ApnetConfig::default()
    };
    let (model_cfg, train_cfg) = Preset::Apnet3Da.apply(&base, &TrainConfig { max_iter: 100, val_every: 0, ..TrainConfig::default() });
    let bound = (1.0 + model_cfg.scales.len() as f32) * (spec.num_classes() as f32).ln();
    let out = train::train(&model_cfg, &train_cfg, &data, &[], &TrainOutputs::default()).unwrap();
    let tail = &out.losses[90..];
    assert!(tail.iter().all(|&l| l < bound), "bound {bound}, tail {tail:?}");
}

#[test]
fn divergence_is_reported_with_context() {
    let data = tiny_data();
    let cfg = TrainConfig {
        base_lr: 1e30,
        max_iter: 50,
        val_every: 0,
        ..TrainConfig::default()
    };
    let err = train::train(&tiny_model(), &cfg, &data, &[], &TrainOutputs::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, apnet_core::Error::Diverged(_)), "{msg}");
    assert!(msg.contains("iteration") && msg.contains("recent losses"), "{msg}");
}

#[test]
fn checkpoints_and_history_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data();
    let cfg = TrainConfig {
        max_iter: 20,
        val_every: 10,
        log_every: 5,
        ..TrainConfig::default()
    };
    let outputs = TrainOutputs {
        dir: Some(dir.path().to_path_buf()),
        preset: Some("custom".into()),
        class_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
    };
    let out = train::train(&tiny_model(), &cfg, &data, &data, &outputs).unwrap();
    let last = train::Checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.model, out.model);
    assert_eq!(last.meta.iteration, 20);
    let best = train::Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(best.meta.val_miou, out.best_val_miou);
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history, history_csv(&out.history));
    assert_eq!(history.lines().count(), 1 + 4);
}

#[test]
fn mismatched_samples_are_rejected() {
    let bad = vec![apnet_core::data::Sample {
        image: Tensor4::zeros(Dims::new(1, 1, 16, 16)),
        labels: LabelMap::filled(16, 16, 0),
        series: "x".into(),
        slice: 0,
    }];
    let err = train::train(&tiny_model(), &TrainConfig::default(), &bad, &[], &TrainOutputs::default()).unwrap_err();
    assert!(matches!(err, apnet_core::Error::Data(_)));
}
