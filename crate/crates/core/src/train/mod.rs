//! Training: poly-decayed momentum SGD on the deep-supervision loss, with
//! seeded shuffling, online augmentation, periodic validation and checkpoints.

mod checkpoint;
mod config;
mod schedule;
mod sgd;

pub use checkpoint::{Checkpoint, CheckpointMeta, VERSION as CHECKPOINT_VERSION};
pub use config::{Augmentation, Preset, TrainConfig};
pub use schedule::poly_lr;
pub use sgd::{sgd_step, Sgd};

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{common_augment, warp_pair, DeformSpec};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{Apnet, ApnetConfig};
use crate::seed::derive;
use crate::tensor::{LabelMap, Tensor4};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// One line of the metric history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    /// 1-based count of completed iterations.
    pub iter: usize,
    pub lr: f64,
    pub loss: f32,
    pub val_miou: Option<f64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iter,lr,loss,val_miou\n");
    for r in rows {
        let miou = r.val_miou.map(|m| format!("{m:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.9e},{:.6},{}", r.iter, r.lr, r.loss, miou);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Apnet<f32>,
    /// Loss of every iteration.
    pub losses: Vec<f32>,
    pub history: Vec<HistoryRow>,
    pub best_val_miou: Option<f64>,
}

/// Where checkpoints, history and metadata go; `None` trains in memory only.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    pub preset: Option<String>,
    pub class_names: Vec<String>,
}

/// Confusion matrix of `model` over `samples`.
pub fn evaluate(model: &Apnet<f32>, samples: &[Sample], ignore_label: Option<u8>) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for s in samples {
        let pred = model.predict(&s.image)?;
        cm.accumulate(&s.labels, &pred[0], ignore_label)?;
    }
    Ok(cm)
}

fn check_samples(samples: &[Sample], config: &ApnetConfig, what: &str) -> Result<()> {
    for s in samples {
        let d = s.image.dims();
        if (d.n, d.c, d.h, d.w) != (1, config.input_channels, config.input_size, config.input_size) {
            return Err(Error::Data(format!(
                "{what} sample {}/{} is {}, model expects 1x{}x{}x{}",
                s.series, s.slice, d, config.input_channels, config.input_size, config.input_size
            )));
        }
    }
    Ok(())
}

fn augment_sample(sample: &Sample, cfg: &TrainConfig, seed: u64) -> Result<(Tensor4<f32>, LabelMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if cfg.augmentation == Augmentation::None || !rng.random_bool(cfg.augment_prob) {
        return Ok((sample.image.clone(), sample.labels.clone()));
    }
    let draw_seed = rng.random();
    match cfg.augmentation {
        Augmentation::Deform => {
            let side = sample.image.dims().h.min(sample.image.dims().w);
            let spec = DeformSpec {
                grid: cfg.deform_grid,
                max_displacement: cfg.deform_displacement * side as f64,
                alpha: 1.0,
                seed: draw_seed,
            };
            warp_pair(&sample.image, &sample.labels, &spec)
        }
        Augmentation::Common => common_augment(&sample.image, &sample.labels, draw_seed),
        Augmentation::None => unreachable!("handled above"),
    }
}

/// Infinite stream of sample indices, reshuffled each epoch.
struct BatchOrder {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        let mut b = BatchOrder {
            seed,
            epoch: 0,
            order: (0..len).collect(),
            pos: 0,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.seed, &[STREAM_SHUFFLE, self.epoch]));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Train from a fresh initialisation derived from `train_cfg.seed`.
pub fn train(
    model_cfg: &ApnetConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    let model = Apnet::new(model_cfg.clone(), derive(train_cfg.seed, &[STREAM_INIT]))?;
    train_model(model, train_cfg, train_set, val_set, outputs)
}

/// Train an existing model in place of a fresh one.
pub fn train_model(
    mut model: Apnet<f32>,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_samples(train_set, &model.config, "training")?;
    check_samples(val_set, &model.config, "validation")?;
    if let Some(dir) = &outputs.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut opt = Sgd::new(&model.params, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut order = BatchOrder::new(train_set.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.max_iter);
    let mut tail: VecDeque<f32> = VecDeque::with_capacity(10);
    let mut history = Vec::new();
    let mut best: Option<f64> = None;

    for it in 0..cfg.max_iter {
        let lr = poly_lr(it, cfg.base_lr, cfg.max_iter, cfg.power)?;
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for slot in 0..cfg.batch_size {
            let sample = &train_set[order.next()];
            let seed = derive(cfg.seed, &[STREAM_AUGMENT, it as u64, slot as u64]);
            let (img, lab) = augment_sample(sample, cfg, seed)?;
            images.push(img);
            labels.push(lab);
        }
        let batch = Tensor4::stack(&images)?;
        let lg = model.loss_and_grads(&batch, &labels, cfg.ignore_label)?;
        let grads_finite = lg.grads.iter().flatten().all(|g| g.is_finite());
        if tail.len() == 10 {
            tail.pop_front();
        }
        tail.push_back(lg.loss);
        if !lg.loss.is_finite() || !grads_finite {
            return Err(Error::Diverged(format!(
                "iteration {it}, lr {lr:.3e}: loss {} (gradients finite: {grads_finite}); recent losses {:?}",
                lg.loss, tail
            )));
        }
        opt.step(&mut model.params, &lg.grads, lr as f32)?;
        losses.push(lg.loss);

        let done = it + 1;
        let validate_now =
            done == cfg.max_iter || (cfg.val_every > 0 && done % cfg.val_every == 0);
        let val_miou = if validate_now && !val_set.is_empty() {
            let cm = evaluate(&model, val_set, cfg.ignore_label)?;
            cm.mean_iou().ok()
        } else {
            None
        };
        if val_miou.is_some() || done % cfg.log_every == 0 || done == cfg.max_iter {
            history.push(HistoryRow {
                iter: done,
                lr,
                loss: lg.loss,
                val_miou,
            });
        }
        if done % cfg.log_every == 0 {
            log::info!("iter {done}/{} lr {lr:.3e} loss {:.4}", cfg.max_iter, lg.loss);
        }
        if let Some(m) = val_miou {
            log::info!("iter {done}: validation mIoU {:.2}%", 100.0 * m);
        }
        if validate_now {
            let improved = match (val_miou, best) {
                (Some(m), Some(b)) => m > b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                best = val_miou;
            }
            if let Some(dir) = &outputs.dir {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    meta: CheckpointMeta {
                        preset: outputs.preset.clone(),
                        iteration: done,
                        class_names: outputs.class_names.clone(),
                        val_miou,
                    },
                };
                ckpt.save(&dir.join("last.ckpt"))?;
                if improved || (val_set.is_empty() && done == cfg.max_iter) {
                    ckpt.save(&dir.join("best.ckpt"))?;
                }
                write_file(&dir.join("history.csv"), &history_csv(&history))?;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        losses,
        history,
        best_val_miou: best,
    })
}
