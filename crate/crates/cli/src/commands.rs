use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use apnet_core::augment::{warp_pair, DeformSpec};
use apnet_core::data::io::{read_image, write_labels, write_rgb_png, Gray8};
use apnet_core::data::synth::{generate_samples, write_dataset};
use apnet_core::data::{Manifest, Sample};
use apnet_core::gradcheck::suite;
use apnet_core::seed::derive;
use apnet_core::train::{self, Checkpoint, TrainOutputs};
use apnet_core::{Error, LabelMap};

use crate::config::RunConfig;
use crate::palette;
use crate::{AugmentArgs, EvalArgs, GradcheckArgs, GradcheckFailed, InferArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn class_names(manifest: &Manifest) -> Vec<String> {
    if manifest.class_names.is_empty() {
        (0..manifest.num_classes).map(|c| c.to_string()).collect()
    } else {
        manifest.class_names.clone()
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        rc.synth.seed = seed;
    }
    if let Some(side) = a.side {
        rc.synth.side = side;
    }
    rc.synth.validate()?;
    if a.series == 0 || a.slices == 0 {
        return Err(Error::Config("--series and --slices must be positive".into()).into());
    }
    create_dir(&a.out)?;
    rc.echo(&a.out)?;

    let samples = generate_samples(&rc.synth, a.series, a.slices)?;
    let manifest = write_dataset(&samples, rc.synth.side, rc.synth.class_names(), &a.out)?;
    let split = manifest.split_by_series(a.val_series, a.test_series, rc.synth.seed)?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        part.write(&a.out.join(format!("{name}.txt")))?;
        log::info!("{name}: {} images from {} series", part.entries.len(), part.series_ids().len());
    }
    println!(
        "wrote {} images ({} classes, {}x{}) to {}",
        manifest.entries.len(),
        manifest.num_classes,
        manifest.side,
        manifest.side,
        a.out.display()
    );
    Ok(())
}

pub fn augment(a: &AugmentArgs) -> Result<()> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        rc.train.seed = seed;
    }
    rc.train.validate()?;
    let manifest = Manifest::read(&a.manifest)?;
    let samples = manifest.load()?;
    let side = manifest.side;
    let template = DeformSpec {
        grid: rc.train.deform_grid,
        max_displacement: rc.train.deform_displacement * side as f64,
        alpha: 1.0,
        seed: 0,
    };
    template.validate(side, side)?;
    create_dir(&a.out)?;
    rc.echo(&a.out)?;

    let mut out: Vec<Sample> = Vec::with_capacity(samples.len() * (a.copies + 1));
    for (i, s) in samples.iter().enumerate() {
        if !a.no_originals {
            out.push(s.clone());
        }
        for k in 0..a.copies {
            let spec = template.with_seed(derive(rc.train.seed, &[i as u64, k as u64]));
            let (image, labels) = warp_pair(&s.image, &s.labels, &spec)?;
            out.push(Sample {
                image,
                labels,
                series: s.series.clone(),
                slice: s.slice,
            });
        }
    }
    let written = write_dataset(&out, side, class_names(&manifest), &a.out)?;
    println!("wrote {} images to {}", written.entries.len(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if a.preset.is_some() {
        rc.preset.clone_from(&a.preset);
    }
    if a.manifest.is_some() {
        rc.paths.manifest.clone_from(&a.manifest);
    }
    if a.val_manifest.is_some() {
        rc.paths.val_manifest.clone_from(&a.val_manifest);
    }
    if let Some(v) = a.seed {
        rc.train.seed = v;
    }
    if let Some(v) = a.max_iter {
        rc.train.max_iter = v;
    }
    if let Some(v) = a.base_lr {
        rc.train.base_lr = v;
    }
    if let Some(v) = a.batch_size {
        rc.train.batch_size = v;
    }
    if let Some(v) = a.val_every {
        rc.train.val_every = v;
    }
    let manifest_path = rc
        .paths
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no training manifest: pass --manifest or set paths.manifest".into()))?;
    let manifest = Manifest::read(&manifest_path)?;
    let val_manifest = rc.paths.val_manifest.as_deref().map(Manifest::read).transpose()?;
    if let Some(v) = &val_manifest {
        if (v.num_classes, v.side) != (manifest.num_classes, manifest.side) {
            return Err(Error::Data(format!(
                "validation manifest has {} classes at side {}, training manifest {} at side {}",
                v.num_classes, v.side, manifest.num_classes, manifest.side
            ))
            .into());
        }
    }
    rc.model.num_classes = manifest.num_classes;
    rc.model.input_size = manifest.side;
    let preset = rc.preset()?;
    if let Some(p) = preset {
        rc.preset = Some(p.name().to_string());
        (rc.model, rc.train) = p.apply(&rc.model, &rc.train);
    }
    rc.model.validate()?;
    rc.train.validate()?;
    create_dir(&a.out)?;
    rc.echo(&a.out)?;

    let train_set = manifest.load()?;
    let val_set = match &val_manifest {
        Some(v) => v.load()?,
        None => Vec::new(),
    };
    log::info!(
        "training {} on {} images ({} validation) for {} iterations",
        rc.preset.as_deref().unwrap_or("custom model"),
        train_set.len(),
        val_set.len(),
        rc.train.max_iter
    );
    let started = Instant::now();
    let outcome = train::train(
        &rc.model,
        &rc.train,
        &train_set,
        &val_set,
        &TrainOutputs {
            dir: Some(a.out.clone()),
            preset: rc.preset.clone(),
            class_names: class_names(&manifest),
        },
    )?;
    let last = outcome.losses.last().copied().unwrap_or(f32::NAN);
    print!("trained {} iterations in {:.1}s, final loss {last:.4}", rc.train.max_iter, started.elapsed().as_secs_f64());
    match outcome.best_val_miou {
        Some(m) => println!(", best validation mIoU {:.2}%", 100.0 * m),
        None => println!(),
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::read(&a.manifest)?;
    let config = &ckpt.model.config;
    if manifest.num_classes != config.num_classes || manifest.side != config.input_size {
        return Err(Error::Data(format!(
            "manifest has {} classes at side {}, checkpoint expects {} at side {}",
            manifest.num_classes, manifest.side, config.num_classes, config.input_size
        ))
        .into());
    }
    let samples = manifest.load()?;
    let names = if manifest.class_names.is_empty() { ckpt.meta.class_names.clone() } else { manifest.class_names.clone() };
    let cm = train::evaluate(&ckpt.model, &samples, Some(a.ignore_label))?.with_class_names(names)?;
    let report = cm.report();
    create_dir(&a.out)?;
    write_text(&a.out.join("report.csv"), &report.to_csv())?;
    write_text(&a.out.join("report.json"), &report.to_json())?;
    let text = report.to_text();
    write_text(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    if config.attention {
        let weights: Vec<String> = config
            .scales
            .iter()
            .zip(ckpt.model.scale_weights())
            .map(|(s, w)| format!("{s}: {w:.4}"))
            .collect();
        println!("scale weights {}", weights.join(", "));
    }
    Ok(())
}

/// Blend class colours over the grayscale image; background keeps the image.
fn overlay(image: &Gray8, labels: &LabelMap, opacity: f32) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(image.data.len() * 3);
    for (&g, &c) in image.data.iter().zip(labels.data()) {
        let color = palette::color(c);
        for ch in color {
            let v = if c == 0 { f32::from(g) } else { (1.0 - opacity) * f32::from(g) + opacity * f32::from(ch) };
            rgb.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    rgb
}

pub fn infer(a: &InferArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.opacity) {
        return Err(Error::Config(format!("--opacity {} must lie in [0, 1]", a.opacity)).into());
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let image = read_image(&a.image)?;
    let side = ckpt.model.config.input_size;
    let d = image.dims();
    if (d.h, d.w) != (side, side) {
        return Err(Error::Data(format!("{} is {}x{}, the model expects {side}x{side}", a.image.display(), d.h, d.w)).into());
    }
    let labels = ckpt.model.predict(&image)?.remove(0);
    create_dir(&a.out)?;
    write_labels(&a.out.join("labels.png"), &labels)?;
    if !a.no_overlay {
        let gray = Gray8::from_tensor(&image);
        write_rgb_png(&a.out.join("overlay.png"), d.w, d.h, &overlay(&gray, &labels, a.opacity))?;
    }
    let present: Vec<String> = labels.classes_present().iter().map(|c| c.to_string()).collect();
    println!("classes present: {}", present.join(" "));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()).into());
    }
    let started = Instant::now();
    let reports = suite::run(a.seed..a.seed + a.seeds, a.tolerance);
    let summary = suite::summarize(&reports);
    for (r, seeds) in &summary {
        println!("{r} seeds={seeds}");
    }
    let failed = summary.iter().filter(|(r, _)| !r.passed).count();
    println!(
        "{} checks, {failed} failed, {:.1}s",
        summary.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_background_and_tints_classes() {
        let image = Gray8 {
            height: 1,
            width: 2,
            data: vec![100, 100],
        };
        let labels = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let rgb = overlay(&image, &labels, 0.5);
        assert_eq!(&rgb[..3], &[100, 100, 100]);
        let c = palette::color(1);
        let expect: Vec<u8> = c.iter().map(|&v| ((100.0 + f32::from(v)) / 2.0).round() as u8).collect();
        assert_eq!(&rgb[3..], &expect[..]);
    }
}
