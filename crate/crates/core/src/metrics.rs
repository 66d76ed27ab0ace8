//! Confusion-matrix segmentation metrics and per-class reports.
//!
//! `counts[g][p]` is the number of pixels of ground-truth class `g` predicted
//! as `p`. A class that appears in neither ground truth nor prediction has an
//! undefined IoU and is left out of the mean.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            class_names: Vec::new(),
        }
    }

    /// Attach display names; an empty list falls back to numeric ids.
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.num_classes {
            return Err(Error::Argument(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, i)).sum()
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    /// Add one prediction. Pixels whose ground truth equals `ignore_label` are skipped.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap, ignore_label: Option<u8>) -> Result<()> {
        if (gt.height(), gt.width()) != (pred.height(), pred.width()) {
            return Err(Error::Shape(format!(
                "ground truth is {}x{} but prediction is {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        let c = self.num_classes;
        let mut local = vec![0u64; c * c];
        for (i, (&g, &p)) in gt.data().iter().zip(pred.data()).enumerate() {
            if Some(g) == ignore_label {
                continue;
            }
            let (y, x) = (i / gt.width(), i % gt.width());
            if g as usize >= c {
                return Err(Error::Data(format!("ground truth class {g} at row {y}, col {x} is out of range (0..{c})")));
            }
            if p as usize >= c {
                return Err(Error::Data(format!("predicted class {p} at row {y}, col {x} is out of range (0..{c})")));
            }
            local[g as usize * c + p as usize] += 1;
        }
        for (a, b) in self.counts.iter_mut().zip(local) {
            *a += b;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class, `None` where the class never occurs in ground truth or prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|i| {
                let tp = self.count(i, i);
                let row: u64 = (0..self.num_classes).map(|p| self.count(i, p)).sum();
                let col: u64 = (0..self.num_classes).map(|g| self.count(g, i)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::UndefinedMetric("mean IoU: no class occurs in ground truth or prediction".into()));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("pixel accuracy: no pixels evaluated".into()));
        }
        Ok(self.trace() as f64 / total as f64)
    }

    pub fn report(&self) -> Report {
        let rows = self
            .iou_per_class()
            .into_iter()
            .enumerate()
            .map(|(i, iou)| ClassRow {
                class_id: i,
                class_name: self.class_name(i),
                iou_percent: iou.map(|v| 100.0 * v),
            })
            .collect();
        Report {
            classes: rows,
            pixel_acc_percent: self.pixel_accuracy().ok().map(|v| 100.0 * v),
            miou_percent: self.mean_iou().ok().map(|v| 100.0 * v),
            pixels: self.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class_id: usize,
    pub class_name: String,
    /// `None` when the class is absent from both ground truth and prediction.
    pub iou_percent: Option<f64>,
}

/// Per-class IoU table with pixel-accuracy and mean-IoU summary rows, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub classes: Vec<ClassRow>,
    pub pixel_acc_percent: Option<f64>,
    pub miou_percent: Option<f64>,
    pub pixels: u64,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| format!("{v:.2}"))
}

impl Report {
    /// Columns `class_id,class_name,iou_percent`; then rows `PixelAcc` and `mIoU`
    /// with an empty id. Absent classes print `absent`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,class_name,iou_percent\n");
        for r in &self.classes {
            let name = if r.class_name.contains([',', '"']) {
                format!("\"{}\"", r.class_name.replace('"', "\"\""))
            } else {
                r.class_name.clone()
            };
            let _ = writeln!(out, "{},{},{}", r.class_id, name, cell(r.iou_percent));
        }
        let _ = writeln!(out, ",PixelAcc,{}", cell(self.pixel_acc_percent));
        let _ = writeln!(out, ",mIoU,{}", cell(self.miou_percent));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|r| r.class_name.len())
            .chain([8])
            .max()
            .unwrap_or(8);
        let mut out = format!("{:<width$}  {:>7}\n", "class", "IoU(%)");
        for r in &self.classes {
            let _ = writeln!(out, "{:<width$}  {:>7}", r.class_name, cell(r.iou_percent));
        }
        let _ = writeln!(out, "{:-<1$}", "", width + 9);
        let _ = writeln!(out, "{:<width$}  {:>7}", "PixelAcc", cell(self.pixel_acc_percent));
        let _ = writeln!(out, "{:<width$}  {:>7}", "mIoU", cell(self.miou_percent));
        out
    }
}
