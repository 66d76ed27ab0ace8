use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ApnetConfig;
use crate::spp::{SppConfig, DEFAULT_LEVELS};

/// Online augmentation applied to training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    /// Moving-least-squares lattice deformation.
    Deform,
    /// Mirror, zoom and rotation.
    Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    /// Probability that a training sample is augmented.
    pub augment_prob: f64,
    /// Deformation lattice size per side.
    pub deform_grid: usize,
    /// Largest control point displacement as a fraction of the image side.
    pub deform_displacement: f64,
    /// Validate (and checkpoint) every this many iterations; 0 only at the end.
    pub val_every: usize,
    /// Record the loss in the history every this many iterations.
    pub log_every: usize,
    pub ignore_label: Option<u8>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.03,
            power: 0.9,
            max_iter: 2000,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 2,
            seed: 0,
            augmentation: Augmentation::Deform,
            augment_prob: 0.5,
            deform_grid: 4,
            deform_displacement: 0.05,
            val_every: 500,
            log_every: 10,
            ignore_label: Some(crate::tensor::IGNORE_LABEL),
        }
    }
}

impl TrainConfig {
    /// The optimiser settings of the original full-scale experiments
    /// (much lower learning rate, 110k iterations).
    pub fn full_scale() -> Self {
        TrainConfig {
            base_lr: 2.5e-5,
            power: 0.9,
            max_iter: 110_000,
            momentum: 0.9,
            weight_decay: 5e-4,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power {} must be positive", self.power));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad(format!("augment_prob {} must lie in [0, 1]", self.augment_prob));
        }
        if self.deform_grid < 2 {
            return bad(format!("deform_grid {} must be at least 2", self.deform_grid));
        }
        if !(self.deform_displacement >= 0.0 && self.deform_displacement < 0.5) {
            return bad(format!("deform_displacement {} must lie in [0, 0.5)", self.deform_displacement));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        Ok(())
    }
}

/// The experiment arms compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Three input scales {1, 0.75, 0.5} with attention and deep supervision.
    Apnet3Da,
    /// Two input scales {1, 0.75}.
    Apnet2Da,
    /// Single scale with pyramid pooling, no attention.
    PyramidDa,
    /// As `PyramidDa` but trained with mirror/zoom/rotate augmentation.
    PyramidCda,
    /// Single scale, no pyramid pooling.
    FcnDa,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Apnet3Da,
        Preset::Apnet2Da,
        Preset::PyramidDa,
        Preset::PyramidCda,
        Preset::FcnDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Apnet3Da => "apnet3+DA",
            Preset::Apnet2Da => "apnet2+DA",
            Preset::PyramidDa => "pyramid-only+DA",
            Preset::PyramidCda => "pyramid-only+CDA",
            Preset::FcnDa => "fcn+DA",
        }
    }

    pub fn augmentation(self) -> Augmentation {
        match self {
            Preset::PyramidCda => Augmentation::Common,
            _ => Augmentation::Deform,
        }
    }

    /// Override the architecture fields of `base` for this arm; sizes and widths are kept.
    pub fn model_config(self, base: &ApnetConfig) -> ApnetConfig {
        let pyramid = base
            .spp
            .clone()
            .unwrap_or_else(|| SppConfig::new(DEFAULT_LEVELS.to_vec(), base.feature_channels()));
        let (scales, spp, attention) = match self {
            Preset::Apnet3Da => (vec![1.0, 0.75, 0.5], Some(pyramid), true),
            Preset::Apnet2Da => (vec![1.0, 0.75], Some(pyramid), true),
            Preset::PyramidDa | Preset::PyramidCda => (vec![1.0], Some(pyramid), false),
            Preset::FcnDa => (vec![1.0], None, false),
        };
        ApnetConfig {
            scales,
            spp,
            attention,
            deep_supervision: attention,
            ..base.clone()
        }
    }

    pub fn apply(self, model: &ApnetConfig, train: &TrainConfig) -> (ApnetConfig, TrainConfig) {
        (
            self.model_config(model),
            TrainConfig {
                augmentation: self.augmentation(),
                ..train.clone()
            },
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
            })
    }
}
