//! Datasets: file IO, manifests, and the synthetic generator.

pub mod io;
pub mod manifest;
pub mod synth;

pub use manifest::{Entry, Manifest, Split};
pub use synth::{SynthSpec, TwinPair};

use crate::tensor::{LabelMap, Tensor4};

/// One image with its label map. The image is `1x1xHxW` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor4<f32>,
    pub labels: LabelMap,
    pub series: String,
    pub slice: u32,
}
