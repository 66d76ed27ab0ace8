//! Attention-pyramid semantic segmentation built on a small tensor engine.
//!
//! The crate covers the whole workflow: a tape-based differentiable tensor
//! core with finite-difference gradient checking, pyramid pooling, scale
//! attention, the full network, moving-least-squares deformation augmentation,
//! confusion-matrix metrics, an SGD trainer, and a synthetic dataset generator.

pub mod attention;
pub mod data;
pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod seed;
pub mod spp;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{Apnet, ApnetConfig, ApnetParams};
pub use tensor::{Dims, LabelMap, Real, Tensor4, IGNORE_LABEL};
