//! Forward kernels and their analytic backward passes.
//!
//! Everything here is a pure function of its arguments. [`crate::graph::Graph`]
//! strings these together and routes gradients.

mod concat;
mod conv;
mod loss;
mod mix;
mod pool;
mod resize;

pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_output_dims, ConvGeom, ConvParams};
pub use loss::softmax_cross_entropy;
pub use mix::{relu, softmax};
pub use pool::{avg_pool_clipped, pooled_dims};
pub use resize::bilinear_resize;

pub(crate) use conv::{conv2d_backward, conv2d_forward};
pub(crate) use loss::softmax_cross_entropy_full;
pub(crate) use mix::{softmax_weighted_sum, softmax_weighted_sum_logit_grad};
pub(crate) use pool::avg_pool_clipped_backward;
pub(crate) use resize::bilinear_resize_backward;
