//! Raster containers and the deterministic pixel operations the rest of the
//! pipeline is built from. Every function here is pure.

mod buffers;
mod classify;
mod filters;
pub mod io;
mod morphology;
mod resample;

pub use buffers::{ImageBuf, LogitMap, MaskBuf, MaskIntegral, ProbMap, BACKGROUND, MAX_CHANNELS, WIRE};
pub use classify::{argmax_classes, softmax_logits};
pub use filters::{luminance, max_filter, min_filter, min_max_filter};
pub use morphology::{dilate, onion_ring};
pub(crate) use resample::bilinear_rows;
pub use resample::{bilinear_resize, footprint, maxpool_downsample_mask, resize_probs, resize_probs_region};

pub(crate) use buffers::same_dims;
pub(crate) use resample::footprint_max;
