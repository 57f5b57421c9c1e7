//! Two-stage coarse-to-fine segmentation of thin wire-like structures in
//! very high-resolution images, and their removal by tiled inpainting.
//!
//! The coarse module sees the whole image downsampled to `p×p`; windows
//! of the full-resolution image whose coarse wire fraction reaches `alpha`
//! are refined by the fine module, conditioned on the upsampled coarse
//! probability. Removal inpaints the predicted mask tile by tile and
//! corrects each tile's color drift from a ring around the mask.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod imagecore;
pub mod inpaint;
pub mod model;
pub mod pipeline;
pub mod tiling;

pub use error::{Error, Result};
