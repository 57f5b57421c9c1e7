//! Synthetic wire scenes, balanced patch sampling, augmentation and
//! non-wire crops for inpainting data.

mod augment;
mod manifest;
mod sampler;
mod synth;

pub use augment::{
    apply_augment, augment, augment_image_mask, AugmentParams, MAX_ROTATION_DEG, PHOTOMETRIC_RANGE, SCALE_RANGE,
};
pub use manifest::{derive_seed, read_manifest, write_manifest, SceneRecord};
pub use sampler::{nonwire_crops, sample_patch, LabeledImage, NonWireCrops, PatchSampler, SamplePair};
pub use synth::{
    synth_scene, BackgroundDescriptor, SceneParams, SynthScene, WireDescriptor, MAX_WIRE_FRACTION, MIN_SCENE_SIDE,
};

/// Minimum wire fraction of a local training crop.
pub const MIN_WIRE_FRACTION: f64 = 0.01;
