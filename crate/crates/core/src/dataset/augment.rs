//! Geometric and photometric training augmentations.
//!
//! Each half of a [`SamplePair`] is transformed about its own centre by the
//! same parameters. Images are resampled bilinearly with edge replication,
//! masks by nearest neighbour with zero outside the source, so masks stay
//! binary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampler::SamplePair;
use crate::error::{invalid, Result};
use crate::imagecore::{ImageBuf, MaskBuf};

pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);
pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const PHOTOMETRIC_RANGE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
    /// Multiplicative brightness factor.
    pub brightness: f64,
    /// Contrast factor about mid-gray.
    pub contrast: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
        }
    }

    pub fn flip_only() -> Self {
        Self {
            flip: true,
            ..Self::identity()
        }
    }

    /// Scale is log-uniform so shrinking and enlarging are equally likely.
    pub fn draw(rng: &mut impl Rng) -> Self {
        let (lo, hi) = SCALE_RANGE;
        Self {
            scale: rng.gen_range(lo.ln()..=hi.ln()).exp(),
            rotation_deg: rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            flip: rng.gen_bool(0.5),
            brightness: 1.0 + rng.gen_range(-PHOTOMETRIC_RANGE..=PHOTOMETRIC_RANGE),
            contrast: 1.0 + rng.gen_range(-PHOTOMETRIC_RANGE..=PHOTOMETRIC_RANGE),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.scale, self.rotation_deg, self.brightness, self.contrast]
            .iter()
            .all(|v| v.is_finite());
        if !ok || self.scale <= 0.0 || self.brightness < 0.0 || self.contrast < 0.0 {
            return Err(invalid(format!("invalid augmentation parameters {self:?}")));
        }
        Ok(())
    }

    fn is_rigid_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation_deg == 0.0
    }

    fn is_photometric_identity(&self) -> bool {
        self.brightness == 1.0 && self.contrast == 1.0
    }

    /// Maps an output offset from the centre back to a source offset.
    fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (u, v) = (u / self.scale, v / self.scale);
        let (x, y) = (c * u + s * v, -s * u + c * v);
        (if self.flip { -x } else { x }, y)
    }
}

fn source_coords(params: &AugmentParams, h: usize, w: usize, y: usize, x: usize) -> (f64, f64) {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sx, sy) = params.inverse(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
    (sx + cx - 0.5, sy + cy - 0.5)
}

fn warp_image(img: &ImageBuf, params: &AugmentParams) -> Result<ImageBuf> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if params.is_rigid_identity() && !params.flip {
        return Ok(img.clone());
    }
    if params.is_rigid_identity() {
        return ImageBuf::from_fn(h, w, ch, |y, x, c| img.get(y, w - 1 - x, c));
    }
    let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    let mut data = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source_coords(params, h, w, y, x);
            let (sx, sy) = (sx.clamp(0.0, (w - 1) as f64), sy.clamp(0.0, (h - 1) as f64));
            let (x0, y0) = (clampi(sx.floor(), w), clampi(sy.floor(), h));
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..ch {
                let top = f64::from(img.get(y0, x0, c)) * (1.0 - fx) + f64::from(img.get(y0, x1, c)) * fx;
                let bot = f64::from(img.get(y1, x0, c)) * (1.0 - fx) + f64::from(img.get(y1, x1, c)) * fx;
                data.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    ImageBuf::from_clamped(h, w, ch, data)
}

fn warp_mask(mask: &MaskBuf, params: &AugmentParams) -> Result<MaskBuf> {
    let (h, w) = mask.dims();
    if params.is_rigid_identity() && !params.flip {
        return Ok(mask.clone());
    }
    if params.is_rigid_identity() {
        return MaskBuf::from_fn(h, w, |y, x| mask.get(y, w - 1 - x));
    }
    MaskBuf::from_fn(h, w, |y, x| {
        let (sx, sy) = source_coords(params, h, w, y, x);
        let (rx, ry) = (sx.round(), sy.round());
        rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h && mask.get(ry as usize, rx as usize)
    })
}

fn photometric(img: ImageBuf, params: &AugmentParams) -> Result<ImageBuf> {
    if params.is_photometric_identity() {
        return Ok(img);
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (b, k) = (params.brightness as f32, params.contrast as f32);
    let data = img.into_data().into_iter().map(|v| (v * b - 0.5) * k + 0.5).collect();
    ImageBuf::from_clamped(h, w, c, data)
}

/// Applies one transform to an image and its mask.
pub fn augment_image_mask(img: &ImageBuf, mask: &MaskBuf, params: &AugmentParams) -> Result<(ImageBuf, MaskBuf)> {
    params.validate()?;
    crate::imagecore::same_dims(img.dims(), mask.dims())?;
    Ok((photometric(warp_image(img, params)?, params)?, warp_mask(mask, params)?))
}

/// Applies `params` to both halves of `pair`; the extrema get the same warp
/// and photometric map as their image. A flip also mirrors the local window
/// within the full-resolution frame.
pub fn apply_augment(pair: &SamplePair, params: &AugmentParams) -> Result<SamplePair> {
    let (global_image, global_mask) = augment_image_mask(&pair.global_image, &pair.global_mask, params)?;
    let (local_image, local_mask) = augment_image_mask(&pair.local_image, &pair.local_mask, params)?;
    let global_extrema = photometric(warp_image(&pair.global_extrema, params)?, params)?;
    let local_extrema = photometric(warp_image(&pair.local_extrema, params)?, params)?;
    let mut window = pair.window;
    if params.flip {
        window.x = pair.full_width - pair.window.x - pair.window.w;
    }
    Ok(SamplePair {
        global_image,
        global_extrema,
        global_mask,
        local_image,
        local_extrema,
        local_mask,
        window,
        ..pair.clone()
    })
}

/// Draws parameters from `rng` and applies them.
pub fn augment(pair: &SamplePair, rng: &mut impl Rng) -> Result<(SamplePair, AugmentParams)> {
    let params = AugmentParams::draw(rng);
    Ok((apply_augment(pair, &params)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_patch, synth_scene};
    use crate::imagecore::dilate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64) -> SamplePair {
        let s = synth_scene(160, 192, 3, (2.0, 4.0), seed).unwrap();
        sample_patch(&s.image, &s.mask, 64, 0.01, 50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identity_leaves_pair_unchanged() {
        let p = pair(1);
        assert_eq!(apply_augment(&p, &AugmentParams::identity()).unwrap(), p);
    }

    #[test]
    fn flip_is_an_involution() {
        let p = pair(2);
        let f = AugmentParams::flip_only();
        let once = apply_augment(&p, &f).unwrap();
        assert_ne!(once.local_mask, p.local_mask);
        assert_eq!(once.window.x, 192 - p.window.x - 64);
        assert_eq!(apply_augment(&once, &f).unwrap(), p);
    }

    #[test]
    fn quarter_turn_transposes_a_line() {
        let n = 33;
        let row = 10;
        let mask = MaskBuf::from_fn(n, n, |y, _| y == row).unwrap();
        let img = ImageBuf::filled(n, n, 3, 0.5).unwrap();
        let params = AugmentParams {
            rotation_deg: 90.0,
            ..AugmentParams::identity()
        };
        let (_, rot) = augment_image_mask(&img, &mask, &params).unwrap();
        let col = n - 1 - row;
        for y in 0..n {
            for x in 0..n {
                if rot.get(y, x) {
                    assert!(x.abs_diff(col) <= 1, "stray pixel at ({y}, {x})");
                }
            }
            assert!((col - 1..=col + 1).any(|x| rot.get(y, x)), "row {y} lost the line");
        }
    }

    #[test]
    fn drawn_params_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = AugmentParams::draw(&mut rng);
            assert!((0.5..=2.0).contains(&a.scale));
            assert!(a.rotation_deg.abs() <= 10.0);
            assert!((0.8..=1.2).contains(&a.brightness) && (0.8..=1.2).contains(&a.contrast));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn augmented_mask_maps_back_into_dilated_source(seed in 0u64..1000) {
            let p = pair(seed % 7);
            let (out, params) = augment(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(out.local_mask.data().iter().all(|&v| v <= 1));
            prop_assert!(out.local_image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let halo = dilate(&p.local_mask, 3).unwrap();
            let (h, w) = p.local_mask.dims();
            for y in 0..h {
                for x in 0..w {
                    if out.local_mask.get(y, x) {
                        let (sx, sy) = source_coords(&params, h, w, y, x);
                        let (ry, rx) = (sy.round() as usize, sx.round() as usize);
                        prop_assert!(halo.get(ry, rx));
                    }
                }
            }
        }
    }
}
