//! Balanced patch sampling and non-wire crop extraction.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::imagecore::{bilinear_resize, maxpool_downsample_mask, same_dims, ImageBuf, MaskBuf, MaskIntegral};
use crate::model::{minmax_channels, DEFAULT_MINMAX_KERNEL};
use crate::tiling::WindowSpec;

/// A full-resolution image and its wire mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageBuf,
    pub mask: MaskBuf,
}

impl LabeledImage {
    pub fn new(image: ImageBuf, mask: MaskBuf) -> Result<Self> {
        same_dims(image.dims(), mask.dims())?;
        Ok(Self { image, mask })
    }
}

/// A global (downsampled) and local (full-resolution crop) training pair.
/// The extrema are `[minLum, maxLum]` taken at full resolution, then
/// downsampled or cropped like the image they accompany.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub global_image: ImageBuf,
    pub global_extrema: ImageBuf,
    pub global_mask: MaskBuf,
    pub local_image: ImageBuf,
    pub local_extrema: ImageBuf,
    pub local_mask: MaskBuf,
    /// Location of the local crop in the full-resolution image.
    pub window: WindowSpec,
    pub full_height: usize,
    pub full_width: usize,
    /// Set when no random crop met the wire fraction and the crop was
    /// centred on a wire pixel instead.
    pub fallback: bool,
}

/// Reusable sampler over one labeled image; caches the global pair and
/// the mask's summed-area table.
pub struct PatchSampler<'a> {
    image: &'a ImageBuf,
    mask: &'a MaskBuf,
    p: usize,
    min_frac: f64,
    max_tries: usize,
    counts: MaskIntegral,
    wire_pixels: Vec<usize>,
    extrema: ImageBuf,
    global_image: ImageBuf,
    global_extrema: ImageBuf,
    global_mask: MaskBuf,
}

impl<'a> PatchSampler<'a> {
    pub fn new(
        image: &'a ImageBuf,
        mask: &'a MaskBuf,
        p: usize,
        min_frac: f64,
        max_tries: usize,
        minmax_kernel: usize,
    ) -> Result<Self> {
        same_dims(image.dims(), mask.dims())?;
        let (h, w) = image.dims();
        if p == 0 || p > h || p > w {
            return Err(invalid(format!("patch size {p} does not fit a {h}x{w} image")));
        }
        if !(0.0..=1.0).contains(&min_frac) {
            return Err(invalid(format!("minimum wire fraction {min_frac} outside [0, 1]")));
        }
        let wire_pixels: Vec<usize> = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect();
        if wire_pixels.is_empty() {
            return Err(Error::Sampling("mask has no wire pixels to sample around".into()));
        }
        let extrema = minmax_channels(image, minmax_kernel)?;
        Ok(Self {
            image,
            mask,
            p,
            min_frac,
            max_tries,
            counts: mask.integral(),
            wire_pixels,
            global_image: bilinear_resize(image, p, p)?,
            global_extrema: bilinear_resize(&extrema, p, p)?,
            extrema,
            global_mask: maxpool_downsample_mask(mask, p, p)?,
        })
    }

    fn pair(&self, window: WindowSpec, fallback: bool) -> Result<SamplePair> {
        Ok(SamplePair {
            global_image: self.global_image.clone(),
            global_extrema: self.global_extrema.clone(),
            global_mask: self.global_mask.clone(),
            local_image: self.image.crop(&window)?,
            local_extrema: self.extrema.crop(&window)?,
            local_mask: self.mask.crop(&window)?,
            window,
            full_height: self.image.height(),
            full_width: self.image.width(),
            fallback,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<SamplePair> {
        let (h, w) = self.image.dims();
        let p = self.p;
        let area = (p * p) as f64;
        for _ in 0..self.max_tries {
            let win = WindowSpec {
                x: rng.gen_range(0..=w - p),
                y: rng.gen_range(0..=h - p),
                w: p,
                h: p,
            };
            if self.counts.count(&win)? as f64 / area >= self.min_frac {
                return self.pair(win, false);
            }
        }
        let idx = self.wire_pixels[rng.gen_range(0..self.wire_pixels.len())];
        let (cy, cx) = (idx / w, idx % w);
        let win = WindowSpec {
            x: cx.saturating_sub(p / 2).min(w - p),
            y: cy.saturating_sub(p / 2).min(h - p),
            w: p,
            h: p,
        };
        self.pair(win, true)
    }
}

/// Draws one `p×p` crop containing at least `min_frac` wire pixels, with a
/// wire-centred fallback after `max_tries` rejections. Extrema use the
/// default kernel; [`PatchSampler`] takes any other.
pub fn sample_patch(
    image: &ImageBuf,
    mask: &MaskBuf,
    p: usize,
    min_frac: f64,
    max_tries: usize,
    rng: &mut impl Rng,
) -> Result<SamplePair> {
    PatchSampler::new(image, mask, p, min_frac, max_tries, DEFAULT_MINMAX_KERNEL)?.sample(rng)
}

#[derive(Clone, Debug, Default)]
pub struct NonWireCrops {
    pub crops: Vec<ImageBuf>,
    pub windows: Vec<WindowSpec>,
    /// How many of the requested crops could not be found.
    pub shortfall: usize,
}

/// Random `size×size` crops that contain no wire pixels.
pub fn nonwire_crops(
    image: &ImageBuf,
    mask: &MaskBuf,
    n: usize,
    size: usize,
    max_tries: usize,
    rng: &mut impl Rng,
) -> Result<NonWireCrops> {
    same_dims(image.dims(), mask.dims())?;
    if size == 0 {
        return Err(invalid("crop size must be positive"));
    }
    let (h, w) = image.dims();
    let mut out = NonWireCrops::default();
    if size > h || size > w {
        out.shortfall = n;
        return Ok(out);
    }
    let counts = mask.integral();
    let mut tries = 0;
    while out.crops.len() < n && tries < max_tries {
        tries += 1;
        let win = WindowSpec {
            x: rng.gen_range(0..=w - size),
            y: rng.gen_range(0..=h - size),
            w: size,
            h: size,
        };
        if counts.count(&win)? == 0 {
            out.crops.push(image.crop(&win)?);
            out.windows.push(win);
        }
    }
    out.shortfall = n - out.crops.len();
    Ok(out)
}
