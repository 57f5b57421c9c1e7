//! Raster containers shared by every stage of the pipeline.
//!
//! All rasters are row-major with interleaved channels: sample `(y, x, c)`
//! lives at `(y * width + x) * channels + c`.

use crate::error::{invalid, shape, Result};
use crate::tiling::WindowSpec;

pub const MAX_CHANNELS: usize = 8;

/// Index of the wire class in two-class probability and logit maps.
pub const WIRE: usize = 1;
/// Index of the background class.
pub const BACKGROUND: usize = 0;

/// Dense `H×W×C` raster with every sample finite and in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if channels == 0 || channels > MAX_CHANNELS {
            return Err(invalid(format!("channel count {channels} outside 1..={MAX_CHANNELS}")));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} samples for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if !all_unit(&data) {
            let v = data
                .iter()
                .find(|v| !(0.0..=1.0).contains(*v))
                .copied()
                .unwrap_or(f32::NAN);
            return Err(invalid(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from samples that are clamped into `[0, 1]`.
    /// Non-finite samples map to 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Trusted constructor for data produced by this crate's own operations.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(all_unit(&data));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<ImageBuf> {
        if c >= self.channels {
            return Err(invalid(format!("channel {c} of a {}-channel image", self.channels)));
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Ok(Self::from_parts(self.height, self.width, 1, data))
    }

    /// Concatenates images of equal spatial size along the channel axis.
    pub fn stack(parts: &[&ImageBuf]) -> Result<ImageBuf> {
        let first = parts.first().ok_or_else(|| invalid("no images to stack"))?;
        let (h, w) = first.dims();
        if let Some(p) = parts.iter().find(|p| p.dims() != (h, w)) {
            return Err(shape(format!("cannot stack {}x{} with {}x{}", p.height, p.width, h, w)));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        if channels > MAX_CHANNELS {
            return Err(invalid(format!(
                "stacked channel count {channels} exceeds {MAX_CHANNELS}"
            )));
        }
        let mut data = vec![0.0; h * w * channels];
        let mut offset = 0;
        for p in parts {
            let pc = p.channels;
            match pc {
                1 => interleave::<1>(&mut data, channels, offset, &p.data),
                2 => interleave::<2>(&mut data, channels, offset, &p.data),
                3 => interleave::<3>(&mut data, channels, offset, &p.data),
                _ => {
                    for (px, src) in data.chunks_exact_mut(channels).zip(p.data.chunks_exact(pc)) {
                        px[offset..offset + pc].copy_from_slice(src);
                    }
                }
            }
            offset += pc;
        }
        Ok(Self::from_parts(h, w, channels, data))
    }

    /// Exact pixel copy of a window.
    pub fn crop(&self, win: &WindowSpec) -> Result<ImageBuf> {
        win.check_within(self.height, self.width)?;
        let c = self.channels;
        let mut data = Vec::with_capacity(win.h * win.w * c);
        for y in win.y..win.y + win.h {
            let start = (y * self.width + win.x) * c;
            data.extend_from_slice(&self.data[start..start + win.w * c]);
        }
        Ok(Self::from_parts(win.h, win.w, c, data))
    }

    /// Planar (channel-major) copy in double precision, the layout the
    /// convolution engine consumes.
    pub fn to_planar_f64(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * n + i] = f64::from(v);
            }
        }
        out
    }
}

/// True when every sample lies in `[0, 1]`; NaN fails.
fn all_unit(data: &[f32]) -> bool {
    data.iter().fold(true, |ok, &v| ok & (v >= 0.0) & (v <= 1.0))
}

fn interleave<const PC: usize>(dst: &mut [f32], channels: usize, offset: usize, src: &[f32]) {
    for (px, part) in dst.chunks_exact_mut(channels).zip(src.chunks_exact(PC)) {
        for j in 0..PC {
            px[offset + j] = part[j];
        }
    }
}

/// Binary `H×W` raster; every value is exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskBuf {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskBuf {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(shape(format!("{} values for a {height}x{width} mask", data.len())));
        }
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(invalid(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self::new(height, width, data)
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| *v <= 1));
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn crop(&self, win: &WindowSpec) -> Result<MaskBuf> {
        win.check_within(self.height, self.width)?;
        let mut data = Vec::with_capacity(win.h * win.w);
        for y in win.y..win.y + win.h {
            let start = y * self.width + win.x;
            data.extend_from_slice(&self.data[start..start + win.w]);
        }
        Ok(Self::from_parts(win.h, win.w, data))
    }

    /// Pointwise `self AND NOT other`.
    pub fn difference(&self, other: &MaskBuf) -> Result<MaskBuf> {
        same_dims(self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & (1 - b)).collect();
        Ok(Self::from_parts(self.height, self.width, data))
    }

    /// Summed-area table for O(1) window counts.
    pub fn integral(&self) -> MaskIntegral {
        MaskIntegral::new(self)
    }
}

/// Summed-area table over a [`MaskBuf`].
#[derive(Clone, Debug)]
pub struct MaskIntegral {
    height: usize,
    width: usize,
    // (height + 1) x (width + 1), first row and column zero
    sums: Vec<u64>,
}

impl MaskIntegral {
    fn new(mask: &MaskBuf) -> Self {
        let (h, w) = mask.dims();
        let stride = w + 1;
        let mut sums = vec![0u64; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += u64::from(mask.data[y * w + x]);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            height: h,
            width: w,
            sums,
        }
    }

    pub fn count(&self, win: &WindowSpec) -> Result<u64> {
        win.check_within(self.height, self.width)?;
        let s = self.width + 1;
        let (y0, x0, y1, x1) = (win.y, win.x, win.y + win.h, win.x + win.w);
        Ok(self.sums[y1 * s + x1] + self.sums[y0 * s + x0] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0])
    }
}

/// Per-pixel class probabilities; every pixel sums to 1 within 1e-5.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub const SUM_TOLERANCE: f32 = 1e-5;

    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if classes < 2 {
            return Err(invalid(format!("probability map needs >= 2 classes, got {classes}")));
        }
        if data.len() != height * width * classes {
            return Err(shape(format!(
                "{} values for a {height}x{width}x{classes} probability map",
                data.len()
            )));
        }
        for px in data.chunks_exact(classes) {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(invalid(format!("probability outside [0, 1]: {px:?}")));
            }
            let s: f32 = px.iter().sum();
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(invalid(format!("probabilities sum to {s}")));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    /// Two-class map from wire probabilities; background is the complement.
    pub fn from_wire(height: usize, width: usize, wire: &[f32]) -> Result<Self> {
        if wire.len() != height * width {
            return Err(shape(format!("{} wire values for {height}x{width}", wire.len())));
        }
        let mut data = Vec::with_capacity(wire.len() * 2);
        for &p in wire {
            let p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
            data.push(1.0 - p);
            data.push(p);
        }
        Self::new(height, width, 2, data)
    }

    pub(crate) fn from_parts(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * classes);
        Self {
            height,
            width,
            classes,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, class: usize) -> f32 {
        self.data[(y * self.width + x) * self.classes + class]
    }

    #[inline]
    pub fn wire(&self, y: usize, x: usize) -> f32 {
        self.get(y, x, WIRE)
    }

    /// Wire-class probabilities in row-major order.
    pub fn wire_channel(&self) -> Vec<f32> {
        self.data.iter().skip(WIRE).step_by(self.classes).copied().collect()
    }

    pub fn crop(&self, win: &WindowSpec) -> Result<ProbMap> {
        win.check_within(self.height, self.width)?;
        let k = self.classes;
        let mut data = Vec::with_capacity(win.h * win.w * k);
        for y in win.y..win.y + win.h {
            let start = (y * self.width + win.x) * k;
            data.extend_from_slice(&self.data[start..start + win.w * k]);
        }
        Ok(Self::from_parts(win.h, win.w, k, data))
    }
}

/// Unnormalized per-pixel class scores produced by a segmenter.
///
/// Unlike [`ImageBuf`] the samples are unbounded; they only need to be finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl LogitMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if classes < 2 {
            return Err(invalid(format!("logit map needs >= 2 classes, got {classes}")));
        }
        if data.len() != height * width * classes {
            return Err(shape(format!(
                "{} logits for a {height}x{width}x{classes} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite logit"));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    /// Builds a map from planar (class-major) double-precision scores.
    pub fn from_planar(height: usize, width: usize, classes: usize, planar: &[f64]) -> Result<Self> {
        let n = height * width;
        if planar.len() != n * classes {
            return Err(shape(format!(
                "{} planar logits for {height}x{width}x{classes}",
                planar.len()
            )));
        }
        let mut data = vec![0.0f32; n * classes];
        for c in 0..classes {
            for i in 0..n {
                data[i * classes + c] = planar[c * n + i] as f32;
            }
        }
        Self::new(height, width, classes, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(invalid(format!("empty raster {height}x{width}")));
    }
    Ok(())
}

pub(crate) fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(shape(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}
