//! Segmenter contract, six-channel input assembly and the two-branch loss.
//!
//! Input channel order is fixed: `[R, G, B, condition, minLum, maxLum]`.
//! The coarse pass uses an all-zero condition channel; the fine pass uses
//! the wire probability cropped from the upsampled coarse prediction.

mod checkpoint;
mod conv;
mod oracle;
mod tiny;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use oracle::{OracleSegmenter, ORACLE_LOGIT};
pub use tiny::{Head, PreparedSample, Sgd, TinyConvSegmenter};
pub use train::{prepare_sample, sgd_step, train, LrSchedule, TrainConfig, TrainSummary};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::imagecore::{
    bilinear_rows, luminance, min_max_filter, ImageBuf, LogitMap, MaskBuf, ProbMap, BACKGROUND, WIRE,
};
use crate::tiling::WindowSpec;

pub const INPUT_CHANNELS: usize = 6;
pub const NUM_CLASSES: usize = 2;
/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-7;
pub const DEFAULT_MINMAX_KERNEL: usize = 6;

/// A two-branch segmentation backend.
///
/// Both passes take a six-channel input and return two-class logits with
/// the same spatial size. `fine_forward` also receives the window the patch
/// was cut from; real backends can ignore it.
pub trait Segmenter: Sync {
    fn coarse_forward(&self, input: &ImageBuf) -> Result<LogitMap>;
    fn fine_forward(&self, input: &ImageBuf, window: &WindowSpec) -> Result<LogitMap>;
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn coarse_forward(&self, input: &ImageBuf) -> Result<LogitMap> {
        (**self).coarse_forward(input)
    }

    fn fine_forward(&self, input: &ImageBuf, window: &WindowSpec) -> Result<LogitMap> {
        (**self).fine_forward(input, window)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn coarse_forward(&self, input: &ImageBuf) -> Result<LogitMap> {
        (**self).coarse_forward(input)
    }

    fn fine_forward(&self, input: &ImageBuf, window: &WindowSpec) -> Result<LogitMap> {
        (**self).fine_forward(input, window)
    }
}

fn check_rgb(img: &ImageBuf) -> Result<()> {
    if img.channels() != 3 {
        return Err(invalid(format!(
            "expected an RGB image, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

/// `[minLum, maxLum]` of `img`: its luminance under a `k×k` min and max
/// filter, at the image's own resolution.
pub fn minmax_channels(img: &ImageBuf, kernel: usize) -> Result<ImageBuf> {
    check_rgb(img)?;
    min_max_filter(&luminance(img)?, kernel)
}

fn check_extrema(rgb: &ImageBuf, extrema: &ImageBuf) -> Result<()> {
    check_rgb(rgb)?;
    if extrema.channels() != 2 || extrema.dims() != rgb.dims() {
        return Err(shape(format!(
            "extrema {}x{}x{} for a {}x{} image",
            extrema.height(),
            extrema.width(),
            extrema.channels(),
            rgb.height(),
            rgb.width()
        )));
    }
    Ok(())
}

/// `[R, G, B, 0, minLum, maxLum]` for the downsampled global image.
pub fn assemble_coarse_input(img_ds: &ImageBuf, minmax_kernel: usize) -> Result<ImageBuf> {
    coarse_input_from_extrema(img_ds, &minmax_channels(img_ds, minmax_kernel)?)
}

/// Coarse input from an image and its [`minmax_channels`], both at the
/// target resolution.
pub fn coarse_input_from_extrema(rgb: &ImageBuf, extrema: &ImageBuf) -> Result<ImageBuf> {
    check_extrema(rgb, extrema)?;
    let zero = ImageBuf::filled(rgb.height(), rgb.width(), 1, 0.0)?;
    ImageBuf::stack(&[rgb, &zero, extrema])
}

/// Coarse input for a full-resolution image: the extrema are taken at full
/// resolution and downsampled bilinearly to `p×p` along with the colour, so
/// thin wires still register in the max channel.
pub fn global_coarse_input(img: &ImageBuf, extrema: &ImageBuf, p: usize) -> Result<ImageBuf> {
    check_extrema(img, extrema)?;
    if p == 0 {
        return Err(invalid("zero coarse resolution"));
    }
    if img.dims() == (p, p) {
        return coarse_input_from_extrema(img, extrema);
    }
    let mut out = vec![0.0f32; p * p * INPUT_CHANNELS];
    let region = WindowSpec::full(p, p);
    for (part, offset) in [(img, 0), (extrema, 4)] {
        let c = part.channels();
        bilinear_rows(part.data(), part.dims(), c, (p, p), &region, |y, row| {
            for (px, v) in out[y * p * INPUT_CHANNELS..(y + 1) * p * INPUT_CHANNELS]
                .chunks_exact_mut(INPUT_CHANNELS)
                .zip(row.chunks_exact(c))
            {
                px[offset..offset + c].copy_from_slice(v);
            }
        });
    }
    Ok(ImageBuf::from_parts(p, p, INPUT_CHANNELS, out))
}

/// `[R, G, B, P_wire, minLum, maxLum]` for a full-resolution patch and its
/// conditioning crop.
pub fn assemble_fine_input(patch: &ImageBuf, cond: &ProbMap, minmax_kernel: usize) -> Result<ImageBuf> {
    fine_input_from_extrema(patch, &minmax_channels(patch, minmax_kernel)?, cond)
}

/// Fine input from a patch, the matching crop of the full-resolution
/// extrema and the conditioning crop.
pub fn fine_input_from_extrema(patch: &ImageBuf, extrema: &ImageBuf, cond: &ProbMap) -> Result<ImageBuf> {
    check_extrema(patch, extrema)?;
    if cond.dims() != patch.dims() {
        return Err(shape(format!(
            "condition {}x{} for a {}x{} patch",
            cond.height(),
            cond.width(),
            patch.height(),
            patch.width()
        )));
    }
    let wire = ImageBuf::from_parts(cond.height(), cond.width(), 1, cond.wire_channel());
    ImageBuf::stack(&[patch, &wire, extrema])
}

/// [`fine_input_from_extrema`] for window `win` of full-resolution
/// buffers, read in place instead of through intermediate crops.
pub fn fine_input_at(img: &ImageBuf, extrema: &ImageBuf, p_up: &ProbMap, win: &WindowSpec) -> Result<ImageBuf> {
    check_extrema(img, extrema)?;
    if p_up.dims() != img.dims() {
        return Err(shape(format!(
            "probabilities {}x{} for a {}x{} image",
            p_up.height(),
            p_up.width(),
            img.height(),
            img.width()
        )));
    }
    let (h, w) = img.dims();
    win.check_within(h, w)?;
    let k = p_up.classes();
    let (rgb, ext, prob) = (img.data(), extrema.data(), p_up.data());
    let mut out = vec![0.0f32; win.h * win.w * INPUT_CHANNELS];
    for (dy, dst) in out.chunks_exact_mut(win.w * INPUT_CHANNELS).enumerate() {
        let (a, b) = ((win.y + dy) * w + win.x, (win.y + dy) * w + win.x + win.w);
        let pixels = dst
            .chunks_exact_mut(INPUT_CHANNELS)
            .zip(rgb[a * 3..b * 3].chunks_exact(3))
            .zip(prob[a * k..b * k].chunks_exact(k))
            .zip(ext[a * 2..b * 2].chunks_exact(2));
        for (((px, c), p), e) in pixels {
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
            px[3] = p[WIRE];
            px[4] = e[0];
            px[5] = e[1];
        }
    }
    Ok(ImageBuf::from_parts(win.h, win.w, INPUT_CHANNELS, out))
}

/// Mean per-pixel negative log-likelihood of the ground-truth class.
pub fn cross_entropy(p: &ProbMap, gt: &MaskBuf) -> Result<f64> {
    if p.dims() != gt.dims() {
        return Err(shape(format!(
            "probabilities {}x{} vs labels {}x{}",
            p.height(),
            p.width(),
            gt.height(),
            gt.width()
        )));
    }
    let k = p.classes();
    let total: f64 = p
        .data()
        .chunks_exact(k)
        .zip(gt.data())
        .map(|(px, &label)| {
            let class = if label == 1 { WIRE } else { BACKGROUND };
            -f64::from(px[class]).clamp(PROB_FLOOR, 1.0).ln()
        })
        .sum();
    Ok(total / gt.data().len() as f64)
}

/// Losses of both branches and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_glo: f64,
    pub loss_loc: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn new(loss_glo: f64, loss_loc: f64, lambda: f64) -> Self {
        Self {
            loss_glo,
            loss_loc,
            total: loss_glo + lambda * loss_loc,
            lambda,
        }
    }
}

pub fn total_loss(
    p_glo: &ProbMap,
    g_glo: &MaskBuf,
    p_loc: &ProbMap,
    g_loc: &MaskBuf,
    lambda: f64,
) -> Result<LossReport> {
    Ok(LossReport::new(
        cross_entropy(p_glo, g_glo)?,
        cross_entropy(p_loc, g_loc)?,
        lambda,
    ))
}
