//! Tile-based inpainting over sparse wire masks with onion-peel color
//! correction and exact compositing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::imagecore::{onion_ring, same_dims, ImageBuf, MaskBuf};
use crate::tiling::{gen_windows, WindowSpec};

/// A pluggable hole-filling backend.
///
/// `fill` returns an RGB image the size of `patch`. Pixels outside `mask`
/// are expected to equal the input; callers composite regardless.
pub trait Inpainter: Sync {
    fn fill(&self, patch: &ImageBuf, mask: &MaskBuf) -> Result<ImageBuf>;
}

impl<I: Inpainter + ?Sized> Inpainter for &I {
    fn fill(&self, patch: &ImageBuf, mask: &MaskBuf) -> Result<ImageBuf> {
        (**self).fill(patch, mask)
    }
}

impl<I: Inpainter + ?Sized> Inpainter for Box<I> {
    fn fill(&self, patch: &ImageBuf, mask: &MaskBuf) -> Result<ImageBuf> {
        (**self).fill(patch, mask)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionOutcome {
    pub image: ImageBuf,
    pub iterations: usize,
    pub converged: bool,
    /// The mask covered every pixel, so there was no boundary to diffuse
    /// from and holes were set to the patch mean.
    pub degenerate: bool,
}

/// Harmonic fill: masked pixels are repeatedly replaced by the mean of
/// their in-image 4-neighbours (Jacobi sweeps) with unmasked pixels held
/// fixed, until the largest change drops below `tol` or `iters` sweeps ran.
pub fn diffusion_fill(patch: &ImageBuf, mask: &MaskBuf, iters: usize, tol: f32) -> Result<DiffusionOutcome> {
    same_dims(patch.dims(), mask.dims())?;
    let (h, w, ch) = (patch.height(), patch.width(), patch.channels());
    let holes: Vec<usize> = (0..h * w).filter(|&i| mask.data()[i] == 1).collect();
    if holes.is_empty() {
        return Ok(DiffusionOutcome {
            image: patch.clone(),
            iterations: 0,
            converged: true,
            degenerate: false,
        });
    }
    let mut data = patch.data().to_vec();
    let mean_of = |pred: &dyn Fn(usize) -> bool| {
        let mut sum = vec![0.0f64; ch];
        let mut n = 0usize;
        for i in (0..h * w).filter(|&i| pred(i)) {
            n += 1;
            for c in 0..ch {
                sum[c] += f64::from(data[i * ch + c]);
            }
        }
        sum.into_iter().map(|s| (s / n as f64) as f32).collect::<Vec<_>>()
    };
    if holes.len() == h * w {
        let mean = mean_of(&|_| true);
        for i in 0..h * w {
            data[i * ch..(i + 1) * ch].copy_from_slice(&mean);
        }
        return Ok(DiffusionOutcome {
            image: ImageBuf::from_clamped(h, w, ch, data)?,
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }
    let mean = mean_of(&|i| mask.data()[i] == 0);
    for &i in &holes {
        data[i * ch..(i + 1) * ch].copy_from_slice(&mean);
    }
    let neighbours: Vec<([usize; 4], usize)> = holes
        .iter()
        .map(|&i| {
            let (y, x) = (i / w, i % w);
            let mut nb = [0; 4];
            let mut n = 0;
            for (ok, j) in [
                (y > 0, i.wrapping_sub(w)),
                (y + 1 < h, i + w),
                (x > 0, i.wrapping_sub(1)),
                (x + 1 < w, i + 1),
            ] {
                if ok {
                    nb[n] = j;
                    n += 1;
                }
            }
            (nb, n)
        })
        .collect();
    let mut next = vec![0.0f32; holes.len() * ch];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < iters {
        iterations += 1;
        let mut max_change = 0.0f32;
        for (k, (&i, (nb, n))) in holes.iter().zip(&neighbours).enumerate() {
            for c in 0..ch {
                let s: f32 = nb[..*n].iter().map(|&j| data[j * ch + c]).sum();
                let v = s / *n as f32;
                max_change = max_change.max((v - data[i * ch + c]).abs());
                next[k * ch + c] = v;
            }
        }
        for (k, &i) in holes.iter().enumerate() {
            data[i * ch..(i + 1) * ch].copy_from_slice(&next[k * ch..(k + 1) * ch]);
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(DiffusionOutcome {
        image: ImageBuf::from_clamped(h, w, ch, data)?,
        iterations,
        converged,
        degenerate: false,
    })
}

/// Reference inpainter built on [`diffusion_fill`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionInpainter {
    pub max_iters: usize,
    pub tol: f32,
}

impl Default for DiffusionInpainter {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-4,
        }
    }
}

impl Inpainter for DiffusionInpainter {
    fn fill(&self, patch: &ImageBuf, mask: &MaskBuf) -> Result<ImageBuf> {
        Ok(diffusion_fill(patch, mask, self.max_iters, self.tol)?.image)
    }
}

/// Per-channel offset between input and inpainted output on the ring
/// just outside the mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorBias {
    pub bias: Vec<f64>,
    pub ring_pixels: usize,
}

impl ColorBias {
    pub fn zero(channels: usize) -> Self {
        Self {
            bias: vec![0.0; channels],
            ring_pixels: 0,
        }
    }
}

fn check_pair(x: &ImageBuf, y: &ImageBuf, mask: &MaskBuf) -> Result<()> {
    same_dims(x.dims(), y.dims())?;
    same_dims(x.dims(), mask.dims())?;
    if x.channels() != y.channels() {
        return Err(shape(format!("{} vs {} channels", x.channels(), y.channels())));
    }
    Ok(())
}

/// `Bias_c = mean over the onion ring of (x_c − y_c)`; zero on an empty ring.
pub fn color_bias(x: &ImageBuf, y: &ImageBuf, mask: &MaskBuf, d: usize) -> Result<ColorBias> {
    check_pair(x, y, mask)?;
    let ring = onion_ring(mask, d)?;
    let ch = x.channels();
    let mut out = ColorBias::zero(ch);
    for (i, _) in ring.data().iter().enumerate().filter(|(_, &v)| v == 1) {
        out.ring_pixels += 1;
        for c in 0..ch {
            out.bias[c] += f64::from(x.data()[i * ch + c]) - f64::from(y.data()[i * ch + c]);
        }
    }
    if out.ring_pixels > 0 {
        out.bias.iter_mut().for_each(|b| *b /= out.ring_pixels as f64);
    }
    Ok(out)
}

/// `x` outside the mask, `clamp(y + bias)` inside it.
pub fn apply_bias_and_composite(x: &ImageBuf, y: &ImageBuf, mask: &MaskBuf, bias: &ColorBias) -> Result<ImageBuf> {
    check_pair(x, y, mask)?;
    let ch = x.channels();
    if bias.bias.len() != ch {
        return Err(shape(format!(
            "bias for {} channels on a {ch}-channel image",
            bias.bias.len()
        )));
    }
    let mut data = x.data().to_vec();
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v == 1) {
        for c in 0..ch {
            let v = f64::from(y.data()[i * ch + c]) + bias.bias[c];
            data[i * ch + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    ImageBuf::new(x.height(), x.width(), ch, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileInpaintOutcome {
    pub image: ImageBuf,
    pub tiles_total: usize,
    pub tiles_processed: usize,
    /// Windows of the processed tiles, in processing order.
    pub processed: Vec<WindowSpec>,
}

fn inpaint_one(
    img: &ImageBuf,
    mask: &MaskBuf,
    inpainter: &dyn Inpainter,
    win: &WindowSpec,
    d: usize,
) -> Result<ImageBuf> {
    let at = |e: Error| Error::AtTile {
        tile: *win,
        source: Box::new(e),
    };
    let x = img.crop(win)?;
    let m = mask.crop(win)?;
    let y = inpainter.fill(&x, &m).map_err(at)?;
    if y.dims() != x.dims() || y.channels() != x.channels() {
        return Err(at(shape(format!(
            "inpainter returned {}x{}x{} for a {}x{}x{} tile",
            y.height(),
            y.width(),
            y.channels(),
            x.height(),
            x.width(),
            x.channels()
        ))));
    }
    let bias = color_bias(&x, &y, &m, d)?;
    apply_bias_and_composite(&x, &y, &m, &bias)
}

/// Processes exactly the given tiles (skipping those without mask pixels)
/// and averages overlapping results on masked pixels.
pub fn tile_inpaint_with_tiles(
    img: &ImageBuf,
    mask: &MaskBuf,
    inpainter: &dyn Inpainter,
    tiles: &[WindowSpec],
    onion_d: usize,
) -> Result<TileInpaintOutcome> {
    same_dims(img.dims(), mask.dims())?;
    if img.channels() != 3 {
        return Err(invalid(format!(
            "expected an RGB image, got {} channels",
            img.channels()
        )));
    }
    let counts = mask.integral();
    let mut processed = Vec::new();
    for t in tiles {
        if counts.count(t)? > 0 {
            processed.push(*t);
        }
    }
    let (h, w) = img.dims();
    let ch = img.channels();
    // masked pixels get a compact slot in the accumulators
    let mut slot = vec![u32::MAX; h * w];
    let mut n_masked = 0u32;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v == 1) {
        slot[i] = n_masked;
        n_masked += 1;
    }
    let mut sum = vec![0.0f64; n_masked as usize * ch];
    let mut hits = vec![0u32; n_masked as usize];

    let batch = rayon::current_num_threads().max(1) * 2;
    for chunk in processed.chunks(batch) {
        let results: Vec<Result<ImageBuf>> = chunk
            .par_iter()
            .map(|win| inpaint_one(img, mask, inpainter, win, onion_d))
            .collect();
        for (win, res) in chunk.iter().zip(results) {
            let out = res?;
            for ty in 0..win.h {
                for tx in 0..win.w {
                    let s = slot[(win.y + ty) * w + win.x + tx];
                    if s == u32::MAX {
                        continue;
                    }
                    hits[s as usize] += 1;
                    for c in 0..ch {
                        sum[s as usize * ch + c] += f64::from(out.get(ty, tx, c));
                    }
                }
            }
        }
    }

    let mut data = img.data().to_vec();
    for (i, &s) in slot.iter().enumerate() {
        if s == u32::MAX || hits[s as usize] == 0 {
            continue;
        }
        let n = f64::from(hits[s as usize]);
        for c in 0..ch {
            data[i * ch + c] = (sum[s as usize * ch + c] / n) as f32;
        }
    }
    Ok(TileInpaintOutcome {
        image: ImageBuf::new(h, w, ch, data)?,
        tiles_total: tiles.len(),
        tiles_processed: processed.len(),
        processed,
    })
}

/// Inpaints `mask` over `img` with `tile×tile` tiles at stride
/// `tile − overlap`; tiles without mask pixels are skipped.
pub fn tile_inpaint(
    img: &ImageBuf,
    mask: &MaskBuf,
    inpainter: &dyn Inpainter,
    tile: usize,
    overlap: usize,
    onion_d: usize,
) -> Result<TileInpaintOutcome> {
    if tile == 0 || overlap >= tile {
        return Err(invalid(format!("overlap {overlap} must be smaller than tile {tile}")));
    }
    if onion_d == 0 {
        return Err(invalid("onion ring size must be positive"));
    }
    let tiles = gen_windows(img.height(), img.width(), tile, tile - overlap)?;
    tile_inpaint_with_tiles(img, mask, inpainter, &tiles, onion_d)
}
