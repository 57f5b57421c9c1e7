//! Bilinear resampling of images and probability maps, and footprint-max
//! downsampling of binary labels.

use crate::error::{invalid, Result};
use crate::imagecore::{ImageBuf, MaskBuf, ProbMap};
use crate::tiling::WindowSpec;

/// Source taps and weight for one output coordinate.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f32,
}

/// Half-pixel-center mapping from `out_len` output samples onto `src_len`
/// source samples, restricted to outputs `start..start + len`.
fn axis_taps(src_len: usize, out_len: usize, start: usize, len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / out_len as f64;
    (start..start + len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = s.floor() as usize;
            if i0 >= src_len - 1 {
                Tap {
                    i0: src_len - 1,
                    i1: src_len - 1,
                    frac: 0.0,
                }
            } else {
                Tap {
                    i0,
                    i1: i0 + 1,
                    frac: (s - i0 as f64) as f32,
                }
            }
        })
        .collect()
}

/// Bilinear interpolation of an interleaved raster onto the `out_h×out_w`
/// grid, evaluated only inside `region` of that grid.
fn bilinear_region(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
    region: &WindowSpec,
) -> Vec<f32> {
    let row_len = region.w * channels;
    let mut out = vec![0.0f32; region.h * row_len];
    bilinear_rows(src, (src_h, src_w), channels, (out_h, out_w), region, |y, row| {
        out[y * row_len..(y + 1) * row_len].copy_from_slice(row)
    });
    out
}

/// Row-at-a-time form of the bilinear resampler: `emit` receives each
/// interleaved output row of `region`, indexed from the region's top.
pub(crate) fn bilinear_rows(
    src: &[f32],
    (src_h, src_w): (usize, usize),
    channels: usize,
    (out_h, out_w): (usize, usize),
    region: &WindowSpec,
    mut emit: impl FnMut(usize, &[f32]),
) {
    let ys = axis_taps(src_h, out_h, region.y, region.h);
    let xs = axis_taps(src_w, out_w, region.x, region.w);
    let row_len = region.w * channels;
    // horizontal pass of one source row, reused by consecutive output rows
    let horizontal = |r: usize, buf: &mut [f32]| {
        let row = &src[r * src_w * channels..(r + 1) * src_w * channels];
        match channels {
            1 => horizontal_pass::<1>(row, &xs, buf),
            2 => horizontal_pass::<2>(row, &xs, buf),
            3 => horizontal_pass::<3>(row, &xs, buf),
            _ => {
                for (tx, px) in xs.iter().zip(buf.chunks_exact_mut(channels)) {
                    let (a, b) = (
                        &row[tx.i0 * channels..][..channels],
                        &row[tx.i1 * channels..][..channels],
                    );
                    for ((d, &a), &b) in px.iter_mut().zip(a).zip(b) {
                        *d = a + tx.frac * (b - a);
                    }
                }
            }
        }
    };
    let mut line = vec![0.0f32; row_len];
    let (mut top, mut bottom) = (vec![0.0f32; row_len], vec![0.0f32; row_len]);
    let (mut top_row, mut bottom_row) = (usize::MAX, usize::MAX);
    for (y, ty) in ys.iter().enumerate() {
        if top_row != ty.i0 {
            if bottom_row == ty.i0 {
                std::mem::swap(&mut top, &mut bottom);
                std::mem::swap(&mut top_row, &mut bottom_row);
            } else {
                horizontal(ty.i0, &mut top);
                top_row = ty.i0;
            }
        }
        if bottom_row != ty.i1 {
            horizontal(ty.i1, &mut bottom);
            bottom_row = ty.i1;
        }
        for ((d, &t), &b) in line.iter_mut().zip(&top).zip(&bottom) {
            *d = (t + ty.frac * (b - t)).clamp(0.0, 1.0);
        }
        emit(y, &line);
    }
}

fn horizontal_pass<const C: usize>(row: &[f32], xs: &[Tap], buf: &mut [f32]) {
    let px: &[[f32; C]] = row_pixels(row);
    for (tx, d) in xs.iter().zip(buf.chunks_exact_mut(C)) {
        let (a, b) = (px[tx.i0], px[tx.i1]);
        for c in 0..C {
            d[c] = a[c] + tx.frac * (b[c] - a[c]);
        }
    }
}

fn row_pixels<const C: usize>(row: &[f32]) -> &[[f32; C]] {
    let (chunks, rest) = row.as_chunks::<C>();
    debug_assert!(rest.is_empty());
    chunks
}

fn check_target(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid(format!("zero target dimension {out_h}x{out_w}")));
    }
    Ok(())
}

/// Bilinear resize with half-pixel-center alignment. No low-pass prefilter
/// is applied when downsampling.
pub fn bilinear_resize(img: &ImageBuf, out_h: usize, out_w: usize) -> Result<ImageBuf> {
    check_target(out_h, out_w)?;
    if img.dims() == (out_h, out_w) {
        return Ok(img.clone());
    }
    let full = WindowSpec::full(out_h, out_w);
    let data = bilinear_region(
        img.data(),
        img.height(),
        img.width(),
        img.channels(),
        out_h,
        out_w,
        &full,
    );
    Ok(ImageBuf::from_parts(out_h, out_w, img.channels(), data))
}

/// Bilinear resize of a probability map. Interpolation is a convex
/// combination, so per-pixel sums are preserved.
pub fn resize_probs(p: &ProbMap, out_h: usize, out_w: usize) -> Result<ProbMap> {
    check_target(out_h, out_w)?;
    resize_probs_region(p, out_h, out_w, &WindowSpec::full(out_h, out_w))
}

/// The `region` crop of `resize_probs(p, out_h, out_w)`, computed without
/// materializing the full upsampled map.
pub fn resize_probs_region(p: &ProbMap, out_h: usize, out_w: usize, region: &WindowSpec) -> Result<ProbMap> {
    check_target(out_h, out_w)?;
    region.check_within(out_h, out_w)?;
    if p.dims() == (out_h, out_w) {
        return p.crop(region);
    }
    let data = bilinear_region(p.data(), p.height(), p.width(), p.classes(), out_h, out_w, region);
    Ok(ProbMap::from_parts(region.h, region.w, p.classes(), data))
}

/// Source rows (or columns) `[lo, hi]` covered by output cell `i` when
/// mapping `src_len` onto `out_len`; neighbouring footprints overlap at
/// fractional boundaries so every source index is covered.
#[inline]
pub fn footprint(i: usize, src_len: usize, out_len: usize) -> (usize, usize) {
    let lo = i * src_len / out_len;
    let hi = ((i + 1) * src_len).div_ceil(out_len) - 1;
    (lo, hi.min(src_len - 1))
}

/// Downsamples a label mask with a max over each output cell's footprint,
/// so no annotated pixel disappears.
pub fn maxpool_downsample_mask(mask: &MaskBuf, out_h: usize, out_w: usize) -> Result<MaskBuf> {
    check_target(out_h, out_w)?;
    let (h, w) = mask.dims();
    if out_h > h || out_w > w {
        return Err(invalid(format!("maxpool cannot upscale {h}x{w} to {out_h}x{out_w}")));
    }
    footprint_max(mask, out_h, out_w)
}

/// Footprint max without the no-upscaling restriction.
pub(crate) fn footprint_max(mask: &MaskBuf, out_h: usize, out_w: usize) -> Result<MaskBuf> {
    check_target(out_h, out_w)?;
    let (h, w) = mask.dims();
    let src = mask.data();
    // columns first: h x out_w
    let xs: Vec<_> = (0..out_w).map(|j| footprint(j, w, out_w)).collect();
    let mut cols = vec![0u8; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (j, &(lo, hi)) in xs.iter().enumerate() {
            cols[y * out_w + j] = row[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u8; out_h * out_w];
    for i in 0..out_h {
        let (lo, hi) = footprint(i, h, out_h);
        for y in lo..=hi {
            for j in 0..out_w {
                out[i * out_w + j] |= cols[y * out_w + j];
            }
        }
    }
    Ok(MaskBuf::from_parts(out_h, out_w, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resize_is_exact() {
        let img = ImageBuf::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 105.0).unwrap();
        assert_eq!(bilinear_resize(&img, 5, 7).unwrap(), img);
        // the general path is exact at identity too
        let full = WindowSpec::full(5, 7);
        assert_eq!(bilinear_region(img.data(), 5, 7, 3, 5, 7, &full), img.data());
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageBuf::filled(13, 9, 2, 0.625).unwrap();
        for (h, w) in [(1, 1), (4, 31), (26, 18), (100, 3)] {
            let r = bilinear_resize(&img, h, w).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.625));
        }
    }

    #[test]
    fn checkerboard_to_single_pixel() {
        let img = ImageBuf::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = bilinear_resize(&img, 1, 1).unwrap();
        assert_eq!(r.data(), &[0.5]);
        assert!(bilinear_resize(&img, 0, 1).is_err());
    }

    #[test]
    fn region_matches_full_resize() {
        let p = ProbMap::from_wire(
            6,
            5,
            &[
                0.1, 0.9, 0.3, 0.0, 1.0, 0.2, 0.7, 0.5, 0.4, 0.6, 0.8, 0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75,
                0.85, 0.95, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,
            ],
        )
        .unwrap();
        let full = resize_probs(&p, 23, 17).unwrap();
        let win = WindowSpec::new(4, 9, 10, 7).unwrap();
        assert_eq!(resize_probs_region(&p, 23, 17, &win).unwrap(), full.crop(&win).unwrap());
        for px in full.data().chunks_exact(2) {
            assert!((px[0] + px[1] - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn maxpool_examples() {
        let z = MaskBuf::zeros(64, 64).unwrap();
        assert!(maxpool_downsample_mask(&z, 8, 8).unwrap().is_empty());

        let mut single = MaskBuf::zeros(1024, 1024).unwrap();
        single.set(517, 33, true);
        let d = maxpool_downsample_mask(&single, 64, 64).unwrap();
        assert_eq!(d.count_ones(), 1);
        assert!(d.get(517 / 16, 33 / 16));

        let line = MaskBuf::from_fn(64, 64, |y, _| y == 21).unwrap();
        let d = maxpool_downsample_mask(&line, 8, 8).unwrap();
        assert_eq!(d.count_ones(), 8);
        assert!((0..8).all(|x| d.get(2, x)));

        assert!(maxpool_downsample_mask(&z, 65, 64).is_err());
    }

    #[test]
    fn fractional_footprints_overlap() {
        assert_eq!(footprint(0, 10, 3), (0, 3));
        assert_eq!(footprint(1, 10, 3), (3, 6));
        assert_eq!(footprint(2, 10, 3), (6, 9));
        assert_eq!(footprint(3, 4, 4), (3, 3));
    }

    proptest! {
        #[test]
        fn maxpool_never_loses_annotation(
            bits in prop::collection::vec(prop::bool::weighted(0.05), 37 * 29),
            oh in 1usize..=37, ow in 1usize..=29,
        ) {
            let m = MaskBuf::from_fn(37, 29, |y, x| bits[y * 29 + x]).unwrap();
            let d = maxpool_downsample_mask(&m, oh, ow).unwrap();
            for y in 0..37 {
                for x in 0..29 {
                    if m.get(y, x) {
                        let covered = (0..oh).any(|i| {
                            let (r0, r1) = footprint(i, 37, oh);
                            (r0..=r1).contains(&y) && (0..ow).any(|j| {
                                let (c0, c1) = footprint(j, 29, ow);
                                (c0..=c1).contains(&x) && d.get(i, j)
                            })
                        });
                        prop_assert!(covered);
                    }
                }
            }
        }
    }
}
