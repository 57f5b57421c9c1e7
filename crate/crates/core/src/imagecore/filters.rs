//! Luminance and rank (min/max) filtering.
//!
//! The min/max filters use a square `k×k` window whose first row/column is
//! at offset `-(k-1)/2`, so an even `k = 6` spans `[i-2, i+3]`. Samples outside
//! the image are replaced by the nearest edge sample.

use crate::error::{invalid, Result};
use crate::imagecore::ImageBuf;

const REC709: [f32; 3] = [0.2126, 0.7152, 0.0722];

/// Rec.709 luminance of an RGB image.
pub fn luminance(img: &ImageBuf) -> Result<ImageBuf> {
    if img.channels() != 3 {
        return Err(invalid(format!("luminance needs 3 channels, got {}", img.channels())));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| (REC709[0] * px[0] + REC709[1] * px[1] + REC709[2] * px[2]).clamp(0.0, 1.0))
        .collect();
    Ok(ImageBuf::from_parts(img.height(), img.width(), 1, data))
}

pub fn min_filter(chan: &ImageBuf, k: usize) -> Result<ImageBuf> {
    rank_filter(chan, k, pick_min)
}

pub fn max_filter(chan: &ImageBuf, k: usize) -> Result<ImageBuf> {
    rank_filter(chan, k, pick_max)
}

/// `[min, max]` of one channel as a two-channel image; equal to stacking
/// [`min_filter`] and [`max_filter`].
pub fn min_max_filter(chan: &ImageBuf, k: usize) -> Result<ImageBuf> {
    check_rank(chan, k)?;
    let (h, w) = chan.dims();
    let mut out = vec![0.0f32; h * w * 2];
    let put = |out: &mut [f32], c: usize, y: usize, line: &[f32]| {
        for (px, &v) in out[y * w * 2..(y + 1) * w * 2].chunks_exact_mut(2).zip(line) {
            px[c] = v;
        }
    };
    rank_rows(chan.data(), h, w, k, pick_min, |y, line| put(&mut out, 0, y, line));
    rank_rows(chan.data(), h, w, k, pick_max, |y, line| put(&mut out, 1, y, line));
    Ok(ImageBuf::from_parts(h, w, 2, out))
}

#[inline]
fn pick_min(a: f32, b: f32) -> f32 {
    if b < a {
        b
    } else {
        a
    }
}

#[inline]
fn pick_max(a: f32, b: f32) -> f32 {
    if b > a {
        b
    } else {
        a
    }
}

/// Offset of the first window row/column relative to the anchor pixel.
#[inline]
pub(crate) fn window_start(k: usize) -> isize {
    -((k as isize - 1) / 2)
}

fn check_rank(chan: &ImageBuf, k: usize) -> Result<()> {
    if chan.channels() != 1 {
        return Err(invalid(format!("rank filter needs 1 channel, got {}", chan.channels())));
    }
    if k == 0 {
        return Err(invalid("kernel size must be >= 1"));
    }
    Ok(())
}

fn rank_filter(chan: &ImageBuf, k: usize, pick: impl Fn(f32, f32) -> f32 + Copy) -> Result<ImageBuf> {
    check_rank(chan, k)?;
    let (h, w) = chan.dims();
    let mut out = vec![0.0f32; h * w];
    rank_rows(chan.data(), h, w, k, pick, |y, line| {
        out[y * w..(y + 1) * w].copy_from_slice(line)
    });
    Ok(ImageBuf::from_parts(h, w, 1, out))
}

/// Separable `k×k` rank filter, emitting one finished output row at a time.
/// Each row is reduced vertically into the middle of a padded line, whose
/// ends replicate the edge samples, then reduced horizontally.
fn rank_rows(
    src: &[f32],
    h: usize,
    w: usize,
    k: usize,
    pick: impl Fn(f32, f32) -> f32 + Copy,
    mut emit: impl FnMut(usize, &[f32]),
) {
    let start = window_start(k);
    let pad = (-start) as usize;
    let mut padded = vec![0.0f32; w + k - 1];
    let mut line = vec![0.0f32; w];
    let source_row = |y: usize, j: usize| {
        let r = (y as isize + start + j as isize).clamp(0, h as isize - 1) as usize;
        &src[r * w..(r + 1) * w]
    };
    for y in 0..h {
        let mid = &mut padded[pad..pad + w];
        mid.copy_from_slice(source_row(y, 0));
        for j in 1..k {
            for (d, &v) in mid.iter_mut().zip(source_row(y, j)) {
                *d = pick(*d, v);
            }
        }
        let (left, right) = (padded[pad], padded[pad + w - 1]);
        padded[..pad].fill(left);
        padded[pad + w..].fill(right);
        line.copy_from_slice(&padded[..w]);
        for j in 1..k {
            for (v, &u) in line.iter_mut().zip(&padded[j..j + w]) {
                *v = pick(*v, u);
            }
        }
        emit(y, &line);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(H·W·k²) reference scan with edge replication.
    fn brute(chan: &ImageBuf, k: usize, want_max: bool) -> Vec<f32> {
        let (h, w) = chan.dims();
        let s = window_start(k);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = if want_max { f32::MIN } else { f32::MAX };
                for dy in 0..k as isize {
                    for dx in 0..k as isize {
                        let yy = (y as isize + s + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + s + dx).clamp(0, w as isize - 1) as usize;
                        let v = chan.get(yy, xx, 0);
                        acc = if want_max { acc.max(v) } else { acc.min(v) };
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn luminance_examples() {
        let black = ImageBuf::filled(2, 2, 3, 0.0).unwrap();
        assert!(luminance(&black).unwrap().data().iter().all(|&v| v == 0.0));
        let white = ImageBuf::filled(2, 2, 3, 1.0).unwrap();
        assert!(luminance(&white)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-6));
        let red = ImageBuf::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((luminance(&red).unwrap().data()[0] - 0.2126).abs() < 1e-7);
        assert!(luminance(&ImageBuf::filled(1, 1, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let c = ImageBuf::filled(9, 7, 1, 0.37).unwrap();
        assert_eq!(min_filter(&c, 6).unwrap(), c);
        assert_eq!(max_filter(&c, 6).unwrap(), c);
    }

    #[test]
    fn single_white_pixel() {
        let img = ImageBuf::from_fn(16, 16, 1, |y, x, _| if (y, x) == (8, 8) { 1.0 } else { 0.0 }).unwrap();
        let mx = max_filter(&img, 6).unwrap();
        // output (i,j) sees rows [i-2, i+3], so the block is rows/cols 5..=10
        for y in 0..16 {
            for x in 0..16 {
                let inside = (5..=10).contains(&y) && (5..=10).contains(&x);
                assert_eq!(mx.get(y, x, 0), if inside { 1.0 } else { 0.0 }, "({y},{x})");
            }
        }
        assert_eq!(mx.data(), brute(&img, 6, true).as_slice());
        assert!(min_filter(&img, 6).unwrap().data().iter().all(|&v| v == 0.0));

        // edge-clipped block near the corner
        let corner = ImageBuf::from_fn(8, 8, 1, |y, x, _| if (y, x) == (0, 1) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(
            max_filter(&corner, 6).unwrap().data(),
            brute(&corner, 6, true).as_slice()
        );
    }

    #[test]
    fn zero_kernel_rejected() {
        let c = ImageBuf::filled(3, 3, 1, 0.5).unwrap();
        assert!(min_filter(&c, 0).is_err());
        assert!(max_filter(&ImageBuf::filled(3, 3, 3, 0.5).unwrap(), 3).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            seed in any::<u64>(),
            k in prop::sample::select(vec![1usize, 2, 3, 6, 9]),
            h in 1usize..24,
            w in 1usize..24,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = ImageBuf::from_fn(h, w, 1, |_, _, _| rng.gen::<f32>()).unwrap();
            let mn = min_filter(&img, k).unwrap();
            let mx = max_filter(&img, k).unwrap();
            let (want_mn, want_mx) = (brute(&img, k, false), brute(&img, k, true));
            prop_assert_eq!(mn.data(), want_mn.as_slice());
            prop_assert_eq!(mx.data(), want_mx.as_slice());
            prop_assert_eq!(min_max_filter(&img, k).unwrap(), ImageBuf::stack(&[&mn, &mx]).unwrap());
            for i in 0..img.data().len() {
                prop_assert!(mn.data()[i] <= img.data()[i] && img.data()[i] <= mx.data()[i]);
            }
        }
    }
}
