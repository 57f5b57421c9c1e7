//! Binary dilation with a square structuring element and the onion-peel ring.

use crate::error::{invalid, Result};
use crate::imagecore::filters::window_start;
use crate::imagecore::MaskBuf;

/// Square `d×d` dilation, anchored like the rank filters. Pixels outside the
/// canvas count as background.
pub fn dilate(mask: &MaskBuf, d: usize) -> Result<MaskBuf> {
    if d == 0 {
        return Err(invalid("dilation size must be >= 1"));
    }
    let (h, w) = mask.dims();
    let lo = window_start(d);
    let hi = lo + d as isize - 1;
    let src = mask.data();
    let mut rows = vec![0u8; h * w];
    for y in 0..h {
        spread(&src[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w], lo, hi);
    }
    let mut col_in = vec![0u8; h];
    let mut col_out = vec![0u8; h];
    let mut out = vec![0u8; h * w];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = rows[y * w + x];
        }
        spread(&col_in, &mut col_out, lo, hi);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    Ok(MaskBuf::from_parts(h, w, out))
}

/// `dst[i] = max(src[i + lo ..= i + hi])` with zero padding, via prefix counts.
fn spread(src: &[u8], dst: &mut [u8], lo: isize, hi: isize) {
    let n = src.len() as isize;
    let mut prefix = Vec::with_capacity(src.len() + 1);
    prefix.push(0u32);
    for &v in src {
        prefix.push(prefix.last().unwrap() + u32::from(v));
    }
    for (i, d) in dst.iter_mut().enumerate() {
        let a = (i as isize + lo).clamp(0, n) as usize;
        let b = (i as isize + hi + 1).clamp(0, n) as usize;
        *d = u8::from(prefix[b] > prefix[a]);
    }
}

/// The band `dilate(mask, d) AND NOT mask` just outside the mask.
pub fn onion_ring(mask: &MaskBuf, d: usize) -> Result<MaskBuf> {
    dilate(mask, d)?.difference(mask)
}
