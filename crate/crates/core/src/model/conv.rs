//! 3×3 "same" convolution on planar (channel-major) `f64` activations,
//! lowered to GEMM through an im2col buffer. Output rows are processed in
//! bands so the column buffer stays bounded for megapixel inputs.

pub(crate) const KSIZE: usize = 3;
const TAPS: usize = KSIZE * KSIZE;
/// Upper bound on im2col buffer elements per band.
const BAND_BUDGET: usize = 1 << 21;

/// `c = a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn band_rows(c_in: usize, w: usize) -> usize {
    (BAND_BUDGET / (c_in * TAPS * w).max(1)).max(1)
}

/// Gathers the 3×3 neighbourhoods of output rows `r0..r1` into
/// `cols[(c·9 + tap)·n + j]`, zero outside the image.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, r0: usize, r1: usize, cols: &mut [f64]) {
    let n = (r1 - r0) * w;
    for c in 0..c_in {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let dst = &mut cols[(c * TAPS + ky * KSIZE + kx) * n..][..n];
                for (row, y) in (r0..r1).enumerate() {
                    let d = &mut dst[row * w..(row + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let s = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            d[0] = 0.0;
                            d[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => d.copy_from_slice(s),
                        _ => {
                            d[..w - 1].copy_from_slice(&s[1..]);
                            d[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input gradient.
fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize, r0: usize, r1: usize, grad_in: &mut [f64]) {
    let n = (r1 - r0) * w;
    for c in 0..c_in {
        let plane = &mut grad_in[c * h * w..(c + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let src = &cols[(c * TAPS + ky * KSIZE + kx) * n..][..n];
                for (row, y) in (r0..r1).enumerate() {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g = &src[row * w..(row + 1) * w];
                    let d = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => d[..w - 1].iter_mut().zip(&g[1..]).for_each(|(a, b)| *a += b),
                        1 => d.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                        _ => d[1..].iter_mut().zip(&g[..w - 1]).for_each(|(a, b)| *a += b),
                    }
                }
            }
        }
    }
}

/// Shape of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * TAPS
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.c_out
    }
}

/// `out = conv(input) + bias`; `weight` is `c_out × c_in × 3 × 3`.
pub(crate) fn conv_forward(
    shape: ConvShape,
    input: &[f64],
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let ConvShape { c_in, c_out } = shape;
    let hw = h * w;
    debug_assert_eq!(input.len(), c_in * hw);
    debug_assert_eq!(out.len(), c_out * hw);
    let kdim = c_in * TAPS;
    let band = band_rows(c_in, w);
    let mut cols = vec![0.0; kdim * band.min(h) * w];
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + band).min(h);
        let n = (r1 - r0) * w;
        im2col(input, c_in, h, w, r0, r1, &mut cols);
        gemm(
            c_out,
            kdim,
            n,
            weight,
            (kdim, 1),
            &cols[..kdim * n],
            (n, 1),
            0.0,
            &mut out[r0 * w..],
            (hw, 1),
        );
        r0 = r1;
    }
    for (o, &b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates weight and bias gradients, and writes the input gradient
/// when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    shape: ConvShape,
    input: &[f64],
    h: usize,
    w: usize,
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let ConvShape { c_in, c_out } = shape;
    let hw = h * w;
    let kdim = c_in * TAPS;
    for o in 0..c_out {
        grad_bias[o] += grad_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    if let Some(g) = grad_in.as_deref_mut() {
        g.fill(0.0);
    }
    let band = band_rows(c_in, w);
    let mut cols = vec![0.0; kdim * band.min(h) * w];
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + band).min(h);
        let n = (r1 - r0) * w;
        im2col(input, c_in, h, w, r0, r1, &mut cols);
        // dW (c_out × kdim) += dOut_band (c_out × n) · colsᵀ (n × kdim)
        gemm(
            c_out,
            n,
            kdim,
            &grad_out[r0 * w..],
            (hw, 1),
            &cols[..kdim * n],
            (1, n),
            1.0,
            grad_weight,
            (kdim, 1),
        );
        if let Some(g) = grad_in.as_deref_mut() {
            // dCols (kdim × n) = Wᵀ (kdim × c_out) · dOut_band (c_out × n)
            gemm(
                kdim,
                c_out,
                n,
                weight,
                (1, kdim),
                &grad_out[r0 * w..],
                (hw, 1),
                0.0,
                &mut cols[..kdim * n],
                (n, 1),
            );
            col2im(&cols[..kdim * n], c_in, h, w, r0, r1, g);
        }
        r0 = r1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Direct 7-loop convolution.
    fn naive(shape: ConvShape, input: &[f64], h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; shape.c_out * h * w];
        for o in 0..shape.c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..shape.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    acc += weight[((o * shape.c_in + c) * 3 + ky) * 3 + kx]
                                        * input[(c * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn random(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (h, w, c_in, c_out) in [(5, 7, 2, 3), (1, 1, 1, 1), (9, 4, 6, 16), (3, 2, 16, 2)] {
            let shape = ConvShape { c_in, c_out };
            let input = random(&mut rng, c_in * h * w);
            let weight = random(&mut rng, shape.weight_len());
            let bias = random(&mut rng, c_out);
            let mut out = vec![0.0; c_out * h * w];
            conv_forward(shape, &input, h, w, &weight, &bias, &mut out);
            let want = naive(shape, &input, h, w, &weight, &bias);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_adjoint_identity() {
        // <conv(x), g> is linear in x and in W, so its gradients can be
        // checked exactly against the forward pass.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (6, 5);
        let shape = ConvShape { c_in: 3, c_out: 4 };
        let input = random(&mut rng, 3 * h * w);
        let weight = random(&mut rng, shape.weight_len());
        let zero_bias = vec![0.0; 4];
        let g = random(&mut rng, 4 * h * w);
        let mut gw = vec![0.0; shape.weight_len()];
        let mut gb = vec![0.0; 4];
        let mut gi = vec![0.0; input.len()];
        conv_backward(shape, &input, h, w, &weight, &g, &mut gw, &mut gb, Some(&mut gi));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let f = |x: &[f64], wt: &[f64]| {
            let mut out = vec![0.0; 4 * h * w];
            conv_forward(shape, x, h, w, wt, &zero_bias, &mut out);
            dot(&out, &g)
        };
        let base = f(&input, &weight);
        assert!((dot(&gi, &input) - base).abs() < 1e-9);
        assert!((dot(&gw, &weight) - base).abs() < 1e-9);
        for o in 0..4 {
            let s: f64 = g[o * h * w..(o + 1) * h * w].iter().sum();
            assert!((gb[o] - s).abs() < 1e-12);
        }
    }
}
