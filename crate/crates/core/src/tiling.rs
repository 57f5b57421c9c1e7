//! Sliding-window layout, wire-fraction gating and overlap merging.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::imagecore::{ImageBuf, MaskBuf, ProbMap};

/// Axis-aligned window inside a host image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl WindowSpec {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(invalid(format!("window extent {w}x{h} must be positive")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            w: width,
            h: height,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(invalid(format!("window {self} outside a {height}x{width} image")));
        }
        Ok(())
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.h).contains(&y) && (self.x..self.x + self.w).contains(&x)
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x={}, y={}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

fn axis_origins(len: usize, p: usize, stride: usize) -> Vec<usize> {
    if len <= p {
        return vec![0];
    }
    let last = len - p;
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        origins.push(o.min(last));
        if o + p >= len {
            break;
        }
        o += stride;
    }
    origins
}

/// Row-major grid of `p×p` windows at `stride`. The last window on each axis
/// is pulled back so it ends at the image edge; axes shorter than `p` get a
/// single window spanning the whole axis.
pub fn gen_windows(height: usize, width: usize, p: usize, stride: usize) -> Result<Vec<WindowSpec>> {
    if p == 0 || stride == 0 || stride > p {
        return Err(invalid(format!(
            "need p >= 1 and 1 <= stride <= p, got p={p} stride={stride}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(invalid(format!("empty image {height}x{width}")));
    }
    let (wh, ww) = (p.min(height), p.min(width));
    let ys = axis_origins(height, p, stride);
    let xs = axis_origins(width, p, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| WindowSpec { x, y, w: ww, h: wh }))
        .collect())
}

/// Fraction of wire pixels inside `win`.
pub fn wire_fraction(mask: &MaskBuf, win: &WindowSpec) -> Result<f64> {
    win.check_within(mask.height(), mask.width())?;
    let count = mask.crop(win)?.count_ones();
    Ok(count as f64 / win.area() as f64)
}

/// Windows split by the refinement gate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateDecision {
    pub accepted: Vec<WindowSpec>,
    pub skipped: Vec<WindowSpec>,
}

/// Accepts windows whose coarse wire fraction is at least `alpha`.
/// `alpha = 0` accepts every window.
pub fn gate_windows(windows: &[WindowSpec], coarse_mask: &MaskBuf, alpha: f64) -> Result<GateDecision> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let table = coarse_mask.integral();
    let mut out = GateDecision::default();
    for win in windows {
        let frac = table.count(win)? as f64 / win.area() as f64;
        if frac >= alpha {
            out.accepted.push(*win);
        } else {
            out.skipped.push(*win);
        }
    }
    Ok(out)
}

pub fn extract_patch(img: &ImageBuf, win: &WindowSpec) -> Result<ImageBuf> {
    img.crop(win)
}

/// Running per-pixel sum and coverage count of overlapping patch predictions.
#[derive(Clone, Debug)]
pub struct MergeAccumulator {
    height: usize,
    width: usize,
    classes: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl MergeAccumulator {
    pub fn new(height: usize, width: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            classes,
            sum: vec![0.0; height * width * classes],
            count: vec![0; height * width],
        }
    }

    pub fn merge_patch(&mut self, win: &WindowSpec, patch: &ProbMap) -> Result<()> {
        win.check_within(self.height, self.width)?;
        if patch.dims() != (win.h, win.w) || patch.classes() != self.classes {
            return Err(shape(format!(
                "patch {}x{}x{} for window {win} with {} classes",
                patch.height(),
                patch.width(),
                patch.classes(),
                self.classes
            )));
        }
        let k = self.classes;
        let src = patch.data();
        for (dy, prow) in src.chunks_exact(win.w * k).enumerate() {
            let row = (win.y + dy) * self.width + win.x;
            for c in &mut self.count[row..row + win.w] {
                *c += 1;
            }
            for (a, &b) in self.sum[row * k..(row + win.w) * k].iter_mut().zip(prow) {
                *a += f64::from(b);
            }
        }
        Ok(())
    }

    pub fn coverage(&self, y: usize, x: usize) -> u32 {
        self.count[y * self.width + x]
    }

    /// Number of pixels no merged window has touched.
    pub fn uncovered(&self) -> usize {
        self.count.iter().filter(|&&c| c == 0).count()
    }

    /// Averages covered pixels; uncovered pixels take their value from `fill`.
    pub fn finalize(&self, fill: &ProbMap) -> Result<ProbMap> {
        if fill.dims() != (self.height, self.width) || fill.classes() != self.classes {
            return Err(shape(format!(
                "fill map {}x{}x{} for a {}x{}x{} accumulator",
                fill.height(),
                fill.width(),
                fill.classes(),
                self.height,
                self.width,
                self.classes
            )));
        }
        let k = self.classes;
        let mut data = fill.data().to_vec();
        for ((px, sum), &n) in data.chunks_exact_mut(k).zip(self.sum.chunks_exact(k)).zip(&self.count) {
            if n != 0 {
                let d = f64::from(n);
                for (v, s) in px.iter_mut().zip(sum) {
                    *v = ((s / d) as f32).clamp(0.0, 1.0);
                }
            }
        }
        Ok(ProbMap::from_parts(self.height, self.width, k, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn win(x: usize, y: usize, w: usize, h: usize) -> WindowSpec {
        WindowSpec::new(x, y, w, h).unwrap()
    }

    #[test]
    fn window_layout_examples() {
        assert_eq!(
            gen_windows(1024, 1024, 1024, 1024).unwrap(),
            vec![win(0, 0, 1024, 1024)]
        );
        let w = gen_windows(1536, 1536, 1024, 1024).unwrap();
        let origins: Vec<_> = w.iter().map(|w| (w.x, w.y)).collect();
        assert_eq!(origins, vec![(0, 0), (512, 0), (0, 512), (512, 512)]);
        assert_eq!(gen_windows(500, 500, 1024, 1024).unwrap(), vec![win(0, 0, 500, 500)]);
        assert_eq!(gen_windows(300, 2000, 1024, 1024).unwrap().len(), 2);
        assert!(gen_windows(10, 10, 4, 5).is_err());
        assert!(gen_windows(10, 10, 4, 0).is_err());
    }

    #[test]
    fn wire_fraction_examples() {
        let empty = MaskBuf::zeros(16, 16).unwrap();
        assert_eq!(wire_fraction(&empty, &win(0, 0, 16, 16)).unwrap(), 0.0);
        let full = MaskBuf::ones(16, 16).unwrap();
        assert_eq!(wire_fraction(&full, &win(4, 4, 8, 8)).unwrap(), 1.0);
        assert!(wire_fraction(&full, &win(10, 0, 8, 8)).is_err());

        let mut n = 0;
        let m = MaskBuf::from_fn(1024, 1024, |_, _| {
            n += 1;
            n <= 10_486
        })
        .unwrap();
        let f = wire_fraction(&m, &WindowSpec::full(1024, 1024)).unwrap();
        assert!((f - 10_486.0 / 1_048_576.0).abs() < 1e-15);
        assert!(f >= 0.01);
        let g = gate_windows(&[WindowSpec::full(1024, 1024)], &m, 0.01).unwrap();
        assert_eq!(g.accepted.len(), 1);
    }

    #[test]
    fn gate_examples() {
        let windows = gen_windows(64, 64, 16, 16).unwrap();
        let empty = MaskBuf::zeros(64, 64).unwrap();
        assert_eq!(gate_windows(&windows, &empty, 0.0).unwrap().accepted.len(), 16);
        assert!(gate_windows(&windows, &empty, 0.01).unwrap().accepted.is_empty());
        assert!(gate_windows(&windows, &empty, 1.5).is_err());

        // horizontal line through the second window row
        let line = MaskBuf::from_fn(64, 64, |y, _| y == 20).unwrap();
        let g = gate_windows(&windows, &line, 0.01).unwrap();
        assert_eq!(g.accepted.len() + g.skipped.len(), 16);
        for w in &windows {
            let touches = (w.y..w.y + w.h).contains(&20);
            assert_eq!(g.accepted.contains(w), touches);
        }
    }

    #[test]
    fn patch_extraction() {
        let img = ImageBuf::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32 / 16.0).unwrap();
        assert_eq!(extract_patch(&img, &WindowSpec::full(4, 4)).unwrap(), img);
        let p = extract_patch(&img, &win(1, 2, 2, 2)).unwrap();
        assert_eq!(p.data(), &[9.0 / 16.0, 10.0 / 16.0, 13.0 / 16.0, 14.0 / 16.0]);
        assert!(extract_patch(&img, &win(3, 3, 2, 1)).is_err());
    }

    #[test]
    fn merge_examples() {
        let fill = ProbMap::from_wire(4, 4, &[0.0; 16]).unwrap();
        let p = ProbMap::from_wire(4, 4, &(0..16).map(|i| i as f32 / 16.0).collect::<Vec<_>>()).unwrap();
        let mut acc = MergeAccumulator::new(4, 4, 2);
        acc.merge_patch(&WindowSpec::full(4, 4), &p).unwrap();
        assert_eq!(acc.finalize(&fill).unwrap(), p);

        let mut acc = MergeAccumulator::new(4, 4, 2);
        acc.merge_patch(&WindowSpec::full(4, 4), &ProbMap::from_wire(4, 4, &[0.2; 16]).unwrap())
            .unwrap();
        acc.merge_patch(&WindowSpec::full(4, 4), &ProbMap::from_wire(4, 4, &[0.8; 16]).unwrap())
            .unwrap();
        let m = acc.finalize(&fill).unwrap();
        assert!(m.wire_channel().iter().all(|v| (v - 0.5).abs() < 1e-6));

        let mut acc = MergeAccumulator::new(4, 4, 2);
        acc.merge_patch(&win(0, 0, 2, 2), &ProbMap::from_wire(2, 2, &[1.0; 4]).unwrap())
            .unwrap();
        assert_eq!(acc.uncovered(), 12);
        let m = acc.finalize(&ProbMap::from_wire(4, 4, &[0.3; 16]).unwrap()).unwrap();
        assert_eq!(m.wire(0, 0), 1.0);
        assert_eq!(m.wire(3, 3), 0.3);
        assert!(acc.merge_patch(&win(0, 0, 2, 2), &p).is_err());
    }

    #[test]
    fn merge_is_order_independent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (h, w) = (40, 50);
        let mut patches = Vec::new();
        for _ in 0..12 {
            let ww = rng.gen_range(1..=w);
            let wh = rng.gen_range(1..=h);
            let wi = win(rng.gen_range(0..=w - ww), rng.gen_range(0..=h - wh), ww, wh);
            let probs: Vec<f32> = (0..ww * wh).map(|_| rng.gen()).collect();
            patches.push((wi, ProbMap::from_wire(wh, ww, &probs).unwrap()));
        }
        let fill = ProbMap::from_wire(h, w, &vec![0.5; h * w]).unwrap();
        let run = |order: &[usize]| {
            let mut acc = MergeAccumulator::new(h, w, 2);
            for &i in order {
                acc.merge_patch(&patches[i].0, &patches[i].1).unwrap();
            }
            acc.finalize(&fill).unwrap()
        };
        let mut order: Vec<usize> = (0..patches.len()).collect();
        let a = run(&order);
        order.shuffle(&mut rng);
        let b = run(&order);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    proptest! {
        #[test]
        fn windows_cover_every_pixel(h in 1usize..90, w in 1usize..90, p in 1usize..40, s_frac in 0.0f64..1.0) {
            let stride = 1 + ((p - 1) as f64 * s_frac) as usize;
            let windows = gen_windows(h, w, p, stride).unwrap();
            let mut acc = MergeAccumulator::new(h, w, 2);
            for win in &windows {
                prop_assert!(win.check_within(h, w).is_ok());
                acc.merge_patch(win, &ProbMap::from_wire(win.h, win.w, &vec![0.25; win.area()]).unwrap()).unwrap();
            }
            prop_assert_eq!(acc.uncovered(), 0);
            let merged = acc.finalize(&ProbMap::from_wire(h, w, &vec![0.0; h * w]).unwrap()).unwrap();
            prop_assert!(merged.wire_channel().iter().all(|v| (v - 0.25).abs() < 1e-6));
        }

        #[test]
        fn gating_is_monotone(bits in prop::collection::vec(prop::bool::weighted(0.03), 48 * 48), a1 in 0.0f64..0.2, da in 0.0f64..0.2) {
            let m = MaskBuf::from_fn(48, 48, |y, x| bits[y * 48 + x]).unwrap();
            let windows = gen_windows(48, 48, 12, 9).unwrap();
            let lo = gate_windows(&windows, &m, a1).unwrap();
            let hi = gate_windows(&windows, &m, a1 + da).unwrap();
            prop_assert!(hi.accepted.iter().all(|w| lo.accepted.contains(w)));
            prop_assert_eq!(lo.accepted.len() + lo.skipped.len(), windows.len());
        }
    }
}
