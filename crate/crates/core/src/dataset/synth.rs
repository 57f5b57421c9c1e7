//! Synthetic wire scenes: smooth backgrounds crossed by anti-aliased
//! parabolic strokes, with exact coverage masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::{ImageBuf, MaskBuf};

pub const MIN_SCENE_SIDE: usize = 64;
/// Scenes denser than this are rejected; wires are sparse.
pub const MAX_WIRE_FRACTION: f64 = 0.2;
/// Sub-samples per pixel axis used to estimate stroke coverage.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDescriptor {
    pub color_a: [f32; 3],
    pub color_b: [f32; 3],
    /// Gradient direction in radians.
    pub angle: f32,
    pub noise_amplitude: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDescriptor {
    /// `true` if the curve is parameterised along x (spans left to right).
    pub horizontal: bool,
    /// Normalized cross-axis position of the curve at both ends.
    pub ends: [f32; 2],
    /// Normalized mid-span deviation from the chord.
    pub sag: f32,
    pub thickness: f32,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub n_wires: usize,
    pub thickness_range: (f32, f32),
    pub seed: u64,
    pub background: BackgroundDescriptor,
    pub wires: Vec<WireDescriptor>,
    pub wire_fraction: f64,
}

/// A rendered scene with its wire mask and the wire-free background.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub image: ImageBuf,
    pub clean: ImageBuf,
    pub mask: MaskBuf,
    pub params: SceneParams,
}

impl WireDescriptor {
    /// Cross-axis position (normalized) and its slope at `u ∈ [0, 1]`.
    fn curve(&self, u: f64) -> (f64, f64) {
        let (e0, e1, s) = (f64::from(self.ends[0]), f64::from(self.ends[1]), f64::from(self.sag));
        // y = a·u² + b·u + c through both ends, deviating by `sag` at u = 0.5
        let a = -4.0 * s;
        let b = e1 - e0 + 4.0 * s;
        (a * u * u + b * u + e0, 2.0 * a * u + b)
    }
}

fn draw_background(rng: &mut ChaCha8Rng) -> BackgroundDescriptor {
    let base: f32 = rng.gen_range(0.35..0.85);
    let mut color = || {
        let mut c = [0.0f32; 3];
        for v in &mut c {
            *v = (base + rng.gen_range(-0.15..0.15)).clamp(0.05, 0.95);
        }
        c
    };
    let color_a = color();
    let color_b = color();
    BackgroundDescriptor {
        color_a,
        color_b,
        angle: rng.gen_range(0.0..std::f32::consts::TAU),
        noise_amplitude: rng.gen_range(0.0..0.04),
    }
}

fn draw_wire(rng: &mut ChaCha8Rng, thickness: (f32, f32)) -> WireDescriptor {
    let dark = rng.gen_bool(0.7);
    let level: f32 = if dark {
        rng.gen_range(0.03..0.25)
    } else {
        rng.gen_range(0.85..0.98)
    };
    let mut color = [0.0f32; 3];
    for v in &mut color {
        *v = (level + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
    }
    WireDescriptor {
        horizontal: rng.gen_bool(0.5),
        ends: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
        sag: rng.gen_range(-0.15..0.15),
        thickness: if thickness.0 == thickness.1 {
            thickness.0
        } else {
            rng.gen_range(thickness.0..thickness.1)
        },
        color,
    }
}

fn render_background(h: usize, w: usize, bg: &BackgroundDescriptor, waves: &[(f64, f64, f64, f64)]) -> Vec<f32> {
    let (dx, dy) = (f64::from(bg.angle).cos(), f64::from(bg.angle).sin());
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 - w as f64 / 2.0, y as f64 - h as f64 / 2.0);
            let t = ((fx * dx + fy * dy) / diag + 0.5).clamp(0.0, 1.0) as f32;
            let noise: f64 = waves
                .iter()
                .map(|&(kx, ky, phase, amp)| amp * (kx * x as f64 + ky * y as f64 + phase).sin())
                .sum();
            for c in 0..3 {
                let v = bg.color_a[c] * (1.0 - t) + bg.color_b[c] * t + noise as f32;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    data
}

/// Blends one wire into `image` and marks pixels it covers by more than half.
fn render_wire(h: usize, w: usize, wire: &WireDescriptor, image: &mut [f32], coverage_mask: &mut [u8]) {
    let (along_len, cross_len) = if wire.horizontal { (w, h) } else { (h, w) };
    let half = f64::from(wire.thickness) / 2.0;
    let step = 1.0 / SUPERSAMPLE as f64;
    for i in 0..along_len {
        let u_mid = (i as f64 + 0.5) / along_len as f64;
        let (c_mid, slope_mid) = wire.curve(u_mid);
        let dslope = slope_mid * cross_len as f64 / along_len as f64;
        let reach = half * (1.0 + dslope * dslope).sqrt() + 2.0 + dslope.abs();
        let centre = c_mid * cross_len as f64;
        let lo = (centre - reach).floor().max(0.0) as usize;
        let hi = ((centre + reach).ceil() as usize).min(cross_len.saturating_sub(1));
        if lo > hi || centre + reach < 0.0 {
            continue;
        }
        for j in lo..=hi {
            let mut hits = 0usize;
            for a in 0..SUPERSAMPLE {
                let t = i as f64 + (a as f64 + 0.5) * step;
                let (c, slope) = wire.curve(t / along_len as f64);
                let d_cross = slope * cross_len as f64 / along_len as f64;
                let norm = (1.0 + d_cross * d_cross).sqrt();
                let pos = c * cross_len as f64;
                for b in 0..SUPERSAMPLE {
                    let s = j as f64 + (b as f64 + 0.5) * step;
                    if ((s - pos) / norm).abs() <= half {
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let cov = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            let (y, x) = if wire.horizontal { (j, i) } else { (i, j) };
            let px = &mut image[(y * w + x) * 3..(y * w + x + 1) * 3];
            for (v, &col) in px.iter_mut().zip(&wire.color) {
                *v = (*v * (1.0 - cov) + col * cov).clamp(0.0, 1.0);
            }
            if cov > 0.5 {
                coverage_mask[y * w + x] = 1;
            }
        }
    }
}

/// Renders a deterministic scene for `seed`.
pub fn synth_scene(h: usize, w: usize, n_wires: usize, thickness_range: (f32, f32), seed: u64) -> Result<SynthScene> {
    if h < MIN_SCENE_SIDE || w < MIN_SCENE_SIDE {
        return Err(invalid(format!(
            "scene {h}x{w} smaller than {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}"
        )));
    }
    let (tmin, tmax) = thickness_range;
    if !(tmin.is_finite() && tmax.is_finite()) || tmin < 1.0 || tmin > tmax || f64::from(tmax) > h.min(w) as f64 / 8.0 {
        return Err(invalid(format!(
            "impossible thickness range {tmin}..{tmax} for {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = draw_background(&mut rng);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let period = rng.gen_range(0.25..1.0) * h.max(w) as f64;
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / period;
            (
                k * theta.cos(),
                k * theta.sin(),
                rng.gen_range(0.0..std::f64::consts::TAU),
                f64::from(background.noise_amplitude) / 3.0,
            )
        })
        .collect();
    let wires: Vec<WireDescriptor> = (0..n_wires).map(|_| draw_wire(&mut rng, thickness_range)).collect();

    let clean = render_background(h, w, &background, &waves);
    let mut image = clean.clone();
    let mut mask = vec![0u8; h * w];
    for wire in &wires {
        render_wire(h, w, wire, &mut image, &mut mask);
    }
    let mask = MaskBuf::new(h, w, mask)?;
    let wire_fraction = mask.fraction();
    if wire_fraction > MAX_WIRE_FRACTION {
        return Err(invalid(format!(
            "{n_wires} wires cover {wire_fraction:.3} of the scene, above {MAX_WIRE_FRACTION}"
        )));
    }
    Ok(SynthScene {
        image: ImageBuf::new(h, w, 3, image)?,
        clean: ImageBuf::new(h, w, 3, clean)?,
        mask,
        params: SceneParams {
            height: h,
            width: w,
            n_wires,
            thickness_range,
            seed,
            background,
            wires,
            wire_fraction,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_wires_means_empty_mask() {
        let s = synth_scene(96, 80, 0, (2.0, 3.0), 1).unwrap();
        assert!(s.mask.is_empty());
        assert_eq!(s.image, s.clean);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_scene(128, 128, 3, (2.0, 4.0), 99).unwrap();
        let b = synth_scene(128, 128, 3, (2.0, 4.0), 99).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(128, 128, 3, (2.0, 4.0), 100).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn single_thin_wire_fraction() {
        for seed in 0..20 {
            let s = synth_scene(512, 512, 1, (3.0, 3.0), seed).unwrap();
            let f = s.mask.fraction();
            assert!((0.001..=0.02).contains(&f), "seed {seed}: {f}");
            assert_eq!(f, s.params.wire_fraction);
        }
    }

    #[test]
    fn mask_marks_changed_pixels_only() {
        let s = synth_scene(200, 150, 4, (2.0, 5.0), 7).unwrap();
        for y in 0..200 {
            for x in 0..150 {
                if s.mask.get(y, x) {
                    assert_ne!(s.image.pixel(y, x), s.clean.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_scene(32, 128, 1, (2.0, 3.0), 0).is_err());
        assert!(synth_scene(128, 128, 1, (3.0, 2.0), 0).is_err());
        assert!(synth_scene(128, 128, 1, (0.5, 2.0), 0).is_err());
        assert!(synth_scene(128, 128, 1, (2.0, 40.0), 0).is_err());
        // far too many thick wires for a small canvas
        assert!(synth_scene(64, 64, 60, (7.0, 8.0), 0).is_err());
    }
}
