//! End-to-end two-stage inference and the segment-then-inpaint removal flow.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::imagecore::{argmax_classes, resize_probs, softmax_logits, ImageBuf, LogitMap, MaskBuf, ProbMap};
use crate::inpaint::{tile_inpaint, Inpainter, TileInpaintOutcome};
use crate::model::{
    fine_input_at, global_coarse_input, minmax_channels, Segmenter, DEFAULT_MINMAX_KERNEL, NUM_CLASSES,
};
use crate::tiling::{gate_windows, gen_windows, MergeAccumulator, WindowSpec};

/// Every tunable constant of segmentation and removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub p_train: usize,
    pub p_infer: usize,
    pub alpha: f64,
    /// Sliding-window stride; `None` means `p_infer`.
    pub stride: Option<usize>,
    pub minmax_kernel: usize,
    pub lambda: f64,
    pub inpaint_tile: usize,
    pub inpaint_overlap: usize,
    pub onion_d: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            p_train: 512,
            p_infer: 1024,
            alpha: 0.01,
            stride: None,
            minmax_kernel: DEFAULT_MINMAX_KERNEL,
            lambda: 1.0,
            inpaint_tile: 512,
            inpaint_overlap: 32,
            onion_d: 7,
        }
    }
}

impl PipelineConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.p_infer)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("p_train", self.p_train),
            ("p_infer", self.p_infer),
            ("stride", self.stride()),
            ("minmax_kernel", self.minmax_kernel),
            ("inpaint_tile", self.inpaint_tile),
            ("onion_d", self.onion_d),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.stride() > self.p_infer {
            return Err(invalid(format!(
                "stride {} exceeds patch {}",
                self.stride(),
                self.p_infer
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(invalid(format!("lambda {} must be positive", self.lambda)));
        }
        if self.inpaint_overlap >= self.inpaint_tile {
            return Err(invalid(format!(
                "inpaint overlap {} must be smaller than tile {}",
                self.inpaint_overlap, self.inpaint_tile
            )));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub coarse: f64,
    pub gating: f64,
    pub fine: f64,
    pub merge: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub prob: ProbMap,
    pub mask: MaskBuf,
    /// Argmax of the upsampled coarse prediction, used for gating.
    pub coarse_mask: MaskBuf,
    pub windows_total: usize,
    pub windows_refined: usize,
    pub refined: Vec<WindowSpec>,
    pub timings: StageTimings,
}

fn check_logits(logits: &LogitMap, h: usize, w: usize) -> Result<()> {
    if logits.dims() != (h, w) || logits.classes() != NUM_CLASSES {
        return Err(shape(format!(
            "segmenter returned {}x{}x{} logits for a {h}x{w} input",
            logits.height(),
            logits.width(),
            logits.classes()
        )));
    }
    Ok(())
}

/// Coarse stage output shared by every gating threshold.
struct CoarseStage {
    extrema: ImageBuf,
    p_up: ProbMap,
    coarse_mask: MaskBuf,
    windows: Vec<WindowSpec>,
    seconds: f64,
}

fn coarse_stage(img: &ImageBuf, model: &dyn Segmenter, cfg: &PipelineConfig) -> Result<CoarseStage> {
    cfg.validate()?;
    if img.channels() != 3 {
        return Err(invalid(format!(
            "expected an RGB image, got {} channels",
            img.channels()
        )));
    }
    let start = Instant::now();
    let (h, w) = img.dims();
    let p = cfg.p_infer;
    let extrema = minmax_channels(img, cfg.minmax_kernel)?;
    let logits = model.coarse_forward(&global_coarse_input(img, &extrema, p)?)?;
    check_logits(&logits, p, p)?;
    let p_up = resize_probs(&softmax_logits(&logits)?, h, w)?;
    let coarse_mask = argmax_classes(&p_up);
    Ok(CoarseStage {
        windows: gen_windows(h, w, p, cfg.stride())?,
        extrema,
        p_up,
        coarse_mask,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn fine_patch(img: &ImageBuf, stage: &CoarseStage, model: &dyn Segmenter, win: &WindowSpec) -> Result<ProbMap> {
    let run = || -> Result<ProbMap> {
        let input = fine_input_at(img, &stage.extrema, &stage.p_up, win)?;
        let logits = model.fine_forward(&input, win)?;
        check_logits(&logits, win.h, win.w)?;
        softmax_logits(&logits)
    };
    run().map_err(|e| Error::AtWindow {
        window: *win,
        source: Box::new(e),
    })
}

/// Runs the fine module on `windows` in parallel, yielding results in
/// window order. Work is chunked to bound the number of live patches.
fn fine_stage(
    img: &ImageBuf,
    stage: &CoarseStage,
    model: &dyn Segmenter,
    windows: &[WindowSpec],
    mut sink: impl FnMut(&WindowSpec, ProbMap) -> Result<()>,
) -> Result<f64> {
    let start = Instant::now();
    let chunk = rayon::current_num_threads().max(1) * 2;
    for group in windows.chunks(chunk) {
        let probs: Vec<Result<ProbMap>> = group.par_iter().map(|w| fine_patch(img, stage, model, w)).collect();
        for (w, p) in group.iter().zip(probs) {
            sink(w, p?)?;
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

fn finish(
    stage: &CoarseStage,
    accepted: Vec<WindowSpec>,
    acc: MergeAccumulator,
    mut timings: StageTimings,
    start: Instant,
) -> Result<SegmentationResult> {
    let t = Instant::now();
    let prob = acc.finalize(&stage.p_up)?;
    let mask = argmax_classes(&prob);
    timings.merge += t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();
    Ok(SegmentationResult {
        prob,
        mask,
        coarse_mask: stage.coarse_mask.clone(),
        windows_total: stage.windows.len(),
        windows_refined: accepted.len(),
        refined: accepted,
        timings,
    })
}

/// Downsample, coarse prediction, α-gated fine refinement, merge, argmax.
/// Pixels outside every refined window keep the upsampled coarse
/// probability.
pub fn segment(img: &ImageBuf, model: &dyn Segmenter, cfg: &PipelineConfig) -> Result<SegmentationResult> {
    let start = Instant::now();
    let stage = coarse_stage(img, model, cfg)?;
    let t = Instant::now();
    let gate = gate_windows(&stage.windows, &stage.coarse_mask, cfg.alpha)?;
    let mut timings = StageTimings {
        coarse: stage.seconds,
        gating: t.elapsed().as_secs_f64(),
        ..StageTimings::default()
    };
    let (h, w) = img.dims();
    let mut acc = MergeAccumulator::new(h, w, NUM_CLASSES);
    let mut merge = 0.0;
    timings.fine = fine_stage(img, &stage, model, &gate.accepted, |win, p| {
        let t = Instant::now();
        acc.merge_patch(win, &p)?;
        merge += t.elapsed().as_secs_f64();
        Ok(())
    })?;
    timings.fine -= merge;
    timings.merge = merge;
    finish(&stage, gate.accepted, acc, timings, start)
}

/// Segments once per threshold in `alphas`, sharing the coarse pass and
/// every fine prediction between thresholds. Gating never alters the
/// prediction of an accepted window, so each result equals a separate
/// [`segment`] call apart from timings.
pub fn segment_alpha_sweep(
    img: &ImageBuf,
    model: &dyn Segmenter,
    cfg: &PipelineConfig,
    alphas: &[f64],
) -> Result<Vec<SegmentationResult>> {
    let start = Instant::now();
    let stage = coarse_stage(img, model, cfg)?;
    let gates = alphas
        .iter()
        .map(|&a| gate_windows(&stage.windows, &stage.coarse_mask, a))
        .collect::<Result<Vec<_>>>()?;
    let needed: Vec<WindowSpec> = stage
        .windows
        .iter()
        .filter(|w| gates.iter().any(|g| g.accepted.contains(w)))
        .copied()
        .collect();
    let (h, w) = img.dims();
    let mut accs: Vec<MergeAccumulator> = alphas
        .iter()
        .map(|_| MergeAccumulator::new(h, w, NUM_CLASSES))
        .collect();
    let fine = fine_stage(img, &stage, model, &needed, |win, p| {
        for (acc, gate) in accs.iter_mut().zip(&gates) {
            if gate.accepted.contains(win) {
                acc.merge_patch(win, &p)?;
            }
        }
        Ok(())
    })?;
    gates
        .into_iter()
        .zip(accs)
        .map(|(gate, acc)| {
            let timings = StageTimings {
                coarse: stage.seconds,
                fine,
                ..StageTimings::default()
            };
            finish(&stage, gate.accepted, acc, timings, start)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalResult {
    pub image: ImageBuf,
    pub segmentation: SegmentationResult,
    pub inpaint: TileInpaintOutcome,
}

/// Segments wires and inpaints them away. Pixels outside the predicted
/// mask are returned unchanged.
pub fn remove(
    img: &ImageBuf,
    model: &dyn Segmenter,
    inpainter: &dyn Inpainter,
    cfg: &PipelineConfig,
) -> Result<RemovalResult> {
    let segmentation = segment(img, model, cfg)?;
    let inpaint = tile_inpaint(
        img,
        &segmentation.mask,
        inpainter,
        cfg.inpaint_tile,
        cfg.inpaint_overlap,
        cfg.onion_d,
    )?;
    Ok(RemovalResult {
        image: inpaint.image.clone(),
        segmentation,
        inpaint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub windows_total: usize,
    pub windows_refined: usize,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub alpha: f64,
    pub rows: Vec<ProfileRow>,
    pub avg_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub windows_refined: usize,
    pub windows_total: usize,
}

/// Times [`segment`] on every image.
pub fn profile(images: &[(String, ImageBuf)], model: &dyn Segmenter, cfg: &PipelineConfig) -> Result<ProfileReport> {
    if images.is_empty() {
        return Err(invalid("nothing to profile"));
    }
    let mut rows = Vec::with_capacity(images.len());
    for (name, img) in images {
        let r = segment(img, model, cfg)?;
        rows.push(ProfileRow {
            name: name.clone(),
            height: img.height(),
            width: img.width(),
            windows_total: r.windows_total,
            windows_refined: r.windows_refined,
            timings: r.timings,
        });
    }
    let secs: Vec<f64> = rows.iter().map(|r| r.timings.total).collect();
    Ok(ProfileReport {
        alpha: cfg.alpha,
        avg_seconds: secs.iter().sum::<f64>() / secs.len() as f64,
        min_seconds: secs.iter().copied().fold(f64::INFINITY, f64::min),
        max_seconds: secs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        windows_refined: rows.iter().map(|r| r.windows_refined).sum(),
        windows_total: rows.iter().map(|r| r.windows_total).sum(),
        rows,
    })
}

/// [`profile`] at each threshold in `alphas`.
pub fn profile_alphas(
    images: &[(String, ImageBuf)],
    model: &dyn Segmenter,
    cfg: &PipelineConfig,
    alphas: &[f64],
) -> Result<Vec<ProfileReport>> {
    alphas
        .iter()
        .map(|&alpha| profile(images, model, &PipelineConfig { alpha, ..cfg.clone() }))
        .collect()
}
