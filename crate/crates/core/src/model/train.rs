//! Training loop for [`TinyConvSegmenter`]: balanced sampling, optional
//! augmentation, and momentum SGD on `L_glo + λ·L_loc`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tiny::{Head, PreparedSample, Sgd, TinyConvSegmenter};
use super::{coarse_input_from_extrema, fine_input_from_extrema, LossReport, DEFAULT_MINMAX_KERNEL, NUM_CLASSES};
use crate::dataset::{
    apply_augment, derive_seed, AugmentParams, LabeledImage, PatchSampler, SamplePair, MIN_WIRE_FRACTION,
};
use crate::error::{invalid, Error, Result};
use crate::imagecore::{resize_probs_region, softmax_logits, LogitMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr·(1 − step/steps)^power`.
    Poly {
        power: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize, steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Poly { power } => base * (1.0 - step as f64 / steps.max(1) as f64).max(0.0).powf(power),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub schedule: LrSchedule,
    /// Side of both the downsampled global image and the local crop.
    pub patch: usize,
    pub min_frac: f64,
    pub max_tries: usize,
    pub minmax_kernel: usize,
    pub augment: bool,
    /// Gradients with a larger L2 norm are rescaled to it.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 0.01,
            momentum: 0.9,
            lambda: 1.0,
            schedule: LrSchedule::Constant,
            patch: 512,
            min_frac: MIN_WIRE_FRACTION,
            max_tries: 50,
            minmax_kernel: DEFAULT_MINMAX_KERNEL,
            augment: false,
            max_grad_norm: Some(10.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patch == 0 || self.minmax_kernel == 0 {
            return Err(invalid("batch size, patch and kernel must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!(
                "invalid optimizer settings lr={} momentum={}",
                self.lr, self.momentum
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.min_frac) {
            return Err(invalid("lambda must be non-negative and min_frac in [0, 1]"));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m.is_finite() && m > 0.0) {
                return Err(invalid(format!("gradient norm limit {m} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub losses: Vec<LossReport>,
    pub fallback_samples: usize,
}

impl TrainSummary {
    /// Mean total loss over the first and last `n` steps.
    pub fn head_tail_mean(&self, n: usize) -> Option<(f64, f64)> {
        if self.losses.is_empty() {
            return None;
        }
        let n = n.clamp(1, self.losses.len());
        let mean = |s: &[LossReport]| s.iter().map(|l| l.total).sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..n]), mean(&self.losses[self.losses.len() - n..])))
    }
}

/// Builds planar network inputs for one sample pair. The fine condition
/// is the current coarse prediction, upsampled to full resolution and
/// cropped at the local window; it is not differentiated through.
pub fn prepare_sample(model: &TinyConvSegmenter, pair: &SamplePair) -> Result<PreparedSample> {
    let coarse = coarse_input_from_extrema(&pair.global_image, &pair.global_extrema)?;
    let (gh, gw) = coarse.dims();
    let coarse_planar = coarse.to_planar_f64();
    let logits = model.forward_planar(&coarse_planar, gh, gw, Head::Coarse);
    let p_glo = softmax_logits(&LogitMap::from_planar(gh, gw, NUM_CLASSES, &logits)?)?;
    let cond = resize_probs_region(&p_glo, pair.full_height, pair.full_width, &pair.window)?;
    let fine = fine_input_from_extrema(&pair.local_image, &pair.local_extrema, &cond)?;
    Ok(PreparedSample {
        coarse_input: coarse_planar,
        coarse_target: pair.global_mask.clone(),
        fine_input: fine.to_planar_f64(),
        fine_target: pair.local_mask.clone(),
    })
}

fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// One momentum-SGD update on a prepared batch.
pub fn sgd_step(
    model: &mut TinyConvSegmenter,
    opt: &mut Sgd,
    batch: &[PreparedSample],
    lambda: f64,
) -> Result<LossReport> {
    let (report, grad) = model.loss_and_grad(batch, lambda)?;
    if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite loss: glo={} loc={} total={} grad_norm={} lr={} batch={}",
            report.loss_glo,
            report.loss_loc,
            report.total,
            grad_norm(&grad),
            opt.lr,
            batch.len()
        )));
    }
    opt.apply(model.params_mut(), &grad);
    Ok(report)
}

/// Trains `model` in place. Step `t` draws its batch from a generator
/// seeded by `(cfg.seed, t)`, so the batch order is fixed by the seed.
pub fn train(
    model: &mut TinyConvSegmenter,
    data: &[LabeledImage],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("no training images"));
    }
    let samplers = data
        .iter()
        .map(|d| {
            PatchSampler::new(
                &d.image,
                &d.mask,
                cfg.patch,
                cfg.min_frac,
                cfg.max_tries,
                cfg.minmax_kernel,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, model.params().len());
    opt.max_grad_norm = cfg.max_grad_norm;
    let mut summary = TrainSummary::default();
    for step in 0..cfg.steps {
        let step_seed = derive_seed(cfg.seed, step as u64);
        let frozen = &*model;
        let batch = (0..cfg.batch_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, i as u64));
                let sampler = &samplers[rng.gen_range(0..samplers.len())];
                let mut pair = sampler.sample(&mut rng)?;
                if cfg.augment {
                    pair = apply_augment(&pair, &AugmentParams::draw(&mut rng))?;
                }
                let fallback = pair.fallback;
                Ok((prepare_sample(frozen, &pair)?, fallback))
            })
            .collect::<Result<Vec<_>>>()?;
        summary.fallback_samples += batch.iter().filter(|(_, f)| *f).count();
        let batch: Vec<PreparedSample> = batch.into_iter().map(|(s, _)| s).collect();
        opt.lr = cfg.schedule.rate(cfg.lr, step, cfg.steps);
        let report = sgd_step(model, &mut opt, &batch, cfg.lambda)?;
        on_step(step, &report);
        summary.losses.push(report);
    }
    summary.steps = cfg.steps;
    Ok(summary)
}
