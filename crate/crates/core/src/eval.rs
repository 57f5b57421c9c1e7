//! Segmentation and inpainting metrics and report emission.
//!
//! Dataset-level scores pool pixel counts across images (micro-average).

use std::collections::BTreeMap;
use std::io::Write;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::{same_dims, ImageBuf, MaskBuf};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Pixel counts with wire as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl<'a> Sum<&'a ConfusionCounts> for ConfusionCounts {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// `num / den`, with 0/0 scored 1 when prediction and truth are both empty.
fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, self.both_empty())
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, self.both_empty())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.both_empty())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.both_empty())
    }

    pub fn metrics(&self) -> SegMetrics {
        SegMetrics {
            iou: self.iou(),
            f1: self.f1(),
            precision: self.precision(),
            recall: self.recall(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The F1 score implied by an IoU: `2·IoU / (1 + IoU)`.
pub fn f1_from_iou(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

pub fn confusion(pred: &MaskBuf, gt: &MaskBuf) -> Result<ConfusionCounts> {
    same_dims(pred.dims(), gt.dims())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Image-area classes used for stratified IoU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const SMALL_MAX_AREA: u64 = 3000 * 3000;
    pub const MEDIUM_MAX_AREA: u64 = 6000 * 6000;

    pub fn of(height: usize, width: usize) -> Self {
        let area = height as u64 * width as u64;
        if area <= Self::SMALL_MAX_AREA {
            SizeBucket::Small
        } else if area <= Self::MEDIUM_MAX_AREA {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
        }
    }
}

/// Pooled IoU per size bucket; buckets without images are absent.
pub fn bucketed_iou(results: &[(ConfusionCounts, (usize, usize))]) -> BTreeMap<SizeBucket, f64> {
    let mut pooled: BTreeMap<SizeBucket, ConfusionCounts> = BTreeMap::new();
    for (c, (h, w)) in results {
        *pooled.entry(SizeBucket::of(*h, *w)).or_default() += *c;
    }
    pooled.into_iter().map(|(b, c)| (b, c.iou())).collect()
}

fn check_images(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    same_dims(a.dims(), b.dims())?;
    if a.channels() != b.channels() {
        return Err(invalid(format!("{} vs {} channels", a.channels(), b.channels())));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log10(1/MSE)` over all samples, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_images(a, b)?;
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(psnr_from_mse(se / a.data().len() as f64))
}

/// PSNR restricted to pixels where `mask` is set; `None` for an empty mask.
pub fn psnr_masked(a: &ImageBuf, b: &ImageBuf, mask: &MaskBuf) -> Result<Option<f64>> {
    check_images(a, b)?;
    same_dims(a.dims(), mask.dims())?;
    let ch = a.channels();
    let (mut se, mut n) = (0.0f64, 0usize);
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v == 1) {
        for c in 0..ch {
            se += (f64::from(a.data()[i * ch + c]) - f64::from(b.data()[i * ch + c])).powi(2);
        }
        n += ch;
    }
    Ok((n > 0).then(|| psnr_from_mse(se / n as f64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReportRow {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub counts: ConfusionCounts,
    pub metrics: SegMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub rows: Vec<SegReportRow>,
    pub pooled: ConfusionCounts,
    pub summary: SegMetrics,
    pub buckets: BTreeMap<SizeBucket, f64>,
}

impl SegReport {
    pub fn new(rows: Vec<SegReportRow>) -> Self {
        let pooled: ConfusionCounts = rows.iter().map(|r| r.counts).sum();
        let buckets = bucketed_iou(&rows.iter().map(|r| (r.counts, (r.height, r.width))).collect::<Vec<_>>());
        Self {
            summary: pooled.metrics(),
            pooled,
            buckets,
            rows,
        }
    }

    pub fn from_pairs<'a>(items: impl IntoIterator<Item = (String, &'a MaskBuf, &'a MaskBuf)>) -> Result<Self> {
        let rows = items
            .into_iter()
            .map(|(name, pred, gt)| {
                let counts = confusion(pred, gt)?;
                Ok(SegReportRow {
                    name,
                    height: gt.height(),
                    width: gt.width(),
                    metrics: counts.metrics(),
                    counts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(rows))
    }

    /// One row per image followed by `pooled` and per-bucket summary rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "name",
            "height",
            "width",
            "tp",
            "fp",
            "fn",
            "tn",
            "iou",
            "f1",
            "precision",
            "recall",
        ])?;
        let row = |w: &mut csv::Writer<_>, name: &str, h: String, wd: String, c: &ConfusionCounts, m: &SegMetrics| {
            w.write_record([
                name.to_string(),
                h,
                wd,
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                m.iou.to_string(),
                m.f1.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
            ])
        };
        for r in &self.rows {
            row(
                &mut w,
                &r.name,
                r.height.to_string(),
                r.width.to_string(),
                &r.counts,
                &r.metrics,
            )?;
        }
        row(
            &mut w,
            "pooled",
            String::new(),
            String::new(),
            &self.pooled,
            &self.summary,
        )?;
        for bucket in [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large] {
            if let Some(iou) = self.buckets.get(&bucket) {
                w.write_record([
                    format!("bucket:{}", bucket.name()),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    iou.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintReportRow {
    pub name: String,
    pub psnr: f64,
    /// PSNR inside the wire mask, when one was supplied and is non-empty.
    pub psnr_masked: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintReport {
    pub rows: Vec<InpaintReportRow>,
    pub mean_psnr: f64,
    pub mean_psnr_masked: Option<f64>,
}

impl InpaintReport {
    pub fn new(rows: Vec<InpaintReportRow>) -> Self {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let all: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        let masked: Vec<f64> = rows.iter().filter_map(|r| r.psnr_masked).collect();
        Self {
            mean_psnr: mean(&all).unwrap_or(f64::NAN),
            mean_psnr_masked: mean(&masked),
            rows,
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "psnr", "psnr_masked"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.name.clone(), r.psnr.to_string(), opt(r.psnr_masked)])?;
        }
        w.write_record([
            "mean".to_string(),
            self.mean_psnr.to_string(),
            opt(self.mean_psnr_masked),
        ])?;
        w.flush()?;
        Ok(())
    }
}
