//! Ground-truth test double for the segmenter contract.

use super::{Segmenter, NUM_CLASSES};
use crate::error::{shape, Result};
use crate::imagecore::{footprint_max, ImageBuf, LogitMap, MaskBuf};
use crate::tiling::WindowSpec;

/// Logit magnitude the oracle emits for its chosen class.
pub const ORACLE_LOGIT: f32 = 10.0;

/// Returns confident logits that reproduce a known full-resolution mask:
/// the max-pooled mask for the coarse pass, the exact crop for the fine pass.
#[derive(Clone, Debug)]
pub struct OracleSegmenter {
    gt: MaskBuf,
}

impl OracleSegmenter {
    pub fn new(gt_full: MaskBuf) -> Self {
        Self { gt: gt_full }
    }

    pub fn mask(&self) -> &MaskBuf {
        &self.gt
    }
}

fn logits_for(mask: &MaskBuf) -> Result<LogitMap> {
    let data = mask
        .data()
        .iter()
        .flat_map(|&v| {
            if v == 1 {
                [-ORACLE_LOGIT, ORACLE_LOGIT]
            } else {
                [ORACLE_LOGIT, -ORACLE_LOGIT]
            }
        })
        .collect();
    LogitMap::new(mask.height(), mask.width(), NUM_CLASSES, data)
}

impl Segmenter for OracleSegmenter {
    fn coarse_forward(&self, input: &ImageBuf) -> Result<LogitMap> {
        logits_for(&footprint_max(&self.gt, input.height(), input.width())?)
    }

    fn fine_forward(&self, input: &ImageBuf, window: &WindowSpec) -> Result<LogitMap> {
        if (window.h, window.w) != input.dims() {
            return Err(shape(format!(
                "window {window} does not match a {}x{} input",
                input.height(),
                input.width()
            )));
        }
        logits_for(&self.gt.crop(window)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{argmax_classes, maxpool_downsample_mask, softmax_logits};

    #[test]
    fn coarse_matches_maxpool_and_fine_matches_crop() {
        let gt = MaskBuf::from_fn(96, 80, |y, x| y == 2 * x / 3 + 5).unwrap();
        let oracle = OracleSegmenter::new(gt.clone());
        for s in [8, 24, 64] {
            let input = ImageBuf::filled(s, s, 6, 0.0).unwrap();
            let got = argmax_classes(&softmax_logits(&oracle.coarse_forward(&input).unwrap()).unwrap());
            assert_eq!(got, maxpool_downsample_mask(&gt, s, s).unwrap());
        }
        let win = WindowSpec::new(10, 20, 30, 40).unwrap();
        let input = ImageBuf::filled(40, 30, 6, 0.0).unwrap();
        let got = argmax_classes(&softmax_logits(&oracle.fine_forward(&input, &win).unwrap()).unwrap());
        assert_eq!(got, gt.crop(&win).unwrap());
        assert!(oracle
            .fine_forward(&input, &WindowSpec::new(0, 0, 5, 5).unwrap())
            .is_err());
    }

    #[test]
    fn background_window_is_all_background() {
        let gt = MaskBuf::from_fn(64, 64, |y, _| y < 4).unwrap();
        let oracle = OracleSegmenter::new(gt);
        let win = WindowSpec::new(0, 32, 32, 32).unwrap();
        let logits = oracle
            .fine_forward(&ImageBuf::filled(32, 32, 6, 0.0).unwrap(), &win)
            .unwrap();
        assert!(argmax_classes(&softmax_logits(&logits).unwrap()).is_empty());
    }
}
