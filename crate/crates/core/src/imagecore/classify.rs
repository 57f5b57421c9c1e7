use crate::error::Result;
use crate::imagecore::{LogitMap, MaskBuf, ProbMap, WIRE};

/// Per-pixel softmax across classes, evaluated in double precision.
pub fn softmax_logits(logits: &LogitMap) -> Result<ProbMap> {
    let k = logits.classes();
    if k == 2 {
        let mut data = vec![0.0f32; logits.data().len()];
        for (px, out) in logits.data().chunks_exact(2).zip(data.chunks_exact_mut(2)) {
            // the larger logit contributes exp(0) = 1
            let (a, b) = (px[0], px[1]);
            let e = (a.min(b) - a.max(b)).exp();
            let sum = 1.0 + e;
            let (hi, lo) = (1.0 / sum, e / sum);
            if a >= b {
                out[0] = hi;
                out[1] = lo;
            } else {
                out[0] = lo;
                out[1] = hi;
            }
        }
        return Ok(ProbMap::from_parts(logits.height(), logits.width(), 2, data));
    }
    let mut data = Vec::with_capacity(logits.data().len());
    let mut exps = vec![0.0f64; k];
    for px in logits.data().chunks_exact(k) {
        let m = px.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0;
        for (e, &z) in exps.iter_mut().zip(px) {
            *e = (z as f64 - m).exp();
            sum += *e;
        }
        for e in &exps {
            data.push((e / sum) as f32);
        }
    }
    ProbMap::new(logits.height(), logits.width(), k, data)
}

/// Marks pixels whose wire probability strictly exceeds every other class;
/// ties go to background.
pub fn argmax_classes(p: &ProbMap) -> MaskBuf {
    let k = p.classes();
    let data = if k == 2 {
        p.data()
            .chunks_exact(2)
            .map(|px| u8::from(px[WIRE] > px[1 - WIRE]))
            .collect()
    } else {
        p.data()
            .chunks_exact(k)
            .map(|px| {
                let wire = px[WIRE];
                u8::from(px.iter().enumerate().all(|(c, &v)| c == WIRE || wire > v))
            })
            .collect()
    };
    MaskBuf::from_parts(p.height(), p.width(), data)
}
