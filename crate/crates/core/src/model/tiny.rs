//! Desk-scale reference segmenter: a shared two-layer convolutional encoder
//! with separate coarse and fine decoders, trained from scratch.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::conv::{conv_backward, conv_forward, ConvShape, KSIZE};
use super::{Segmenter, INPUT_CHANNELS, NUM_CLASSES, PROB_FLOOR};
use crate::error::{invalid, shape, Result};
use crate::imagecore::{ImageBuf, LogitMap, MaskBuf};
use crate::tiling::WindowSpec;

pub(crate) const WIDTH: usize = 16;

/// One convolution layer in the parameter table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerSpec {
    pub name: &'static str,
    pub shape: ConvShape,
}

pub(crate) const LAYERS: [LayerSpec; 6] = [
    LayerSpec {
        name: "enc.0",
        shape: ConvShape {
            c_in: INPUT_CHANNELS,
            c_out: WIDTH,
        },
    },
    LayerSpec {
        name: "enc.1",
        shape: ConvShape {
            c_in: WIDTH,
            c_out: WIDTH,
        },
    },
    LayerSpec {
        name: "dec_coarse.0",
        shape: ConvShape {
            c_in: WIDTH,
            c_out: WIDTH,
        },
    },
    LayerSpec {
        name: "dec_coarse.1",
        shape: ConvShape {
            c_in: WIDTH,
            c_out: NUM_CLASSES,
        },
    },
    LayerSpec {
        name: "dec_fine.0",
        shape: ConvShape {
            c_in: WIDTH,
            c_out: WIDTH,
        },
    },
    LayerSpec {
        name: "dec_fine.1",
        shape: ConvShape {
            c_in: WIDTH,
            c_out: NUM_CLASSES,
        },
    },
];

const ENCODER: [usize; 2] = [0, 1];
const COARSE_DECODER: [usize; 2] = [2, 3];
const FINE_DECODER: [usize; 2] = [4, 5];

/// Which decoder a forward pass runs through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Coarse,
    Fine,
}

impl Head {
    fn path(self) -> [usize; 4] {
        let dec = match self {
            Head::Coarse => COARSE_DECODER,
            Head::Fine => FINE_DECODER,
        };
        [ENCODER[0], ENCODER[1], dec[0], dec[1]]
    }
}

fn offsets() -> [usize; LAYERS.len() + 1] {
    let mut off = [0; LAYERS.len() + 1];
    for (i, l) in LAYERS.iter().enumerate() {
        off[i + 1] = off[i] + l.shape.param_len();
    }
    off
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyConvSegmenter {
    params: Vec<f64>,
}

impl TinyConvSegmenter {
    /// He-normal weights, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let off = offsets();
        let mut params = vec![0.0; off[LAYERS.len()]];
        for (i, l) in LAYERS.iter().enumerate() {
            let fan_in = (l.shape.c_in * KSIZE * KSIZE) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            for p in &mut params[off[i]..off[i] + l.shape.weight_len()] {
                *p = normal.sample(&mut rng);
            }
        }
        Self { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count() {
            return Err(invalid(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                Self::param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        Ok(Self { params })
    }

    pub fn param_count() -> usize {
        offsets()[LAYERS.len()]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Copies the coarse decoder into the fine decoder.
    pub fn tie_decoders(&mut self) {
        let off = offsets();
        for (c, f) in COARSE_DECODER.iter().zip(FINE_DECODER) {
            let src = self.params[off[*c]..off[c + 1]].to_vec();
            self.params[off[f]..off[f + 1]].copy_from_slice(&src);
        }
    }

    fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        layer_params(&self.params, i)
    }

    /// Logits for a planar `6×h×w` input, planar `2×h×w` output.
    pub fn forward_planar(&self, input: &[f64], h: usize, w: usize, head: Head) -> Vec<f64> {
        let path = head.path();
        let mut act = input.to_vec();
        for (depth, &li) in path.iter().enumerate() {
            let spec = LAYERS[li].shape;
            let (wt, b) = self.layer(li);
            let mut out = vec![0.0; spec.c_out * h * w];
            conv_forward(spec, &act, h, w, wt, b, &mut out);
            if depth + 1 < path.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = out;
        }
        act
    }

    /// On/off state of every hidden ReLU for a planar input, in layer order.
    pub fn relu_pattern(&self, input: &[f64], h: usize, w: usize, head: Head) -> Vec<bool> {
        let path = head.path();
        let mut act = input.to_vec();
        let mut pattern = Vec::new();
        for &li in &path[..path.len() - 1] {
            let spec = LAYERS[li].shape;
            let (wt, b) = self.layer(li);
            let mut out = vec![0.0; spec.c_out * h * w];
            conv_forward(spec, &act, h, w, wt, b, &mut out);
            pattern.extend(out.iter().map(|&v| v > 0.0));
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            act = out;
        }
        pattern
    }

    fn forward_image(&self, input: &ImageBuf, head: Head) -> Result<LogitMap> {
        if input.channels() != INPUT_CHANNELS {
            return Err(shape(format!(
                "segmenter input needs {INPUT_CHANNELS} channels, got {}",
                input.channels()
            )));
        }
        let (h, w) = input.dims();
        let logits = self.forward_planar(&input.to_planar_f64(), h, w, head);
        LogitMap::from_planar(h, w, NUM_CLASSES, &logits)
    }

    /// Mean cross-entropy of `head` on one input and its gradient
    /// accumulated into `grad` with weight `scale`.
    fn loss_and_grad_head(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        target: &MaskBuf,
        head: Head,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let path = head.path();
        let off = offsets();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(path.len() + 1);
        acts.push(input.to_vec());
        for (depth, &li) in path.iter().enumerate() {
            let spec = LAYERS[li].shape;
            let (wt, b) = self.layer(li);
            let mut out = vec![0.0; spec.c_out * h * w];
            conv_forward(spec, acts.last().unwrap(), h, w, wt, b, &mut out);
            if depth + 1 < path.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }

        let n = h * w;
        let logits = acts.last().unwrap();
        let mut g = vec![0.0; NUM_CLASSES * n];
        let mut loss = 0.0;
        for i in 0..n {
            let z0 = logits[i];
            let z1 = logits[n + i];
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let p1 = e1 / (e0 + e1);
            let p0 = e0 / (e0 + e1);
            let wire = target.data()[i] == 1;
            let p_true = if wire { p1 } else { p0 };
            loss -= p_true.max(PROB_FLOOR).ln();
            if p_true > PROB_FLOOR {
                let t1 = f64::from(u8::from(wire));
                g[i] = (p0 - (1.0 - t1)) / n as f64 * scale;
                g[n + i] = (p1 - t1) / n as f64 * scale;
            }
        }
        loss /= n as f64;

        for depth in (0..path.len()).rev() {
            let li = path[depth];
            let spec = LAYERS[li].shape;
            let (wt, _) = self.layer(li);
            let (gw, gb) = grad[off[li]..off[li + 1]].split_at_mut(spec.weight_len());
            let input_act = &acts[depth];
            if depth == 0 {
                conv_backward(spec, input_act, h, w, wt, &g, gw, gb, None);
            } else {
                let mut gi = vec![0.0; spec.c_in * n];
                conv_backward(spec, input_act, h, w, wt, &g, gw, gb, Some(&mut gi));
                // ReLU derivative, read from the post-activation values
                for (d, &a) in gi.iter_mut().zip(input_act) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                g = gi;
            }
        }
        loss
    }

    /// Batch-mean `L_glo + λ·L_loc` and its gradient with respect to every
    /// parameter. Conditioning channels inside the batch are treated as
    /// constants.
    pub fn loss_and_grad(&self, batch: &[PreparedSample], lambda: f64) -> Result<(super::LossReport, Vec<f64>)> {
        if batch.is_empty() {
            return Err(invalid("empty training batch"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let inv = 1.0 / batch.len() as f64;
        let (mut glo, mut loc) = (0.0, 0.0);
        for s in batch {
            let (ch, cw) = s.coarse_target.dims();
            let (fh, fw) = s.fine_target.dims();
            glo += self.loss_and_grad_head(&s.coarse_input, ch, cw, &s.coarse_target, Head::Coarse, inv, &mut grad);
            loc += self.loss_and_grad_head(
                &s.fine_input,
                fh,
                fw,
                &s.fine_target,
                Head::Fine,
                lambda * inv,
                &mut grad,
            );
        }
        Ok((super::LossReport::new(glo * inv, loc * inv, lambda), grad))
    }
}

pub(crate) fn layer_params(params: &[f64], i: usize) -> (&[f64], &[f64]) {
    let off = offsets();
    params[off[i]..off[i + 1]].split_at(LAYERS[i].shape.weight_len())
}

impl Segmenter for TinyConvSegmenter {
    fn coarse_forward(&self, input: &ImageBuf) -> Result<LogitMap> {
        self.forward_image(input, Head::Coarse)
    }

    fn fine_forward(&self, input: &ImageBuf, _window: &WindowSpec) -> Result<LogitMap> {
        self.forward_image(input, Head::Fine)
    }
}

/// One training example with planar network inputs and labels for both
/// branches.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub coarse_input: Vec<f64>,
    pub coarse_target: MaskBuf,
    pub fine_input: Vec<f64>,
    pub fine_target: MaskBuf,
}

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`. With `max_grad_norm`
/// set, a gradient whose L2 norm exceeds it is rescaled to that norm first.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub max_grad_norm: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, param_count: usize) -> Self {
        Self {
            lr,
            momentum,
            max_grad_norm: None,
            velocity: vec![0.0; param_count],
        }
    }

    /// Applies one update and returns the gradient's norm before clipping.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let lr = self.lr;
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + scale * g;
            *p -= lr * *v;
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_input(rng: &mut impl Rng, h: usize, w: usize) -> ImageBuf {
        ImageBuf::from_fn(h, w, INPUT_CHANNELS, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn clipping_rescales_only_large_gradients() {
        let mut plain = Sgd::new(0.5, 0.0, 2);
        let mut p = vec![0.0, 0.0];
        assert_eq!(plain.apply(&mut p, &[3.0, 4.0]), 5.0);
        assert_eq!(p, vec![-1.5, -2.0]);

        let mut clipped = Sgd::new(0.5, 0.0, 2);
        clipped.max_grad_norm = Some(1.0);
        let mut q = vec![0.0, 0.0];
        assert_eq!(clipped.apply(&mut q, &[3.0, 4.0]), 5.0);
        assert!((q[0] + 0.3).abs() < 1e-12 && (q[1] + 0.4).abs() < 1e-12);
        let mut r = vec![0.0, 0.0];
        clipped.apply(&mut r, &[0.3, 0.4]);
        assert_eq!(r, vec![-0.15, -0.2]);
    }

    #[test]
    fn desk_scale_parameter_count() {
        let n = TinyConvSegmenter::param_count();
        assert!(n < 100_000);
        assert_eq!(n, TinyConvSegmenter::new(0).params().len());
    }

    #[test]
    fn forward_is_deterministic_and_shape_preserving() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = TinyConvSegmenter::new(9);
        let x = random_input(&mut rng, 13, 17);
        let a = m.coarse_forward(&x).unwrap();
        assert_eq!(a.dims(), (13, 17));
        assert_eq!(a.classes(), 2);
        assert_eq!(a, m.coarse_forward(&x).unwrap());
        assert!(m.coarse_forward(&ImageBuf::filled(4, 4, 3, 0.0).unwrap()).is_err());
    }

    #[test]
    fn shared_encoder_with_tied_decoders() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut m = TinyConvSegmenter::new(4);
        let x = random_input(&mut rng, 10, 12);
        let win = WindowSpec::full(10, 12);
        assert_ne!(m.coarse_forward(&x).unwrap(), m.fine_forward(&x, &win).unwrap());
        m.tie_decoders();
        assert_eq!(m.coarse_forward(&x).unwrap(), m.fine_forward(&x, &win).unwrap());
    }

    #[test]
    fn translation_consistent_interior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = TinyConvSegmenter::new(5);
        let (h, w) = (24, 24);
        let blob: Vec<f32> = (0..6 * 6 * INPUT_CHANNELS).map(|_| rng.gen()).collect();
        let place = |oy: usize, ox: usize| {
            ImageBuf::from_fn(h, w, INPUT_CHANNELS, |y, x, c| {
                if (oy..oy + 6).contains(&y) && (ox..ox + 6).contains(&x) {
                    blob[((y - oy) * 6 + (x - ox)) * INPUT_CHANNELS + c]
                } else {
                    0.3
                }
            })
            .unwrap()
        };
        let a = m.coarse_forward(&place(8, 8)).unwrap();
        let b = m.coarse_forward(&place(11, 9)).unwrap();
        // receptive field radius is 4, so stay 4 pixels clear of the border
        for y in 4..h - 4 - 3 {
            for x in 4..w - 4 - 1 {
                for c in 0..2 {
                    let va = a.data()[(y * w + x) * 2 + c];
                    let vb = b.data()[((y + 3) * w + x + 1) * 2 + c];
                    assert!((va - vb).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let m = TinyConvSegmenter::new(1);
        let mut p = m.params().to_vec();
        let mut opt = Sgd::new(0.0, 0.9, p.len());
        let g = vec![1.0; p.len()];
        opt.apply(&mut p, &g);
        assert_eq!(p, m.params());
    }
}
