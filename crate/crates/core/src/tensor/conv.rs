use rand::Rng;

use super::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Spatial size of the separable kernels used throughout the refinement.
pub const SEP_KERNEL: usize = 5;

/// Depthwise 5x5 kernel per input channel, followed by a pointwise
/// `out x in` mixing matrix and a bias.
///
/// Stored as tensors so they can be bound onto a [`Tape`]:
/// depthwise `in x 5 x 5`, pointwise `out x in x 1`, bias `out x 1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SepConvWeights {
    pub depthwise: Tensor,
    pub pointwise: Tensor,
    pub bias: Tensor,
}

impl SepConvWeights {
    pub fn new(depthwise: Tensor, pointwise: Tensor, bias: Tensor) -> Result<Self> {
        let d = depthwise.shape();
        let p = pointwise.shape();
        let b = bias.shape();
        if d.height != SEP_KERNEL || d.width != SEP_KERNEL {
            return Err(Error::shape(
                "SepConvWeights",
                format!("depthwise kernel must be {SEP_KERNEL}x{SEP_KERNEL}, got {d}"),
            ));
        }
        if p.height != d.channels || p.width != 1 {
            return Err(Error::shape(
                "SepConvWeights",
                format!("pointwise {p} does not take {} input channels", d.channels),
            ));
        }
        if b != Shape::new(p.channels, 1, 1) {
            return Err(Error::shape(
                "SepConvWeights",
                format!("bias {b} does not match {} output channels", p.channels),
            ));
        }
        Ok(SepConvWeights {
            depthwise,
            pointwise,
            bias,
        })
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        SepConvWeights {
            depthwise: Tensor::zeros(Shape::new(in_ch, SEP_KERNEL, SEP_KERNEL)),
            pointwise: Tensor::zeros(Shape::new(out_ch, in_ch, 1)),
            bias: Tensor::zeros(Shape::new(out_ch, 1, 1)),
        }
    }

    /// Centred-delta depthwise kernel and identity pointwise: the identity map.
    pub fn identity(channels: usize) -> Self {
        let mut w = SepConvWeights::zeros(channels, channels);
        let mid = SEP_KERNEL / 2;
        for c in 0..channels {
            w.depthwise.set(c, mid, mid, 1.0);
            w.pointwise.set(c, c, 0, 1.0);
        }
        w
    }

    /// Uniform fan-in scaled initialization; bias starts at zero.
    pub fn random<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, gain: f64, rng: &mut R) -> Self {
        let dw_bound = gain / (SEP_KERNEL as f64);
        let pw_bound = gain / (in_ch as f64).sqrt();
        SepConvWeights {
            depthwise: Tensor::random_uniform(
                Shape::new(in_ch, SEP_KERNEL, SEP_KERNEL),
                -dw_bound,
                dw_bound,
                rng,
            ),
            pointwise: Tensor::random_uniform(Shape::new(out_ch, in_ch, 1), -pw_bound, pw_bound, rng),
            bias: Tensor::zeros(Shape::new(out_ch, 1, 1)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.shape().channels
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape().channels
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.depthwise, &self.pointwise, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.depthwise, &mut self.pointwise, &mut self.bias]
    }

    pub fn bind(&self, tape: &mut Tape) -> SepConvVars {
        SepConvVars {
            depthwise: tape.leaf(self.depthwise.clone()),
            pointwise: tape.leaf(self.pointwise.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

/// Handles of a [`SepConvWeights`] bound onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct SepConvVars {
    pub depthwise: Var,
    pub pointwise: Var,
    pub bias: Var,
}

impl SepConvVars {
    pub fn vars(&self) -> [Var; 3] {
        [self.depthwise, self.pointwise, self.bias]
    }
}

/// A bare `out x in` channel mixer with bias (a 1x1 convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl PointwiseWeights {
    pub fn random<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (in_ch as f64).sqrt();
        PointwiseWeights {
            weight: Tensor::random_uniform(Shape::new(out_ch, in_ch, 1), -bound, bound, rng),
            bias: Tensor::zeros(Shape::new(out_ch, 1, 1)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> (Var, Var) {
        (tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone()))
    }
}

pub(crate) fn depthwise_forward(x: &Tensor, k: &Tensor) -> Tensor {
    let s = x.shape();
    let ks = k.shape().height;
    let r = (ks / 2) as isize;
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for c in 0..s.channels {
        let src = x.channel(c);
        let ker = k.channel(c);
        let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..ks as isize {
                    let y = i + a - r;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for b in 0..ks as isize {
                        let xx = j + b - r;
                        if xx < 0 || xx >= w {
                            continue;
                        }
                        acc += ker[(a as usize) * ks + b as usize] * src[(y * w + xx) as usize];
                    }
                }
                dst[(i * w + j) as usize] = acc;
            }
        }
    }
    out
}

/// Returns (grad wrt input, grad wrt kernel).
pub(crate) fn depthwise_backward(x: &Tensor, k: &Tensor, gy: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let ks = k.shape().height;
    let r = (ks / 2) as isize;
    let (h, w) = (s.height as isize, s.width as isize);
    let plane = s.plane();
    let mut gx = vec![0.0; s.numel()];
    let mut gk = vec![0.0; k.shape().numel()];
    for c in 0..s.channels {
        let src = x.channel(c);
        let ker = k.channel(c);
        let g = gy.channel(c);
        let gxc = &mut gx[c * plane..(c + 1) * plane];
        let gkc = &mut gk[c * ks * ks..(c + 1) * ks * ks];
        for i in 0..h {
            for j in 0..w {
                let v = g[(i * w + j) as usize];
                if v == 0.0 {
                    continue;
                }
                for a in 0..ks as isize {
                    let y = i + a - r;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for b in 0..ks as isize {
                        let xx = j + b - r;
                        if xx < 0 || xx >= w {
                            continue;
                        }
                        let kidx = (a as usize) * ks + b as usize;
                        let sidx = (y * w + xx) as usize;
                        gxc[sidx] += ker[kidx] * v;
                        gkc[kidx] += src[sidx] * v;
                    }
                }
            }
        }
    }
    (gx, gk)
}

pub(crate) fn pointwise_forward(x: &Tensor, wt: &Tensor, bias: &Tensor) -> Tensor {
    let s = x.shape();
    let out_ch = wt.shape().channels;
    let in_ch = s.channels;
    let plane = s.plane();
    let mut out = Tensor::zeros(s.with_channels(out_ch));
    let data = out.data_mut();
    let wd = wt.data();
    for o in 0..out_ch {
        let dst = &mut data[o * plane..(o + 1) * plane];
        dst.fill(bias.data()[o]);
        for i in 0..in_ch {
            let coef = wd[o * in_ch + i];
            if coef == 0.0 {
                continue;
            }
            for (d, v) in dst.iter_mut().zip(x.channel(i)) {
                *d += coef * v;
            }
        }
    }
    out
}

/// Returns (grad wrt input, grad wrt weight, grad wrt bias).
pub(crate) fn pointwise_backward(
    x: &Tensor,
    wt: &Tensor,
    gy: &Tensor,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let out_ch = wt.shape().channels;
    let in_ch = s.channels;
    let plane = s.plane();
    let wd = wt.data();
    let mut gx = vec![0.0; s.numel()];
    let mut gw = vec![0.0; wt.shape().numel()];
    let mut gb = vec![0.0; out_ch];
    for o in 0..out_ch {
        let g = gy.channel(o);
        gb[o] = g.iter().sum();
        for i in 0..in_ch {
            let xi = x.channel(i);
            gw[o * in_ch + i] = g.iter().zip(xi).map(|(a, b)| a * b).sum();
            let coef = wd[o * in_ch + i];
            if coef == 0.0 {
                continue;
            }
            for (d, v) in gx[i * plane..(i + 1) * plane].iter_mut().zip(g) {
                *d += coef * v;
            }
        }
    }
    (gx, gw, gb)
}
