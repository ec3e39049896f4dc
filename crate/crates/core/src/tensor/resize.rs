use super::{Shape, Tensor};

/// Per-axis interpolation taps for half-pixel-centred bilinear resampling.
///
/// Output sample `i` reads source coordinate `(i + 0.5) * in / out - 0.5`,
/// clamped at zero, from its two nearest source samples.
#[derive(Debug, Clone)]
pub struct BilinearTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl BilinearTaps {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for i in 0..output {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i0 == i1 { 0.0 } else { src - i0 as f64 });
        }
        BilinearTaps { lo, hi, frac }
    }
}

pub(crate) fn resize_forward(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = input.shape();
    let rows = BilinearTaps::new(s.height, out_h);
    let cols = BilinearTaps::new(s.width, out_w);
    let mut out = Tensor::zeros(Shape::new(s.channels, out_h, out_w));
    let out_plane = out_h * out_w;
    let data = out.data_mut();
    for c in 0..s.channels {
        let src = input.channel(c);
        for i in 0..out_h {
            let (y0, y1, wy) = (rows.lo[i], rows.hi[i], rows.frac[i]);
            for j in 0..out_w {
                let (x0, x1, wx) = (cols.lo[j], cols.hi[j], cols.frac[j]);
                let top = (1.0 - wx) * src[y0 * s.width + x0] + wx * src[y0 * s.width + x1];
                let bot = (1.0 - wx) * src[y1 * s.width + x0] + wx * src[y1 * s.width + x1];
                data[c * out_plane + i * out_w + j] = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    out
}

pub(crate) fn resize_backward(in_shape: Shape, grad_out: &Tensor) -> Vec<f64> {
    let os = grad_out.shape();
    let rows = BilinearTaps::new(in_shape.height, os.height);
    let cols = BilinearTaps::new(in_shape.width, os.width);
    let mut g = vec![0.0; in_shape.numel()];
    let in_plane = in_shape.plane();
    let w = in_shape.width;
    for c in 0..os.channels {
        let gy = grad_out.channel(c);
        let gi = &mut g[c * in_plane..(c + 1) * in_plane];
        for i in 0..os.height {
            let (y0, y1, wy) = (rows.lo[i], rows.hi[i], rows.frac[i]);
            for j in 0..os.width {
                let (x0, x1, wx) = (cols.lo[j], cols.hi[j], cols.frac[j]);
                let v = gy[i * os.width + j];
                gi[y0 * w + x0] += v * (1.0 - wy) * (1.0 - wx);
                gi[y0 * w + x1] += v * (1.0 - wy) * wx;
                gi[y1 * w + x0] += v * wy * (1.0 - wx);
                gi[y1 * w + x1] += v * wy * wx;
            }
        }
    }
    g
}

/// Non-differentiable bilinear resize of a plain tensor.
pub fn bilinear_resize_tensor(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    resize_forward(input, out_h, out_w)
}
