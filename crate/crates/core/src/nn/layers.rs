//! The fixed layer menu and its forward and backward kernels.

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// 3x3 convolution with zero padding 1.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
    MaxPool2,
    GlobalAvgPool,
    /// Fully connected over the flattened sample.
    Linear { in_features: usize, out_features: usize },
    /// Softmax over channels at every spatial position.
    Softmax,
    /// Rearranges `(c r^2, h, w)` into `(c, h r, w r)`.
    PixelShuffle { factor: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Softmax => "softmax",
            LayerSpec::PixelShuffle { .. } => "pixel_shuffle",
        }
    }

    /// Weight and bias lengths, plus the fan-in used for initialisation.
    pub(crate) fn param_shapes(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch, .. } => {
                Some((out_ch * in_ch * 9, out_ch, in_ch * 9))
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((out_features * in_features, out_features, in_features)),
            _ => None,
        }
    }

    /// Per-sample output shape `(c, h, w)` for a per-sample input shape.
    pub fn output_shape(&self, index: usize, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        let bad = |why: String| Error::Dimension(format!("layer {index} ({}): {why}", self.name()));
        match *self {
            LayerSpec::Conv3x3 {
                in_ch,
                out_ch,
                stride,
            } => {
                if c != in_ch {
                    return Err(bad(format!("expected {in_ch} channels, got {c}")));
                }
                if stride == 0 {
                    return Err(bad("stride 0".into()));
                }
                Ok([out_ch, (h - 1) / stride + 1, (w - 1) / stride + 1])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok([c, h, w]),
            LayerSpec::MaxPool2 => {
                if h < 2 || w < 2 {
                    return Err(bad(format!("{h}x{w} input too small to pool")));
                }
                Ok([c, h / 2, w / 2])
            }
            LayerSpec::GlobalAvgPool => Ok([c, 1, 1]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if c * h * w != in_features {
                    return Err(bad(format!("expected {in_features} features, got {}", c * h * w)));
                }
                Ok([out_features, 1, 1])
            }
            LayerSpec::PixelShuffle { factor } => {
                let r2 = factor * factor;
                if factor == 0 || c % r2 != 0 {
                    return Err(bad(format!("{c} channels not divisible by {r2}")));
                }
                Ok([c / r2, h * factor, w * factor])
            }
        }
    }
}

fn conv_out(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h - 1) / stride + 1, (w - 1) / stride + 1)
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, stride: usize, col: &mut [f64]) {
    let (oh, ow) = conv_out(h, w, stride);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, stride: usize, dx: &mut [f64]) {
    let (oh, ow) = conv_out(h, w, stride);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Runs one layer. `params` holds `[weight, bias]` for parameterised layers.
pub(crate) fn forward(spec: &LayerSpec, params: &[Vec<f64>], x: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor4::zeros(output_shape4(spec, x.shape())?);
    let os = out.sample_len();
    match *spec {
        LayerSpec::Conv3x3 { out_ch, stride, .. } => {
            let (oh, ow) = conv_out(h, w, stride);
            let p = oh * ow;
            let mut col = vec![0.0; c * 9 * p];
            let (wt, b) = (&params[0], &params[1]);
            for s in 0..n {
                im2col(x.sample_slice(s), c, h, w, stride, &mut col);
                let o = &mut out.data_mut()[s * os..(s + 1) * os];
                for (oc, bv) in b.iter().enumerate() {
                    o[oc * p..(oc + 1) * p].fill(*bv);
                }
                gemm(out_ch, c * 9, p, wt, false, &col, false, 1.0, o);
            }
        }
        LayerSpec::Relu => {
            for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
                *o = v.max(0.0);
            }
        }
        LayerSpec::MaxPool2 => {
            let (oh, ow) = (h / 2, w / 2);
            for (plane_i, o) in out.data_mut().chunks_mut(oh * ow).enumerate() {
                let src = &x.data()[plane_i * h * w..(plane_i + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let i = 2 * oy * w + 2 * ox;
                        o[oy * ow + ox] = src[i].max(src[i + 1]).max(src[i + w]).max(src[i + w + 1]);
                    }
                }
            }
        }
        LayerSpec::GlobalAvgPool => {
            let hw = (h * w) as f64;
            for (o, plane) in out.data_mut().iter_mut().zip(x.data().chunks(h * w)) {
                *o = plane.iter().sum::<f64>() / hw;
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let (wt, b) = (&params[0], &params[1]);
            for s in 0..n {
                let o = &mut out.data_mut()[s * os..(s + 1) * os];
                o.copy_from_slice(b);
                gemm(out_features, in_features, 1, wt, false, x.sample_slice(s), false, 1.0, o);
            }
        }
        LayerSpec::Softmax => {
            let hw = h * w;
            for s in 0..n {
                let xs = x.sample_slice(s);
                let o = &mut out.data_mut()[s * os..(s + 1) * os];
                for pos in 0..hw {
                    let m = (0..c).map(|ch| xs[ch * hw + pos]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for ch in 0..c {
                        let e = (xs[ch * hw + pos] - m).exp();
                        o[ch * hw + pos] = e;
                        z += e;
                    }
                    for ch in 0..c {
                        o[ch * hw + pos] /= z;
                    }
                }
            }
        }
        LayerSpec::PixelShuffle { factor: r } => {
            let oc = c / (r * r);
            let (oh, ow) = (h * r, w * r);
            for s in 0..n {
                let xs = x.sample_slice(s);
                let o = &mut out.data_mut()[s * os..(s + 1) * os];
                for ch in 0..oc {
                    for i in 0..r {
                        for j in 0..r {
                            let src = &xs[(ch * r * r + i * r + j) * h * w..][..h * w];
                            for y in 0..h {
                                for xx in 0..w {
                                    o[ch * oh * ow + (y * r + i) * ow + xx * r + j] =
                                        src[y * w + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn output_shape4(spec: &LayerSpec, [n, c, h, w]: [usize; 4]) -> Result<[usize; 4]> {
    let [oc, oh, ow] = spec.output_shape(0, [c, h, w])?;
    Ok([n, oc, oh, ow])
}

/// Backpropagates `dy` through one layer, accumulating parameter gradients
/// into `grads` and returning the input gradient.
pub(crate) fn backward(
    spec: &LayerSpec,
    params: &[Vec<f64>],
    grads: &mut [Vec<f64>],
    x: &Tensor4,
    dy: &Tensor4,
) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape();
    let expect = output_shape4(spec, x.shape())?;
    if dy.shape() != expect {
        return Err(Error::Dimension(format!(
            "{}: upstream gradient {:?}, expected {expect:?}",
            spec.name(),
            dy.shape()
        )));
    }
    let mut dx = Tensor4::zeros(x.shape());
    let is = dx.sample_len();
    let ds = dy.sample_len();
    match *spec {
        LayerSpec::Conv3x3 { out_ch, stride, .. } => {
            let (oh, ow) = conv_out(h, w, stride);
            let p = oh * ow;
            let k = c * 9;
            let mut col = vec![0.0; k * p];
            let mut dcol = vec![0.0; k * p];
            let (gw, gb) = grads.split_at_mut(1);
            for s in 0..n {
                let g = dy.sample_slice(s);
                im2col(x.sample_slice(s), c, h, w, stride, &mut col);
                gemm(out_ch, p, k, g, false, &col, true, 1.0, &mut gw[0]);
                for (oc, b) in gb[0].iter_mut().enumerate() {
                    *b += g[oc * p..(oc + 1) * p].iter().sum::<f64>();
                }
                gemm(k, out_ch, p, &params[0], true, g, false, 0.0, &mut dcol);
                col2im(&dcol, c, h, w, stride, &mut dx.data_mut()[s * is..(s + 1) * is]);
            }
        }
        LayerSpec::Relu => {
            for ((d, v), g) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                *d = if *v > 0.0 { *g } else { 0.0 };
            }
        }
        LayerSpec::MaxPool2 => {
            let (oh, ow) = (h / 2, w / 2);
            for plane_i in 0..n * c {
                let src = &x.data()[plane_i * h * w..(plane_i + 1) * h * w];
                let g = &dy.data()[plane_i * oh * ow..(plane_i + 1) * oh * ow];
                let d = &mut dx.data_mut()[plane_i * h * w..(plane_i + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let i = 2 * oy * w + 2 * ox;
                        // first maximum in row-major order receives the gradient
                        let mut best = i;
                        for j in [i + 1, i + w, i + w + 1] {
                            if src[j] > src[best] {
                                best = j;
                            }
                        }
                        d[best] += g[oy * ow + ox];
                    }
                }
            }
        }
        LayerSpec::GlobalAvgPool => {
            let hw = h * w;
            for (plane, g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
                plane.fill(g / hw as f64);
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let (gw, gb) = grads.split_at_mut(1);
            for s in 0..n {
                let g = dy.sample_slice(s);
                gemm(out_features, 1, in_features, g, false, x.sample_slice(s), false, 1.0, &mut gw[0]);
                for (b, v) in gb[0].iter_mut().zip(g) {
                    *b += v;
                }
                let d = &mut dx.data_mut()[s * is..(s + 1) * is];
                gemm(in_features, out_features, 1, &params[0], true, g, false, 0.0, d);
            }
        }
        LayerSpec::Softmax => {
            let y = forward(spec, params, x)?;
            let hw = h * w;
            for s in 0..n {
                let (ys, g) = (y.sample_slice(s), dy.sample_slice(s));
                let d = &mut dx.data_mut()[s * is..(s + 1) * is];
                for pos in 0..hw {
                    let dot: f64 = (0..c).map(|ch| ys[ch * hw + pos] * g[ch * hw + pos]).sum();
                    for ch in 0..c {
                        let i = ch * hw + pos;
                        d[i] = ys[i] * (g[i] - dot);
                    }
                }
            }
        }
        LayerSpec::PixelShuffle { factor: r } => {
            let oc = c / (r * r);
            let (oh, ow) = (h * r, w * r);
            for s in 0..n {
                let g = &dy.data()[s * ds..(s + 1) * ds];
                let d = &mut dx.data_mut()[s * is..(s + 1) * is];
                for ch in 0..oc {
                    for i in 0..r {
                        for j in 0..r {
                            let dst = &mut d[(ch * r * r + i * r + j) * h * w..][..h * w];
                            for y in 0..h {
                                for xx in 0..w {
                                    dst[y * w + xx] =
                                        g[ch * oh * ow + (y * r + i) * ow + xx * r + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}
