//! Primitive kernels: convolution, inference batch-norm, activations,
//! pooling and bilinear resampling.
//!
//! Every kernel is a pure function of its inputs and accumulates in a fixed
//! order, so repeated calls are bit-identical.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride, symmetric zero padding and group count of a 2-D convolution.
/// Dilation is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn depthwise(stride: usize, padding: usize, channels: usize) -> Self {
        Self {
            stride,
            padding,
            groups: channels,
        }
    }

    /// `floor((input + 2*pad - kernel) / stride) + 1`, or `None` when the
    /// kernel does not fit the padded input.
    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

fn check_conv(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    p: ConvParams,
) -> Result<[usize; 4]> {
    const OP: &str = "conv2d";
    let [n, in_c, h, w] = x.dims();
    let [out_c, in_per_group, kh, kw] = weight.dims();
    if p.groups == 0 {
        return Err(Error::Input("conv2d: groups must be positive".into()));
    }
    if p.stride == 0 {
        return Err(Error::Input("conv2d: stride must be positive".into()));
    }
    if in_c % p.groups != 0 {
        return Err(Error::dim(OP, "input channels (multiple of groups)", p.groups, in_c));
    }
    if out_c % p.groups != 0 {
        return Err(Error::dim(OP, "output channels (multiple of groups)", p.groups, out_c));
    }
    if in_per_group * p.groups != in_c {
        return Err(Error::dim(OP, "weight input channels", in_c / p.groups, in_per_group));
    }
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(Error::dim(OP, "bias length", out_c, b.len()));
        }
    }
    let oh = p
        .out_size(h, kh)
        .ok_or_else(|| Error::dim(OP, "height (kernel exceeds padded input)", kh, h + 2 * p.padding))?;
    let ow = p
        .out_size(w, kw)
        .ok_or_else(|| Error::dim(OP, "width (kernel exceeds padded input)", kw, w + 2 * p.padding))?;
    Ok([n, out_c, oh, ow])
}

/// Range of output columns whose input column `ox*stride + k - pad` is in `[0, in_w)`.
#[inline]
fn valid_out_range(k: usize, pad: usize, stride: usize, in_w: usize, out_w: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // Largest ox with ox*stride + k - pad <= in_w - 1.
    let hi = if in_w + pad > k {
        ((in_w - 1 + pad - k) / stride + 1).min(out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Grouped 2-D convolution over NCHW input with `weight` laid out as
/// `[out_c, in_c / groups, kh, kw]`.
///
/// Each output element accumulates `bias + sum(w * x)` over input channel,
/// kernel row, kernel column in that order.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>, p: ConvParams) -> Result<Tensor> {
    let out_dims = check_conv(x, weight, bias, p)?;
    let [n, out_c, oh, ow] = out_dims;
    let [_, _, h, w] = x.dims();
    let [_, in_per_group, kh, kw] = weight.dims();
    let out_per_group = out_c / p.groups;
    let (stride, pad) = (p.stride, p.padding);

    let mut out = Tensor::zeros(out_dims);
    let wdata = weight.data();
    for ni in 0..n {
        for oc in 0..out_c {
            let group = oc / out_per_group;
            let b = bias.map_or(0.0, |b| b[oc]);
            let plane = out.plane_mut(ni, oc);
            plane.fill(b);
            for oy in 0..oh {
                let row = &mut plane[oy * ow..(oy + 1) * ow];
                for icl in 0..in_per_group {
                    let ic = group * in_per_group + icl;
                    let xplane = x.plane(ni, ic);
                    let wbase = (oc * in_per_group + icl) * kh * kw;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..kw {
                            let wv = wdata[wbase + ky * kw + kx];
                            let (lo, hi) = valid_out_range(kx, pad, stride, w, ow);
                            if lo >= hi {
                                continue;
                            }
                            if stride == 1 {
                                let start = lo + kx - pad;
                                let src = &xrow[start..start + (hi - lo)];
                                for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            } else {
                                for (ox, o) in row.iter_mut().enumerate().take(hi).skip(lo) {
                                    *o += wv * xrow[ox * stride + kx - pad];
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

/// Inference-mode batch normalisation parameters for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

pub const BN_EPS: f32 = 1e-5;

impl BatchNorm {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        batch_norm_infer(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batch_norm_infer(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    const OP: &str = "batch_norm_infer";
    let [n, c, _, _] = x.dims();
    for (axis, len) in [
        ("gamma length", gamma.len()),
        ("beta length", beta.len()),
        ("running_mean length", running_mean.len()),
        ("running_var length", running_var.len()),
    ] {
        if len != c {
            return Err(Error::dim(OP, axis, c, len));
        }
    }
    if running_var.iter().any(|&v| v < 0.0) {
        return Err(Error::Input("batch_norm_infer: negative running variance".into()));
    }
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (running_var[ci] + eps).sqrt();
            let (g, b, m) = (gamma[ci], beta[ci], running_mean[ci]);
            for v in out.plane_mut(ni, ci) {
                *v = g * (*v - m) * inv + b;
            }
        }
    }
    Ok(out)
}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Relu6,
    HardSigmoid,
    HardSwish,
    LeakyRelu(f32),
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::HardSigmoid => hard_sigmoid(x),
            Activation::HardSwish => x * hard_sigmoid(x),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[inline]
fn hard_sigmoid(x: f32) -> f32 {
    (x + 3.0).clamp(0.0, 6.0) / 6.0
}

pub fn activate(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub(crate) fn activate_in_place(x: &mut Tensor, kind: Activation) {
    for v in x.data_mut() {
        *v = kind.apply(*v);
    }
}

/// Mean over each `H*W` plane, giving `[N, C, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims();
    let count = (h * w) as f32;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for ni in 0..n {
        for ci in 0..c {
            let sum: f32 = x.plane(ni, ci).iter().sum();
            out.set(ni, ci, 0, 0, sum / count);
        }
    }
    out
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

#[inline]
fn pixel_or_zero(plane: &[f32], h: usize, w: usize, y: isize, x: isize) -> f32 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Bilinear read of plane `(n, c)` at continuous column `px`, row `py`.
///
/// Blends the four integer neighbours `(floor(px), floor(py))`..`(+1, +1)`;
/// neighbours outside the map read as 0. Integer in-range coordinates return
/// the stored value exactly.
pub fn bilinear_sample(x: &Tensor, n: usize, c: usize, px: f32, py: f32) -> f32 {
    sample_plane(x.plane(n, c), x.height(), x.width(), px, py)
}

#[inline]
pub(crate) fn sample_plane(plane: &[f32], h: usize, w: usize, px: f32, py: f32) -> f32 {
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let p00 = pixel_or_zero(plane, h, w, y0, x0);
    let p10 = pixel_or_zero(plane, h, w, y0, x0 + 1);
    let p01 = pixel_or_zero(plane, h, w, y0 + 1, x0);
    let p11 = pixel_or_zero(plane, h, w, y0 + 1, x0 + 1);
    let top = lerp(p00, p10, fx);
    let bottom = lerp(p01, p11, fx);
    lerp(top, bottom, fy)
}

/// Source coordinate for output index `dst` under the half-pixel
/// (align-corners = false) mapping, clamped into `[0, in_size - 1]`.
#[inline]
pub fn resize_source_coord(dst: usize, in_size: usize, out_size: usize) -> f32 {
    let scale = in_size as f32 / out_size as f32;
    let src = (dst as f32 + 0.5) * scale - 0.5;
    src.clamp(0.0, (in_size - 1) as f32)
}

/// Bilinear resize of every plane to `out_h x out_w` using the
/// align-corners = false mapping. Works for up- and down-sampling.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 {
        return Err(Error::dim("bilinear_upsample", "target height", 1, 0));
    }
    if out_w == 0 {
        return Err(Error::dim("bilinear_upsample", "target width", 1, 0));
    }
    let [n, c, h, w] = x.dims();
    if h == 0 || w == 0 {
        return Err(Error::Input("bilinear_upsample of an empty map".into()));
    }
    let xs: Vec<f32> = (0..out_w).map(|d| resize_source_coord(d, w, out_w)).collect();
    let ys: Vec<f32> = (0..out_h).map(|d| resize_source_coord(d, h, out_h)).collect();
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (oy, &sy) in ys.iter().enumerate() {
                for (ox, &sx) in xs.iter().enumerate() {
                    dst[oy * out_w + ox] = sample_plane(src, h, w, sx, sy);
                }
            }
        }
    }
    Ok(out)
}
