//! Deformable convolution (v1, no modulation mask).
//!
//! A regular convolution predicts, for every output location and kernel tap,
//! a fractional displacement `(dy, dx)`. The main kernel then reads the input
//! at the displaced position with bilinear interpolation instead of at the
//! fixed grid point.
//!
//! Offset channel layout: for tap `t = ky * kw + kx`, channel `2t` holds `dy`
//! and channel `2t + 1` holds `dx`, in input pixels.

use crate::error::{Error, Result};
use crate::nn::{activate_in_place, conv2d, Activation, BatchNorm, ConvParams};
use crate::tensor::Tensor;
use crate::weights::ParamSource;

/// Per-location, per-tap displacements, `[N, 2*kh*kw, out_h, out_w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    field: Tensor,
    kernel: (usize, usize),
}

impl OffsetField {
    pub fn new(field: Tensor, kh: usize, kw: usize) -> Result<Self> {
        if field.channels() != 2 * kh * kw {
            return Err(Error::dim("OffsetField", "offset channels", 2 * kh * kw, field.channels()));
        }
        Ok(Self {
            field,
            kernel: (kh, kw),
        })
    }

    pub fn zeros(n: usize, kh: usize, kw: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            field: Tensor::zeros([n, 2 * kh * kw, out_h, out_w]),
            kernel: (kh, kw),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.field
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    /// `(dy, dx)` for tap `t` at output `(oy, ox)` of batch item `n`.
    #[inline]
    pub fn get(&self, n: usize, t: usize, oy: usize, ox: usize) -> (f32, f32) {
        (self.field.get(n, 2 * t, oy, ox), self.field.get(n, 2 * t + 1, oy, ox))
    }

    pub fn set(&mut self, n: usize, t: usize, oy: usize, ox: usize, dy: f32, dx: f32) {
        self.field.set(n, 2 * t, oy, ox, dy);
        self.field.set(n, 2 * t + 1, oy, ox, dx);
    }
}

/// Runs the offset-predicting convolution. `offset_weight` must have
/// `2*kh*kw` output channels and share the main convolution's params.
pub fn dcn_offsets(
    x: &Tensor,
    offset_weight: &Tensor,
    offset_bias: Option<&[f32]>,
    p: ConvParams,
    kh: usize,
    kw: usize,
) -> Result<OffsetField> {
    let want = 2 * kh * kw;
    if offset_weight.dims()[0] != want {
        return Err(Error::dim("dcn_offsets", "offset output channels", want, offset_weight.dims()[0]));
    }
    OffsetField::new(conv2d(x, offset_weight, offset_bias, p)?, kh, kw)
}

#[derive(Clone, Copy)]
struct SamplePoint {
    x0: isize,
    y0: isize,
    fx: f32,
    fy: f32,
}

/// Deformable convolution, `weight` is `[out_c, in_c, kh, kw]` (groups = 1).
///
/// For output `(oy, ox)` and tap `(ky, kx)` the input is read at row
/// `oy*stride - pad + ky + dy` and column `ox*stride - pad + kx + dx` through
/// [`crate::nn::bilinear_sample`] semantics (outside reads as zero), then
/// contracted with the tap weight. Accumulation runs over input channel,
/// kernel row, kernel column, the same order as [`conv2d`].
pub fn deform_conv2d(x: &Tensor, weight: &Tensor, offsets: &OffsetField, p: ConvParams) -> Result<Tensor> {
    const OP: &str = "deform_conv2d";
    if p.groups != 1 {
        return Err(Error::Input("deform_conv2d supports groups = 1 only".into()));
    }
    let [n, in_c, h, w] = x.dims();
    let [out_c, w_in, kh, kw] = weight.dims();
    if w_in != in_c {
        return Err(Error::dim(OP, "weight input channels", in_c, w_in));
    }
    if offsets.kernel() != (kh, kw) {
        return Err(Error::dim(OP, "offset kernel taps", kh * kw, offsets.kernel().0 * offsets.kernel().1));
    }
    let oh = p.out_size(h, kh).ok_or_else(|| Error::dim(OP, "height (kernel exceeds padded input)", kh, h + 2 * p.padding))?;
    let ow = p.out_size(w, kw).ok_or_else(|| Error::dim(OP, "width (kernel exceeds padded input)", kw, w + 2 * p.padding))?;
    let [on, _, off_h, off_w] = offsets.tensor().dims();
    if on != n {
        return Err(Error::dim(OP, "offset batch", n, on));
    }
    if off_h != oh {
        return Err(Error::dim(OP, "offset height", oh, off_h));
    }
    if off_w != ow {
        return Err(Error::dim(OP, "offset width", ow, off_w));
    }

    let taps = kh * kw;
    let positions = oh * ow;
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    let mut points = vec![SamplePoint { x0: 0, y0: 0, fx: 0.0, fy: 0.0 }; taps * positions];
    let mut columns = vec![0.0f32; in_c * taps * positions];
    let wdata = weight.data();

    for ni in 0..n {
        for ky in 0..kh {
            for kx in 0..kw {
                let t = ky * kw + kx;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (dy, dx) = offsets.get(ni, t, oy, ox);
                        let py = (oy * p.stride + ky) as f32 - p.padding as f32 + dy;
                        let px = (ox * p.stride + kx) as f32 - p.padding as f32 + dx;
                        let (y0, x0) = (py.floor(), px.floor());
                        points[t * positions + oy * ow + ox] = SamplePoint {
                            x0: x0 as isize,
                            y0: y0 as isize,
                            fx: px - x0,
                            fy: py - y0,
                        };
                    }
                }
            }
        }

        for ic in 0..in_c {
            let plane = x.plane(ni, ic);
            let read = |yy: isize, xx: isize| -> f32 {
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    0.0
                } else {
                    plane[yy as usize * w + xx as usize]
                }
            };
            let col = &mut columns[ic * taps * positions..(ic + 1) * taps * positions];
            for (c, sp) in col.iter_mut().zip(&points) {
                let p00 = read(sp.y0, sp.x0);
                let p10 = read(sp.y0, sp.x0 + 1);
                let p01 = read(sp.y0 + 1, sp.x0);
                let p11 = read(sp.y0 + 1, sp.x0 + 1);
                let top = p00 + sp.fx * (p10 - p00);
                let bottom = p01 + sp.fx * (p11 - p01);
                *c = top + sp.fy * (bottom - top);
            }
        }

        for oc in 0..out_c {
            let acc = out.plane_mut(ni, oc);
            for ic in 0..in_c {
                for t in 0..taps {
                    let wv = wdata[(oc * in_c + ic) * taps + t];
                    let col = &columns[(ic * taps + t) * positions..(ic * taps + t + 1) * positions];
                    for (a, &c) in acc.iter_mut().zip(col) {
                        *a += wv * c;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Offset conv -> deformable conv -> batch-norm -> activation.
#[derive(Clone, Debug)]
pub struct DeformConvLayer {
    pub offset_weight: Tensor,
    pub offset_bias: Vec<f32>,
    pub weight: Tensor,
    pub bn: BatchNorm,
    pub params: ConvParams,
    pub act: Option<Activation>,
}

impl DeformConvLayer {
    /// Square `kernel`, "same" padding. Offset predictor starts at zero so a
    /// fresh layer behaves as a plain convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        act: Option<Activation>,
    ) -> Result<Self> {
        let offset_weight = src.zero_conv_weight(&format!("{prefix}.offset.weight"), [2 * kernel * kernel, in_c, kernel, kernel])?;
        let offset_bias = src.bias(&format!("{prefix}.offset.bias"), 2 * kernel * kernel)?;
        let weight = src.conv_weight(&format!("{prefix}.conv.weight"), [out_c, in_c, kernel, kernel])?;
        let bn = src.batch_norm(&format!("{prefix}.bn"), out_c)?;
        Ok(Self {
            offset_weight,
            offset_bias,
            weight,
            bn,
            params: ConvParams::new(stride, kernel / 2),
            act,
        })
    }

    pub fn kernel(&self) -> (usize, usize) {
        let [_, _, kh, kw] = self.weight.dims();
        (kh, kw)
    }

    pub fn offsets(&self, x: &Tensor) -> Result<OffsetField> {
        let (kh, kw) = self.kernel();
        dcn_offsets(x, &self.offset_weight, Some(&self.offset_bias), self.params, kh, kw)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let offsets = self.offsets(x)?;
        let y = deform_conv2d(x, &self.weight, &offsets, self.params)?;
        let mut y = self.bn.forward(&y)?;
        if let Some(act) = self.act {
            activate_in_place(&mut y, act);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bilinear_sample;
    use crate::weights::Initializer;

    fn pattern(dims: [usize; 4], k: f32) -> Tensor {
        Tensor::from_fn(dims, |[n, c, y, x]| ((n * 31 + c * 17 + y * 7 + x * 3) as f32 * k).sin())
    }

    #[test]
    fn zero_offset_weights_give_zero_field() {
        let x = pattern([1, 3, 6, 6], 0.7);
        let w = Tensor::zeros([18, 3, 3, 3]);
        let f = dcn_offsets(&x, &w, Some(&[0.0; 18]), ConvParams::new(1, 1), 3, 3).unwrap();
        assert_eq!(f.tensor().dims(), [1, 18, 6, 6]);
        assert!(f.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offsets_reject_wrong_channel_count() {
        let x = pattern([1, 3, 6, 6], 0.7);
        let w = Tensor::zeros([6, 3, 3, 3]);
        assert!(matches!(
            dcn_offsets(&x, &w, None, ConvParams::new(1, 1), 3, 3),
            Err(Error::Dimension { axis: "offset output channels", .. })
        ));
    }

    #[test]
    fn offsets_are_plain_conv() {
        let x = pattern([2, 3, 7, 5], 0.3);
        let w = pattern([18, 3, 3, 3], 1.1);
        let b: Vec<f32> = (0..18).map(|i| i as f32 * 0.01).collect();
        let p = ConvParams::new(2, 1);
        let f = dcn_offsets(&x, &w, Some(&b), p, 3, 3).unwrap();
        assert_eq!(f.tensor(), &conv2d(&x, &w, Some(&b), p).unwrap());
    }

    #[test]
    fn zero_offsets_match_conv() {
        let x = pattern([2, 4, 9, 7], 0.41);
        let w = pattern([5, 4, 3, 3], 0.9);
        for p in [ConvParams::new(1, 1), ConvParams::new(2, 1), ConvParams::new(1, 0)] {
            let oh = p.out_size(9, 3).unwrap();
            let ow = p.out_size(7, 3).unwrap();
            let y = deform_conv2d(&x, &w, &OffsetField::zeros(2, 3, 3, oh, ow), p).unwrap();
            let r = conv2d(&x, &w, None, p).unwrap();
            assert!(y.max_abs_diff(&r) <= 1e-5);
        }
    }

    #[test]
    fn single_tap_reads_displaced_point() {
        // Only the centre tap is non-zero; at output (2, 2) it reads pixel
        // (x=2, y=2). Shift it by dx = -0.8, dy = +1.2 -> (1.2, 3.2).
        let x = pattern([1, 1, 6, 6], 0.77);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.set(0, 0, 1, 1, 1.0);
        let mut off = OffsetField::zeros(1, 3, 3, 6, 6);
        off.set(0, 4, 2, 2, 1.2, -0.8);
        let y = deform_conv2d(&x, &w, &off, ConvParams::new(1, 1)).unwrap();
        let expect = bilinear_sample(&x, 0, 0, 1.2, 3.2);
        assert!((y.get(0, 0, 2, 2) - expect).abs() < 1e-6);
        assert_eq!(y.get(0, 0, 2, 3), x.get(0, 0, 2, 3));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let x = pattern([1, 2, 6, 6], 0.5);
        let w = pattern([3, 2, 3, 3], 0.5);
        let off = OffsetField::zeros(1, 3, 3, 5, 6);
        assert!(matches!(
            deform_conv2d(&x, &w, &off, ConvParams::new(1, 1)),
            Err(Error::Dimension { axis: "offset height", .. })
        ));
    }

    #[test]
    fn layer_shape_and_determinism() {
        let mut init = Initializer::new(21);
        let layer = DeformConvLayer::build(&mut init, "d", 64, 32, 3, 1, Some(Activation::LeakyRelu(0.1))).unwrap();
        let x = pattern([1, 64, 20, 20], 0.13);
        let a = layer.forward(&x).unwrap();
        let b = layer.forward(&x).unwrap();
        assert_eq!(a.dims(), [1, 32, 20, 20]);
        assert_eq!(a.data(), b.data());
    }
}
