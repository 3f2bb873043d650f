//! Feature pyramid fusion, SSH context modules built from deformable
//! convolutions, and the per-level prediction heads.

use crate::error::{Error, Result};
use crate::dcn::DeformConvLayer;
use crate::layers::{Conv, ConvBnAct};
use crate::nn::{activate_in_place, bilinear_upsample, Activation, ConvParams};
use crate::tensor::Tensor;
use crate::weights::ParamSource;

pub const NECK_CHANNELS: usize = 64;
pub const LEAKY_SLOPE: f32 = 0.1;
pub const ANCHORS_PER_POSITION: usize = 2;

fn leaky() -> Option<Activation> {
    Some(Activation::LeakyRelu(LEAKY_SLOPE))
}

/// Three same-width maps, shallowest (largest) first.
#[derive(Clone, Debug)]
pub struct PyramidLevels {
    pub levels: [Tensor; 3],
}

/// 1x1 conv + BN + LeakyReLU projecting a stage tap to the neck width.
pub fn build_lateral(src: &mut dyn ParamSource, prefix: &str, in_c: usize, neck_c: usize) -> Result<ConvBnAct> {
    ConvBnAct::build(src, prefix, in_c, neck_c, 1, ConvParams::default(), leaky())
}

/// Top-down fusion: `K3 = C3'`, `K2 = smooth(C2' + up(K3))`,
/// `K1 = smooth(C1' + up(K2))`, where `up` is bilinear resize to the finer
/// level's size.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub laterals: [ConvBnAct; 3],
    /// Smoothing after the level-1 and level-2 sums.
    pub smooth: [ConvBnAct; 2],
}

impl Fpn {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, tap_channels: [usize; 3], neck_c: usize) -> Result<Self> {
        let laterals = [
            build_lateral(src, &format!("{prefix}.lateral.0"), tap_channels[0], neck_c)?,
            build_lateral(src, &format!("{prefix}.lateral.1"), tap_channels[1], neck_c)?,
            build_lateral(src, &format!("{prefix}.lateral.2"), tap_channels[2], neck_c)?,
        ];
        let smooth = [
            ConvBnAct::build(src, &format!("{prefix}.smooth.0"), neck_c, neck_c, 3, ConvParams::new(1, 1), leaky())?,
            ConvBnAct::build(src, &format!("{prefix}.smooth.1"), neck_c, neck_c, 3, ConvParams::new(1, 1), leaky())?,
        ];
        Ok(Self { laterals, smooth })
    }

    pub fn project(&self, taps: [&Tensor; 3]) -> Result<[Tensor; 3]> {
        Ok([
            self.laterals[0].forward(taps[0])?,
            self.laterals[1].forward(taps[1])?,
            self.laterals[2].forward(taps[2])?,
        ])
    }

    /// Fuses already-projected levels.
    pub fn fuse(&self, projected: [Tensor; 3]) -> Result<PyramidLevels> {
        let [p1, p2, p3] = projected;
        let c = p3.channels();
        for p in [&p1, &p2] {
            if p.channels() != c {
                return Err(Error::dim("fpn_fuse", "channels", c, p.channels()));
            }
        }
        let k3 = p3;
        let up3 = bilinear_upsample(&k3, p2.height(), p2.width())?;
        let k2 = self.smooth[1].forward(&p2.add(&up3)?)?;
        let up2 = bilinear_upsample(&k2, p1.height(), p1.width())?;
        let k1 = self.smooth[0].forward(&p1.add(&up2)?)?;
        Ok(PyramidLevels { levels: [k1, k2, k3] })
    }

    pub fn forward(&self, taps: [&Tensor; 3]) -> Result<PyramidLevels> {
        self.fuse(self.project(taps)?)
    }
}

/// Three parallel branches of one, two and three 3x3 deformable conv layers
/// (widths `c/2`, `c/4`, `c/4`), concatenated and passed through ReLU.
#[derive(Clone, Debug)]
pub struct SshContext {
    pub branch_a: DeformConvLayer,
    pub branch_b: [DeformConvLayer; 2],
    pub branch_c: [DeformConvLayer; 3],
}

impl SshContext {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, neck_c: usize) -> Result<Self> {
        if !neck_c.is_multiple_of(4) {
            return Err(Error::Input(format!("SSH width {neck_c} is not a multiple of 4")));
        }
        let (half, quarter) = (neck_c / 2, neck_c / 4);
        let mut layer = |name: String, i: usize, o: usize| DeformConvLayer::build(src, &name, i, o, 3, 1, leaky());
        Ok(Self {
            branch_a: layer(format!("{prefix}.a.0"), neck_c, half)?,
            branch_b: [
                layer(format!("{prefix}.b.0"), neck_c, quarter)?,
                layer(format!("{prefix}.b.1"), quarter, quarter)?,
            ],
            branch_c: [
                layer(format!("{prefix}.c.0"), neck_c, quarter)?,
                layer(format!("{prefix}.c.1"), quarter, quarter)?,
                layer(format!("{prefix}.c.2"), quarter, quarter)?,
            ],
        })
    }

    pub fn branches(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        let a = self.branch_a.forward(x)?;
        let b = self.branch_b.iter().try_fold(x.clone(), |h, l| l.forward(&h))?;
        let c = self.branch_c.iter().try_fold(x.clone(), |h, l| l.forward(&h))?;
        Ok([a, b, c])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [a, b, c] = self.branches(x)?;
        let mut out = Tensor::concat_channels(&[&a, &b, &c])?;
        activate_in_place(&mut out, Activation::Relu);
        Ok(out)
    }
}

/// Flattened head outputs for one image.
///
/// Row order is level-major, then row-major over the level's pixels, then
/// anchor index, the same order in which priors are generated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawPredictions {
    /// Column 0 is the face logit, column 1 the background logit.
    pub class_logits: Vec<[f32; 2]>,
    pub box_deltas: Vec<[f32; 4]>,
    pub landmark_deltas: Vec<[f32; 10]>,
}

impl RawPredictions {
    pub fn len(&self) -> usize {
        self.class_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_logits.is_empty()
    }
}

/// 1x1 class / box / landmark convolutions for one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelHead {
    pub class: Conv,
    pub bbox: Conv,
    pub landmark: Conv,
}

impl LevelHead {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, neck_c: usize, anchors: usize) -> Result<Self> {
        let p = ConvParams::default();
        Ok(Self {
            class: Conv::build(src, &format!("{prefix}.class"), neck_c, anchors * 2, 1, p)?,
            bbox: Conv::build(src, &format!("{prefix}.bbox"), neck_c, anchors * 4, 1, p)?,
            landmark: Conv::build(src, &format!("{prefix}.landmark"), neck_c, anchors * 10, 1, p)?,
        })
    }
}

/// Appends the rows of a `[N, anchors*K, H, W]` head output for batch item
/// `n`: row `(y*W + x)*anchors + a` takes channels `a*K .. a*K + K`.
fn flatten_into<const K: usize>(t: &Tensor, n: usize, anchors: usize, out: &mut Vec<[f32; K]>) -> Result<()> {
    if t.channels() != anchors * K {
        return Err(Error::dim("predict_heads", "head channels", anchors * K, t.channels()));
    }
    for y in 0..t.height() {
        for x in 0..t.width() {
            for a in 0..anchors {
                let mut row = [0.0f32; K];
                for (k, r) in row.iter_mut().enumerate() {
                    *r = t.get(n, a * K + k, y, x);
                }
                out.push(row);
            }
        }
    }
    Ok(())
}

/// Runs the heads of every level and flattens into one row per anchor,
/// one [`RawPredictions`] per batch item.
pub fn predict_heads(levels: &PyramidLevels, heads: &[LevelHead; 3], anchors: usize) -> Result<Vec<RawPredictions>> {
    let n = levels.levels[0].batch();
    let mut outs = vec![RawPredictions::default(); n];
    for (level, head) in levels.levels.iter().zip(heads) {
        let cls = head.class.forward(level)?;
        let bbox = head.bbox.forward(level)?;
        let lmk = head.landmark.forward(level)?;
        for (ni, out) in outs.iter_mut().enumerate() {
            flatten_into(&cls, ni, anchors, &mut out.class_logits)?;
            flatten_into(&bbox, ni, anchors, &mut out.box_deltas)?;
            flatten_into(&lmk, ni, anchors, &mut out.landmark_deltas)?;
        }
    }
    Ok(outs)
}
