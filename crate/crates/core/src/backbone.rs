//! MobileNetV3-style backbone with retuned kernel sizes, expansion
//! multipliers and squeeze-excitation placement.
//!
//! The architecture is data: [`BackboneSpec::lafd`] lists one
//! [`BottleneckSpec`] per inverted-residual row, and the network is built by
//! walking that list. Three rows are marked as stage taps; their outputs
//! (40, 112 and 160 channels at strides 8, 16 and 32) feed the detection neck.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{Conv, ConvBnAct};
use crate::nn::{activate_in_place, global_avg_pool, Activation, ConvParams};
use crate::tensor::Tensor;
use crate::weights::{Initializer, Loader, ParamShape, ParamSource, ShapeWalker, WeightStore};

/// Activation column of the architecture table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    /// ReLU.
    Re,
    /// Hard-swish.
    Hs,
}

impl Nonlinearity {
    pub fn activation(self) -> Activation {
        match self {
            Nonlinearity::Re => Activation::Relu,
            Nonlinearity::Hs => Activation::HardSwish,
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Re => "RE",
            Nonlinearity::Hs => "HS",
        })
    }
}

/// One inverted-residual row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BottleneckSpec {
    /// Hidden width is `in_c * expansion`.
    pub expansion: usize,
    pub out_c: usize,
    pub k_size: usize,
    pub stride: usize,
    pub activation: Nonlinearity,
    pub use_se: bool,
    pub is_stage_tap: bool,
}

const fn row(
    expansion: usize,
    out_c: usize,
    k_size: usize,
    stride: usize,
    activation: Nonlinearity,
    use_se: bool,
    is_stage_tap: bool,
) -> BottleneckSpec {
    BottleneckSpec {
        expansion,
        out_c,
        k_size,
        stride,
        activation,
        use_se,
        is_stage_tap,
    }
}

/// Plain conv + BN + activation that opens the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemSpec {
    pub out_c: usize,
    pub k_size: usize,
    pub stride: usize,
    pub activation: Nonlinearity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub in_c: usize,
    pub stem: StemSpec,
    pub rows: Vec<BottleneckSpec>,
    /// Squeeze width is `max(1, hidden / se_reduction)`.
    pub se_reduction: usize,
}

impl BackboneSpec {
    /// The detection backbone, one entry per bottleneck row.
    pub fn lafd() -> Self {
        use Nonlinearity::{Hs, Re};
        Self {
            in_c: 3,
            stem: StemSpec {
                out_c: 16,
                k_size: 3,
                stride: 2,
                activation: Hs,
            },
            rows: vec![
                row(1, 16, 3, 1, Re, false, false),
                row(6, 24, 5, 2, Re, false, false),
                row(3, 24, 7, 1, Re, true, false),
                row(6, 40, 3, 2, Re, true, false),
                row(6, 40, 3, 1, Re, false, false),
                row(3, 40, 5, 1, Re, true, true),
                row(6, 80, 7, 2, Hs, true, false),
                row(6, 80, 3, 1, Hs, false, false),
                row(6, 80, 3, 1, Hs, true, false),
                row(3, 80, 5, 1, Hs, true, false),
                row(6, 112, 7, 1, Hs, false, false),
                row(3, 112, 7, 1, Hs, true, true),
                row(6, 160, 5, 2, Hs, true, false),
                row(6, 160, 5, 1, Hs, true, false),
                row(3, 160, 5, 1, Hs, true, true),
            ],
            se_reduction: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.se_reduction == 0 {
            return Err(Error::Input("se_reduction must be positive".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.k_size % 2 == 0 {
                return Err(Error::Input(format!("row {i}: kernel size {} is even", r.k_size)));
            }
            if r.expansion == 0 || r.out_c == 0 {
                return Err(Error::Input(format!("row {i}: zero expansion or width")));
            }
            if !matches!(r.stride, 1 | 2) {
                return Err(Error::Input(format!("row {i}: stride {} not in {{1, 2}}", r.stride)));
            }
        }
        Ok(())
    }

    /// Input channel count of each row.
    pub fn row_inputs(&self) -> Vec<usize> {
        let mut c = self.stem.out_c;
        self.rows
            .iter()
            .map(|r| std::mem::replace(&mut c, r.out_c))
            .collect()
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.is_stage_tap)
            .map(|r| r.out_c)
            .collect()
    }

    /// Cumulative stride at each stage tap.
    pub fn tap_strides(&self) -> Vec<usize> {
        let mut s = self.stem.stride;
        let mut out = Vec::new();
        for r in &self.rows {
            s *= r.stride;
            if r.is_stage_tap {
                out.push(s);
            }
        }
        out
    }

    /// Tab-separated rendering of the rows in the table's column order:
    /// expansion, out_c, k_size, stride, RE/HS, SE, role.
    pub fn to_table(&self) -> String {
        let mut s = String::from("expansion\tout_c\tk_size\tstride\tRE/HS\tSE\trole\n");
        s.push_str(&format!(
            "-\t{}\t{}\t{}\t{}\t0\t-\n",
            self.stem.out_c, self.stem.k_size, self.stem.stride, self.stem.activation
        ));
        let mut stage = 0;
        for r in &self.rows {
            let role = if r.is_stage_tap {
                stage += 1;
                format!("Stage{stage}")
            } else {
                "-".to_string()
            };
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.expansion, r.out_c, r.k_size, r.stride, r.activation, u8::from(r.use_se), role
            ));
        }
        s
    }
}

/// Squeeze-and-excitation gate: pool, 1x1 reduce + ReLU, 1x1 expand +
/// hard-sigmoid, then per-channel rescale.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Conv,
    pub expand: Conv,
}

impl SqueezeExcite {
    pub fn squeeze_width(channels: usize, reduction: usize) -> usize {
        (channels / reduction).max(1)
    }

    pub fn build(src: &mut dyn ParamSource, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        let squeezed = Self::squeeze_width(channels, reduction);
        Ok(Self {
            reduce: Conv::build(src, &format!("{prefix}.reduce"), channels, squeezed, 1, ConvParams::default())?,
            expand: Conv::build(src, &format!("{prefix}.expand"), squeezed, channels, 1, ConvParams::default())?,
        })
    }

    /// Per-channel gate in `[0, 1]`, shape `[N, C, 1, 1]`.
    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = global_avg_pool(x);
        let mut s = self.reduce.forward(&pooled)?;
        activate_in_place(&mut s, Activation::Relu);
        let mut g = self.expand.forward(&s)?;
        activate_in_place(&mut g, Activation::HardSigmoid);
        Ok(g)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.gate(x)?;
        let [n, c, _, _] = x.dims();
        if g.channels() != c {
            return Err(Error::dim("se_block", "channels", g.channels(), c));
        }
        let mut out = x.clone();
        for ni in 0..n {
            for ci in 0..c {
                let s = g.get(ni, ci, 0, 0);
                for v in out.plane_mut(ni, ci) {
                    *v *= s;
                }
            }
        }
        Ok(out)
    }
}

/// Expand (1x1) -> depthwise (k x k) -> optional SE -> project (1x1, linear),
/// with an identity shortcut when shape is preserved.
#[derive(Clone, Debug)]
pub struct InvertedResidual {
    pub expand: Option<ConvBnAct>,
    pub depthwise: ConvBnAct,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBnAct,
    pub residual: bool,
}

impl InvertedResidual {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        in_c: usize,
        spec: &BottleneckSpec,
        se_reduction: usize,
    ) -> Result<Self> {
        let hidden = in_c * spec.expansion;
        let act = Some(spec.activation.activation());
        let expand = if spec.expansion != 1 {
            Some(ConvBnAct::build(src, &format!("{prefix}.expand"), in_c, hidden, 1, ConvParams::default(), act)?)
        } else {
            None
        };
        let depthwise = ConvBnAct::build(
            src,
            &format!("{prefix}.depthwise"),
            hidden,
            hidden,
            spec.k_size,
            ConvParams::depthwise(spec.stride, spec.k_size / 2, hidden),
            act,
        )?;
        let se = if spec.use_se {
            Some(SqueezeExcite::build(src, &format!("{prefix}.se"), hidden, se_reduction)?)
        } else {
            None
        };
        let project = ConvBnAct::build(src, &format!("{prefix}.project"), hidden, spec.out_c, 1, ConvParams::default(), None)?;
        Ok(Self {
            expand,
            depthwise,
            se,
            project,
            residual: spec.stride == 1 && in_c == spec.out_c,
        })
    }

    pub fn in_channels(&self) -> usize {
        match &self.expand {
            Some(e) => e.weight.dims()[1],
            None => self.depthwise.out_channels(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.in_channels() {
            return Err(Error::dim("inverted_residual", "input channels", self.in_channels(), x.channels()));
        }
        let h = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        let mut h = self.depthwise.forward(&h)?;
        if let Some(se) = &self.se {
            h = se.forward(&h)?;
        }
        let out = self.project.forward(&h)?;
        if self.residual {
            out.add(x)
        } else {
            Ok(out)
        }
    }
}

/// Outputs of the three stage taps, shallowest first.
#[derive(Clone, Debug)]
pub struct StageTaps {
    pub c1: Tensor,
    pub c2: Tensor,
    pub c3: Tensor,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: ConvBnAct,
    pub blocks: Vec<InvertedResidual>,
    tap_rows: Vec<usize>,
}

impl Backbone {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let tap_rows: Vec<usize> = spec
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_stage_tap)
            .map(|(i, _)| i)
            .collect();
        if tap_rows.len() != 3 {
            return Err(Error::Input(format!(
                "backbone needs exactly 3 stage taps, spec marks {}",
                tap_rows.len()
            )));
        }
        let stem = ConvBnAct::build(
            src,
            &format!("{prefix}.stem"),
            spec.in_c,
            spec.stem.out_c,
            spec.stem.k_size,
            ConvParams::new(spec.stem.stride, spec.stem.k_size / 2),
            Some(spec.stem.activation.activation()),
        )?;
        let blocks = spec
            .rows
            .iter()
            .zip(spec.row_inputs())
            .enumerate()
            .map(|(i, (r, in_c))| {
                InvertedResidual::build(src, &format!("{prefix}.blocks.{i}"), in_c, r, spec.se_reduction)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stem,
            blocks,
            tap_rows,
        })
    }

    /// Loads and validates a backbone-only store (names prefixed `backbone`).
    pub fn from_store(spec: &BackboneSpec, store: &WeightStore) -> Result<Self> {
        let mut loader = Loader::new(store);
        let backbone = Self::build(&mut loader, "backbone", spec)?;
        loader.finish(&param_shapes(spec)?)?;
        Ok(backbone)
    }

    pub fn forward(&self, image: &Tensor) -> Result<StageTaps> {
        let mut x = self.stem.forward(image)?;
        let mut taps = Vec::with_capacity(3);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if self.tap_rows.contains(&i) {
                taps.push(x.clone());
            }
        }
        let mut taps = taps.into_iter();
        Ok(StageTaps {
            c1: taps.next().expect("three taps"),
            c2: taps.next().expect("three taps"),
            c3: taps.next().expect("three taps"),
        })
    }
}

/// Shapes of every backbone parameter, in construction order.
pub fn param_shapes(spec: &BackboneSpec) -> Result<Vec<ParamShape>> {
    let mut walker = ShapeWalker::default();
    Backbone::build(&mut walker, "backbone", spec)?;
    Ok(walker.shapes)
}

/// Seeded backbone initialisation, conv weights He-uniform, BN at identity.
pub fn init_weights(spec: &BackboneSpec, seed: u64) -> Result<WeightStore> {
    let mut init = Initializer::new(seed);
    Backbone::build(&mut init, "backbone", spec)?;
    Ok(init.into_store())
}

/// The classification tail that follows the last stage in a classifier
/// network: 1x1 conv to 960 (BN, h-swish), global pool, 1x1 conv to 1280
/// (no BN, h-swish) and 1x1 conv to `class_num` (no BN). Not part of the
/// detection graph.
#[derive(Clone, Debug)]
pub struct ClassifierTail {
    pub conv: ConvBnAct,
    pub hidden: Conv,
    pub classifier: Conv,
}

impl ClassifierTail {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, in_c: usize, class_num: usize) -> Result<Self> {
        Ok(Self {
            conv: ConvBnAct::build(src, &format!("{prefix}.conv"), in_c, 960, 1, ConvParams::default(), Some(Activation::HardSwish))?,
            hidden: Conv::build(src, &format!("{prefix}.hidden"), 960, 1280, 1, ConvParams::default())?,
            classifier: Conv::build(src, &format!("{prefix}.classifier"), 1280, class_num, 1, ConvParams::default())?,
        })
    }

    /// Class logits `[N, class_num, 1, 1]` from the last stage output.
    pub fn forward(&self, c3: &Tensor) -> Result<Tensor> {
        let x = self.conv.forward(c3)?;
        let pooled = global_avg_pool(&x);
        let mut h = self.hidden.forward(&pooled)?;
        activate_in_place(&mut h, Activation::HardSwish);
        self.classifier.forward(&h)
    }
}
