//! The complete network: backbone, pyramid, context modules and heads.

use crate::backbone::{Backbone, BackboneSpec, StageTaps};
use crate::error::{Error, Result};
use crate::neck::{predict_heads, Fpn, LevelHead, PyramidLevels, RawPredictions, SshContext, ANCHORS_PER_POSITION, NECK_CHANNELS};
use crate::tensor::Tensor;
use crate::weights::{Initializer, Loader, ParamShape, ParamSource, ShapeWalker, WeightStore};

/// Top-level parameter name prefixes, in construction order.
pub const MODULE_PREFIXES: [(&str, &str); 4] = [
    ("backbone", "backbone."),
    ("fpn", "fpn."),
    ("context", "context."),
    ("heads", "heads."),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectorConfig {
    pub backbone: BackboneSpec,
    pub neck_channels: usize,
    pub anchors_per_position: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::lafd(),
            neck_channels: NECK_CHANNELS,
            anchors_per_position: ANCHORS_PER_POSITION,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub contexts: [SshContext; 3],
    pub heads: [LevelHead; 3],
}

/// Intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub taps: StageTaps,
    pub fused: PyramidLevels,
    pub context: PyramidLevels,
    pub predictions: Vec<RawPredictions>,
}

impl Detector {
    pub fn build(src: &mut dyn ParamSource, config: &DetectorConfig) -> Result<Self> {
        let backbone = Backbone::build(src, "backbone", &config.backbone)?;
        let taps = config.backbone.tap_channels();
        let taps: [usize; 3] = taps
            .try_into()
            .map_err(|_| Error::Input("backbone must expose three stage taps".into()))?;
        let c = config.neck_channels;
        let fpn = Fpn::build(src, "fpn", taps, c)?;
        let contexts = [
            SshContext::build(src, "context.0", c)?,
            SshContext::build(src, "context.1", c)?,
            SshContext::build(src, "context.2", c)?,
        ];
        let a = config.anchors_per_position;
        let heads = [
            LevelHead::build(src, "heads.0", c, a)?,
            LevelHead::build(src, "heads.1", c, a)?,
            LevelHead::build(src, "heads.2", c, a)?,
        ];
        Ok(Self {
            config: config.clone(),
            backbone,
            fpn,
            contexts,
            heads,
        })
    }

    /// Seeded random model together with its weight store.
    pub fn init(config: &DetectorConfig, seed: u64) -> Result<(Self, WeightStore)> {
        let mut init = Initializer::new(seed);
        let det = Self::build(&mut init, config)?;
        Ok((det, init.into_store()))
    }

    /// Loads a model, rejecting missing, misshapen or unused weights.
    pub fn from_store(config: &DetectorConfig, store: &WeightStore) -> Result<Self> {
        let mut loader = Loader::new(store);
        let det = Self::build(&mut loader, config)?;
        loader.finish(&param_shapes(config)?)?;
        Ok(det)
    }

    pub fn forward_trace(&self, image: &Tensor) -> Result<ForwardTrace> {
        if image.channels() != self.config.backbone.in_c {
            return Err(Error::dim("detector_forward", "input channels", self.config.backbone.in_c, image.channels()));
        }
        let taps = self.backbone.forward(image)?;
        let fused = self.fpn.forward([&taps.c1, &taps.c2, &taps.c3])?;
        let context = PyramidLevels {
            levels: [
                self.contexts[0].forward(&fused.levels[0])?,
                self.contexts[1].forward(&fused.levels[1])?,
                self.contexts[2].forward(&fused.levels[2])?,
            ],
        };
        let predictions = predict_heads(&context, &self.heads, self.config.anchors_per_position)?;
        Ok(ForwardTrace {
            taps,
            fused,
            context,
            predictions,
        })
    }

    /// Raw predictions for every image in the batch.
    pub fn forward_batch(&self, image: &Tensor) -> Result<Vec<RawPredictions>> {
        Ok(self.forward_trace(image)?.predictions)
    }

    /// Raw predictions for a single-image batch.
    pub fn forward(&self, image: &Tensor) -> Result<RawPredictions> {
        if image.batch() != 1 {
            return Err(Error::dim("detector_forward", "batch", 1, image.batch()));
        }
        Ok(self.forward_batch(image)?.remove(0))
    }
}

/// Every parameter the architecture needs, in construction order.
pub fn param_shapes(config: &DetectorConfig) -> Result<Vec<ParamShape>> {
    let mut walker = ShapeWalker::default();
    Detector::build(&mut walker, config)?;
    Ok(walker.shapes)
}

pub fn init_weights(config: &DetectorConfig, seed: u64) -> Result<WeightStore> {
    Ok(Detector::init(config, seed)?.1)
}
