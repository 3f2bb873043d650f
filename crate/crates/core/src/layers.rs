//! Small composite layers shared by the backbone, neck and heads.

use crate::error::Result;
use crate::nn::{activate_in_place, conv2d, Activation, BatchNorm, ConvParams};
use crate::tensor::Tensor;
use crate::weights::ParamSource;

/// Bias-free convolution followed by batch-norm and an optional activation.
#[derive(Clone, Debug)]
pub struct ConvBnAct {
    pub weight: Tensor,
    pub bn: BatchNorm,
    pub params: ConvParams,
    pub act: Option<Activation>,
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        params: ConvParams,
        act: Option<Activation>,
    ) -> Result<Self> {
        let weight = src.conv_weight(
            &format!("{prefix}.conv.weight"),
            [out_c, in_c / params.groups, kernel, kernel],
        )?;
        let bn = src.batch_norm(&format!("{prefix}.bn"), out_c)?;
        Ok(Self {
            weight,
            bn,
            params,
            act,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, None, self.params)?;
        let mut y = self.bn.forward(&y)?;
        if let Some(act) = self.act {
            activate_in_place(&mut y, act);
        }
        Ok(y)
    }
}

/// Plain convolution with bias (no normalisation).
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub params: ConvParams,
}

impl Conv {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        params: ConvParams,
    ) -> Result<Self> {
        let weight = src.conv_weight(
            &format!("{prefix}.weight"),
            [out_c, in_c / params.groups, kernel, kernel],
        )?;
        let bias = src.bias(&format!("{prefix}.bias"), out_c)?;
        Ok(Self {
            weight,
            bias,
            params,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, Some(&self.bias), self.params)
    }
}
