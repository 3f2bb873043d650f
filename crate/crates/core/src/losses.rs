//! Classification and regression losses, their closed-form gradients, the
//! cross-entropy -> focal switch schedule, and prior/ground-truth matching.
//!
//! Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.

use serde::{Deserialize, Serialize};

use crate::anchors::{encode_box, BBox, PriorBox, Variances};
use crate::error::{Error, Result};
use crate::postproc::iou;

pub const EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn is_positive(y: u8) -> bool {
    y != 0
}

/// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_sum(xs: &[f64]) -> f64 {
    xs.iter().map(|&x| smooth_l1(x)).sum()
}

/// Binary cross-entropy of one sample; `y` is 0 or 1.
pub fn cross_entropy(p: f64, y: u8) -> f64 {
    let p = clamp_prob(p);
    if is_positive(y) {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Batch mean of [`cross_entropy`]. Empty batches give 0.
pub fn cross_entropy_mean(samples: &[(f64, u8)]) -> f64 {
    mean(samples.iter().map(|&(p, y)| cross_entropy(p, y)), samples.len())
}

/// Probability assigned to the true class.
pub fn p_t(p: f64, y: u8) -> f64 {
    if is_positive(y) {
        p
    } else {
        1.0 - p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Positive-class weight in `[0, 1]`; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent, `>= 0`.
    pub gamma: f64,
    pub schedule_switch_epoch: u32,
    pub total_epochs: u32,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            schedule_switch_epoch: 245,
            total_epochs: 250,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Input(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Input(format!("gamma {} outside [0, inf)", self.gamma)));
        }
        if self.schedule_switch_epoch > self.total_epochs {
            return Err(Error::Input("switch epoch exceeds total epochs".into()));
        }
        Ok(())
    }

    pub fn alpha_t(&self, y: u8) -> f64 {
        if is_positive(y) {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

/// `(1 - p_t)^gamma`, with `0^0 = 1`.
pub fn modulating_factor(pt: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - pt).powf(gamma)
    }
}

/// `-alpha_t (1 - p_t)^gamma log(p_t)`.
pub fn focal_loss(p: f64, y: u8, params: &LossParams) -> f64 {
    let pt = p_t(clamp_prob(p), y);
    -params.alpha_t(y) * modulating_factor(pt, params.gamma) * pt.ln()
}

pub fn focal_loss_mean(samples: &[(f64, u8)], params: &LossParams) -> f64 {
    mean(samples.iter().map(|&(p, y)| focal_loss(p, y, params)), samples.len())
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLoss {
    CrossEntropy,
    Focal,
}

/// Cross-entropy before the switch epoch, focal loss from it onwards.
pub fn loss_schedule(epoch: u32, params: &LossParams) -> Result<ClassLoss> {
    if epoch >= params.total_epochs {
        return Err(Error::Input(format!(
            "epoch {epoch} outside [0, {})",
            params.total_epochs
        )));
    }
    Ok(if epoch < params.schedule_switch_epoch {
        ClassLoss::CrossEntropy
    } else {
        ClassLoss::Focal
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Focal,
    SmoothL1,
}

/// Derivative of a per-sample loss with respect to its input: the
/// probability `p` for `CrossEntropy` / `Focal`, the residual `x` for
/// `SmoothL1` (`y` is ignored there).
///
/// Focal, with `p_t` the true-class probability and `s = +1` for `y = 1`,
/// `-1` for `y = 0` (so `dp_t/dp = s`):
/// `dFL/dp = s * alpha_t * (gamma (1-p_t)^(gamma-1) log p_t - (1-p_t)^gamma / p_t)`.
pub fn loss_gradient(value: f64, y: u8, params: &LossParams, kind: LossKind) -> f64 {
    match kind {
        LossKind::SmoothL1 => {
            if value.abs() < 1.0 {
                value
            } else {
                value.signum()
            }
        }
        LossKind::CrossEntropy => {
            let p = clamp_prob(value);
            if is_positive(y) {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        }
        LossKind::Focal => {
            let p = clamp_prob(value);
            let pt = p_t(p, y);
            let sign = if is_positive(y) { 1.0 } else { -1.0 };
            let g = params.gamma;
            let pull = if g == 0.0 {
                0.0
            } else {
                g * (1.0 - pt).powf(g - 1.0) * pt.ln()
            };
            sign * params.alpha_t(y) * (pull - modulating_factor(pt, g) / pt)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub labels: Vec<MatchLabel>,
    /// Matched ground-truth index for positives.
    pub matched_gt: Vec<Option<usize>>,
    /// Encoded regression target for positives.
    pub targets: Vec<Option<[f32; 4]>>,
}

impl MatchResult {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == MatchLabel::Positive).count()
    }
}

/// Assigns priors to ground truth (both in normalised coordinates).
///
/// A prior is positive when its best IoU reaches `pos_iou` or when it is the
/// best prior of some ground-truth box (later boxes win contested priors);
/// negative when its best IoU is below `neg_iou`; ignored otherwise.
pub fn match_priors(priors: &[PriorBox], gts: &[BBox], pos_iou: f32, neg_iou: f32, v: Variances) -> Result<MatchResult> {
    if priors.is_empty() {
        return Err(Error::Input("match_priors needs at least one prior".into()));
    }
    let n = priors.len();
    let corners: Vec<BBox> = priors.iter().map(PriorBox::to_corners).collect();
    let mut best_iou = vec![0.0f32; n];
    let mut best_gt: Vec<Option<usize>> = vec![None; n];
    let mut forced: Vec<Option<usize>> = vec![None; n];

    for (g, gt) in gts.iter().enumerate() {
        let mut best_prior = 0;
        let mut best_prior_iou = f32::NEG_INFINITY;
        for (i, c) in corners.iter().enumerate() {
            let o = iou(c, gt);
            if o > best_iou[i] || best_gt[i].is_none() {
                best_iou[i] = o;
                best_gt[i] = Some(g);
            }
            if o > best_prior_iou {
                best_prior_iou = o;
                best_prior = i;
            }
        }
        forced[best_prior] = Some(g);
    }

    let mut labels = Vec::with_capacity(n);
    let mut matched_gt = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let gt = forced[i].or(if best_iou[i] >= pos_iou { best_gt[i] } else { None });
        match gt {
            Some(g) => {
                labels.push(MatchLabel::Positive);
                matched_gt.push(Some(g));
                targets.push(Some(encode_box(&gts[g], &priors[i], v)));
            }
            None => {
                labels.push(if best_iou[i] < neg_iou { MatchLabel::Negative } else { MatchLabel::Ignore });
                matched_gt.push(None);
                targets.push(None);
            }
        }
    }
    Ok(MatchResult {
        labels,
        matched_gt,
        targets,
    })
}
