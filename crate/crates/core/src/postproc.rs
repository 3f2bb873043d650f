//! Image preprocessing, detection decoding and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::anchors::{decode_box, decode_landmark, BBox, PriorBox, Variances};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::neck::RawPredictions;
use crate::nn::bilinear_upsample;
use crate::tensor::Tensor;

/// Per-channel means subtracted from the network input, BGR order.
pub const BGR_MEANS: [f32; 3] = [104.0, 117.0, 123.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub conf_threshold: f32,
    pub nms_iou: f32,
    /// Upper bound on the long image side after resizing.
    pub max_len: usize,
    /// Upper bound on the short image side after resizing.
    pub max_wid: usize,
    pub variances: Variances,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.5,
            nms_iou: 0.4,
            max_len: 1560,
            max_wid: 1200,
            variances: Variances::default(),
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("conf_threshold", self.conf_threshold), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Input(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_len == 0 || self.max_wid == 0 {
            return Err(Error::Input("resize limits must be positive".into()));
        }
        if !(self.variances.0 > 0.0 && self.variances.1 > 0.0) {
            return Err(Error::Input("variances must be positive".into()));
        }
        Ok(())
    }
}

/// A face in original-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f32,
    pub landmarks: [[f32; 2]; 5],
}

/// Intersection over union; 0 when either box has zero area or they are disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

/// Greedy suppression. Returns the kept detections, highest score first;
/// equal scores keep input order. A candidate is dropped when its IoU with a
/// kept box exceeds `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f32) -> Vec<Detection> {
    nms_indices(dets, iou_thresh)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

pub fn nms_indices(dets: &[Detection], iou_thresh: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        keep.push(i);
        for (later, &j) in order.iter().enumerate().skip(pos + 1) {
            if !suppressed[later] && iou(&dets[i].bbox, &dets[j].bbox) > iou_thresh {
                suppressed[later] = true;
            }
        }
    }
    keep
}

/// `min(max_len / long_side, max_wid / short_side)`.
pub fn resize_scale(height: usize, width: usize, cfg: &PostprocConfig) -> f64 {
    let long = height.max(width) as f64;
    let short = height.min(width) as f64;
    (cfg.max_len as f64 / long).min(cfg.max_wid as f64 / short)
}

/// Network-ready image plus the mapping back to the original.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    /// `[1, 3, H', W']`, BGR, mean-subtracted.
    pub tensor: Tensor,
    pub scale: f64,
    pub orig_height: usize,
    pub orig_width: usize,
}

impl Preprocessed {
    pub fn net_height(&self) -> usize {
        self.tensor.height()
    }

    pub fn net_width(&self) -> usize {
        self.tensor.width()
    }
}

/// Converts to BGR floats minus [`BGR_MEANS`] and, when `resize` is set,
/// rescales proportionally so the long side fits `max_len` and the short side
/// fits `max_wid`, with one of the two bounds reached.
pub fn preprocess(image: &RgbImage, cfg: &PostprocConfig, resize: bool) -> Result<Preprocessed> {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::Input("image has a zero dimension".into()));
    }
    let mut t = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = image.pixel(x, y);
            t.set(0, 0, y, x, b as f32 - BGR_MEANS[0]);
            t.set(0, 1, y, x, g as f32 - BGR_MEANS[1]);
            t.set(0, 2, y, x, r as f32 - BGR_MEANS[2]);
        }
    }
    if !resize {
        return Ok(Preprocessed {
            tensor: t,
            scale: 1.0,
            orig_height: h,
            orig_width: w,
        });
    }
    let scale = resize_scale(h, w, cfg);
    let nh = ((h as f64 * scale).round() as usize).max(1);
    let nw = ((w as f64 * scale).round() as usize).max(1);
    let tensor = if (nh, nw) == (h, w) { t } else { bilinear_upsample(&t, nh, nw)? };
    Ok(Preprocessed {
        tensor,
        scale,
        orig_height: h,
        orig_width: w,
    })
}

/// Two-way softmax probability of the face class (column 0).
pub fn face_probability(logits: &[f32; 2]) -> f32 {
    1.0 / (1.0 + (logits[1] - logits[0]).exp())
}

/// Geometry needed to map normalised predictions back to the original image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGeometry {
    pub net_height: usize,
    pub net_width: usize,
    pub scale: f64,
    pub orig_height: usize,
    pub orig_width: usize,
}

impl From<&Preprocessed> for ImageGeometry {
    fn from(p: &Preprocessed) -> Self {
        Self {
            net_height: p.net_height(),
            net_width: p.net_width(),
            scale: p.scale,
            orig_height: p.orig_height,
            orig_width: p.orig_width,
        }
    }
}

/// Score threshold, decode, map to original pixels, clip, then NMS.
pub fn postprocess(raw: &RawPredictions, priors: &[PriorBox], cfg: &PostprocConfig, geom: ImageGeometry) -> Result<Vec<Detection>> {
    if raw.len() != priors.len() || raw.box_deltas.len() != priors.len() || raw.landmark_deltas.len() != priors.len() {
        return Err(Error::dim("postprocess", "prediction rows", priors.len(), raw.len()));
    }
    let sx = (geom.net_width as f64 / geom.scale) as f32;
    let sy = (geom.net_height as f64 / geom.scale) as f32;
    let (ow, oh) = (geom.orig_width as f32, geom.orig_height as f32);
    let mut dets = Vec::new();
    for (i, prior) in priors.iter().enumerate() {
        let score = face_probability(&raw.class_logits[i]);
        if score.is_nan() || score < cfg.conf_threshold {
            continue;
        }
        let bbox = decode_box(&raw.box_deltas[i], prior, cfg.variances).scale(sx, sy).clip(ow, oh);
        if bbox.width() <= 0.0 || bbox.height() <= 0.0 {
            continue;
        }
        let landmarks = decode_landmark(&raw.landmark_deltas[i], prior, cfg.variances).map(|[x, y]| [x * sx, y * sy]);
        dets.push(Detection { bbox, score, landmarks });
    }
    Ok(nms(&dets, cfg.nms_iou))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f32, y1: f32, x2: f32, y2: f32, score: f32) -> Detection {
        Detection {
            bbox: BBox::new(x1, y1, x2, y2),
            score,
            landmarks: [[0.0; 2]; 5],
        }
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-6);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)), 0.0);
        // Touching edges.
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 4.0, 2.0)), 0.0);
    }

    #[test]
    fn nms_basic() {
        let one = vec![det(0.0, 0.0, 1.0, 1.0, 0.7)];
        assert_eq!(nms(&one, 0.4), one);
        let two = vec![det(0.0, 0.0, 2.0, 2.0, 0.8), det(0.0, 0.0, 2.0, 2.0, 0.9)];
        let kept = nms(&two, 0.4);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU exactly 1/3 is kept at threshold 1/3.
        let a = det(0.0, 0.0, 2.0, 1.0, 0.9);
        let b = det(1.0, 0.0, 3.0, 1.0, 0.8);
        assert_eq!(nms(&[a.clone(), b.clone()], 1.0 / 3.0).len(), 2);
        assert_eq!(nms(&[a, b], 0.3).len(), 1);
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let dets = vec![det(0.0, 0.0, 1.0, 1.0, 0.5), det(0.0, 0.0, 1.0, 1.0, 0.5)];
        assert_eq!(nms_indices(&dets, 0.4), vec![0]);
    }

    #[test]
    fn scale_worked_cases() {
        let cfg = PostprocConfig::default();
        assert_eq!(resize_scale(480, 640, &cfg), 2.4375);
        assert_eq!(resize_scale(1000, 3000, &cfg), 0.52);
        assert_eq!(resize_scale(500, 500, &cfg), 2.4);
    }

    #[test]
    fn preprocess_dims_and_means() {
        let img = RgbImage::filled(64, 48, [123, 117, 104]);
        let p = preprocess(&img, &PostprocConfig::default(), true).unwrap();
        assert_eq!(p.tensor.dims(), [1, 3, 1170, 1560]);
        assert_eq!(p.scale, 24.375);
        // Colour equal to the means -> zero everywhere.
        assert!(p.tensor.data().iter().all(|&v| v == 0.0));

        let img = RgbImage::filled(5, 3, [10, 20, 30]);
        let p = preprocess(&img, &PostprocConfig::default(), false).unwrap();
        assert_eq!(p.tensor.dims(), [1, 3, 3, 5]);
        assert_eq!(p.tensor.get(0, 0, 0, 0), 30.0 - 104.0);
        assert_eq!(p.tensor.get(0, 2, 2, 4), 10.0 - 123.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PostprocConfig::default();
        cfg.validate().unwrap();
        cfg.conf_threshold = 1.1;
        assert!(cfg.validate().is_err());
        let parsed: PostprocConfig = serde_json::from_str(r#"{"nms_iou": 0.3}"#).unwrap();
        assert_eq!(parsed.nms_iou, 0.3);
        assert_eq!(parsed.conf_threshold, 0.5);
        assert!(serde_json::from_str::<PostprocConfig>(r#"{"nms": 0.3}"#).is_err());
    }

    #[test]
    fn background_logits_give_nothing() {
        let priors = crate::anchors::generate_priors(64, 64, &Default::default());
        let n = priors.len();
        let raw = RawPredictions {
            class_logits: vec![[-10.0, 10.0]; n],
            box_deltas: vec![[0.0; 4]; n],
            landmark_deltas: vec![[0.0; 10]; n],
        };
        let geom = ImageGeometry {
            net_height: 64,
            net_width: 64,
            scale: 1.0,
            orig_height: 64,
            orig_width: 64,
        };
        assert!(postprocess(&raw, &priors, &PostprocConfig::default(), geom).unwrap().is_empty());
    }

    #[test]
    fn single_forced_anchor() {
        let priors = crate::anchors::generate_priors(64, 64, &Default::default());
        let n = priors.len();
        let mut raw = RawPredictions {
            class_logits: vec![[-10.0, 10.0]; n],
            box_deltas: vec![[0.0; 4]; n],
            landmark_deltas: vec![[0.0; 10]; n],
        };
        // 0.99 face probability on anchor 40 (level 1, pixel (2, 4), size 16).
        let k = 40;
        raw.class_logits[k] = [(0.99f32 / 0.01).ln(), 0.0];
        let geom = ImageGeometry {
            net_height: 64,
            net_width: 64,
            scale: 2.0,
            orig_height: 32,
            orig_width: 32,
        };
        let dets = postprocess(&raw, &priors, &PostprocConfig::default(), geom).unwrap();
        assert_eq!(dets.len(), 1);
        assert!((dets[0].score - 0.99).abs() < 1e-6);
        let p = priors[k];
        let b = dets[0].bbox;
        assert!((b.x1 - (p.cx - p.w / 2.0) * 32.0).abs() < 1e-4);
        assert!((b.y2 - (p.cy + p.h / 2.0) * 32.0).abs() < 1e-4);
        assert!((dets[0].landmarks[2][0] - p.cx * 32.0).abs() < 1e-4);
    }
}
