//! Detection-to-ground-truth matching, all-point interpolated average
//! precision and a synthetic scene generator.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::BBox;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::postproc::iou;

pub const DEFAULT_MATCH_IOU: f32 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BBox>,
    pub difficulty: Vec<Option<String>>,
}

impl GroundTruthScene {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f32, self.height as f32);
        for b in &self.boxes {
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h || b.x2 <= b.x1 || b.y2 <= b.y1 {
                return Err(Error::Input(format!("ground-truth box {:?} outside {}x{}", b.to_array(), self.width, self.height)));
            }
        }
        Ok(())
    }
}

/// Greedy matching of score-sorted detections: each detection takes the
/// highest-IoU still-unmatched ground truth with IoU >= `iou_thresh`
/// (true positive) or is a false positive.
pub fn match_detections(dets: &[BBox], gts: &[BBox], iou_thresh: f32) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f32)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let o = iou(d, gt);
                if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// A scored detection already classified as true or false positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredMatch {
    pub score: f32,
    pub true_positive: bool,
}

/// Matches one scene's detections (any order) against its ground truth.
pub fn match_scene(dets: &[(BBox, f32)], gts: &[BBox], iou_thresh: f32) -> Vec<ScoredMatch> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    let sorted: Vec<BBox> = order.iter().map(|&i| dets[i].0).collect();
    match_detections(&sorted, gts, iou_thresh)
        .into_iter()
        .zip(&order)
        .map(|(tp, &i)| ScoredMatch {
            score: dets[i].1,
            true_positive: tp,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `None` when there is no ground truth.
    pub ap: Option<f64>,
}

/// Precision/recall over the score-sorted pool of matches, and the
/// all-point interpolated AP: `sum (r_i - r_{i-1}) * max_{j >= i} p_j`.
pub fn precision_recall(matches: &[ScoredMatch], num_gt: usize) -> PrCurve {
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    for m in &sorted {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
    }
    let ap = (num_gt > 0).then(|| {
        let mut envelope = precision.clone();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut prev_r = 0.0;
        let mut ap = 0.0;
        for (r, p) in recall.iter().zip(&envelope) {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
        ap
    });
    PrCurve { precision, recall, ap }
}

/// AP over all scenes; `None` when there is no ground truth at all.
pub fn average_precision(matches: &[ScoredMatch], num_gt: usize) -> Option<f64> {
    precision_recall(matches, num_gt).ap
}

/// One entry of a ground-truth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub image: String,
    pub boxes: Vec<[f32; 4]>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GtFile {
    Many(Vec<GtEntry>),
    One(GtEntry),
}

/// Parses a ground-truth JSON file: an array of `{"image", "boxes"}` entries
/// (a single bare entry is also accepted). Image paths are resolved relative
/// to the file's directory.
pub fn load_gt_file(path: &Path) -> Result<Vec<(PathBuf, Vec<BBox>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: GtFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let entries = match parsed {
        GtFile::Many(v) => v,
        GtFile::One(e) => vec![e],
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let boxes = e
                .boxes
                .iter()
                .map(|b| {
                    if b.iter().all(|v| v.is_finite()) && b[2] > b[0] && b[3] > b[1] {
                        Ok(BBox::new(b[0], b[1], b[2], b[3]))
                    } else {
                        Err(Error::Parse {
                            path: path.to_path_buf(),
                            message: format!("malformed box {b:?} for image {}", e.image),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((dir.join(&e.image), boxes))
        })
        .collect()
}

const MIN_FACE: usize = 12;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Renders a deterministic scene of `n_faces` bright elliptical "faces" with
/// dark eye/nose/mouth dots on a textured background.
pub fn synth_scene(seed: u64, n_faces: usize, height: usize, width: usize) -> Result<(RgbImage, GroundTruthScene)> {
    if height == 0 || width == 0 {
        return Err(Error::Input("scene dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::filled(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let base = 40 + ((x / 8 + y / 8) % 2) as u8 * 20;
            let noise: u8 = rng.gen_range(0..24);
            img.put(x, y, [base + noise, base / 2 + noise, base + 10 + noise / 2]);
        }
    }

    let max_face = height.min(width) / 2;
    if n_faces > 0 && max_face < MIN_FACE {
        return Err(Error::Input(format!(
            "a {width}x{height} scene cannot hold a {MIN_FACE}px face"
        )));
    }
    let mut boxes: Vec<BBox> = Vec::with_capacity(n_faces);
    for f in 0..n_faces {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let fw = rng.gen_range(MIN_FACE..=max_face);
            let fh = ((fw as f32 * rng.gen_range(1.1..1.4)) as usize).clamp(MIN_FACE, height);
            if fh > height || fw > width {
                continue;
            }
            let x1 = rng.gen_range(0..=width - fw);
            let y1 = rng.gen_range(0..=height - fh);
            let cand = BBox::new(x1 as f32, y1 as f32, (x1 + fw) as f32, (y1 + fh) as f32);
            if boxes.iter().all(|b| iou(b, &cand) == 0.0) {
                placed = Some(cand);
                break;
            }
        }
        let b = placed.ok_or_else(|| {
            Error::Input(format!("could only place {f} of {n_faces} faces in {width}x{height}"))
        })?;
        draw_face(&mut img, &b, &mut rng);
        boxes.push(b);
    }
    let scene = GroundTruthScene {
        width,
        height,
        difficulty: vec![None; boxes.len()],
        boxes,
    };
    Ok((img, scene))
}

fn draw_face(img: &mut RgbImage, b: &BBox, rng: &mut ChaCha8Rng) {
    let (cx, cy) = b.center();
    let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
    let tone: u8 = rng.gen_range(170..=235);
    let skin = [tone, (tone as f32 * 0.8) as u8, (tone as f32 * 0.65) as u8];
    for y in b.y1 as usize..b.y2 as usize {
        for x in b.x1 as usize..b.x2 as usize {
            let dx = (x as f32 + 0.5 - cx) / rx;
            let dy = (y as f32 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                img.put(x, y, skin);
            }
        }
    }
    let dot = ((rx.min(ry) / 6.0) as i64).max(1);
    let dark = [30, 20, 20];
    for (fx, fy) in [(-0.4, -0.25), (0.4, -0.25), (0.0, 0.1), (-0.3, 0.45), (0.3, 0.45)] {
        img.draw_dot(cx + fx * rx, cy + fy * ry, dot, dark);
    }
}
