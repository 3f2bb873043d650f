//! Prior boxes and the SSD-style box / landmark transforms.

use serde::{Deserialize, Serialize};

/// Anchor in normalised centre form, relative to the network input size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl PriorBox {
    pub fn to_corners(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Axis-aligned box in corner form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    /// Zero for degenerate (inverted or flat) boxes.
    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn scale(&self, sx: f32, sy: f32) -> Self {
        Self::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn clip(&self, width: f32, height: f32) -> Self {
        Self::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }
}

/// Strides and square anchor sizes (input pixels) per pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub steps: Vec<usize>,
    pub sizes: Vec<Vec<usize>>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            steps: vec![8, 16, 32],
            sizes: vec![vec![16, 32], vec![64, 128], vec![256, 512]],
        }
    }
}

impl AnchorConfig {
    /// Feature-map size `(ceil(h/step), ceil(w/step))` of every level.
    pub fn level_grids(&self, in_h: usize, in_w: usize) -> Vec<(usize, usize)> {
        self.steps
            .iter()
            .map(|&s| (in_h.div_ceil(s), in_w.div_ceil(s)))
            .collect()
    }

    pub fn level_counts(&self, in_h: usize, in_w: usize) -> Vec<usize> {
        self.level_grids(in_h, in_w)
            .iter()
            .zip(&self.sizes)
            .map(|((gh, gw), sizes)| gh * gw * sizes.len())
            .collect()
    }
}

/// Priors for an `in_h x in_w` network input: level-major, then row-major
/// over the level grid, then anchor size.
pub fn generate_priors(in_h: usize, in_w: usize, cfg: &AnchorConfig) -> Vec<PriorBox> {
    let mut out = Vec::with_capacity(cfg.level_counts(in_h, in_w).iter().sum());
    let (fh, fw) = (in_h as f32, in_w as f32);
    for ((gh, gw), (&step, sizes)) in cfg.level_grids(in_h, in_w).into_iter().zip(cfg.steps.iter().zip(&cfg.sizes)) {
        for i in 0..gh {
            for j in 0..gw {
                let cx = (j as f32 + 0.5) * step as f32 / fw;
                let cy = (i as f32 + 0.5) * step as f32 / fh;
                for &s in sizes {
                    out.push(PriorBox {
                        cx,
                        cy,
                        w: s as f32 / fw,
                        h: s as f32 / fh,
                    });
                }
            }
        }
    }
    out
}

/// Centre-offset and log-size scaling factors of the box encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variances(pub f32, pub f32);

impl Default for Variances {
    fn default() -> Self {
        Variances(0.1, 0.2)
    }
}

const MAX_EXP_ARG: f32 = 10.0;

/// `(dx, dy, dw, dh)` relative to `prior` -> normalised corner box.
pub fn decode_box(d: &[f32; 4], prior: &PriorBox, v: Variances) -> BBox {
    let cx = prior.cx + d[0] * v.0 * prior.w;
    let cy = prior.cy + d[1] * v.0 * prior.h;
    let w = prior.w * (d[2] * v.1).min(MAX_EXP_ARG).exp();
    let h = prior.h * (d[3] * v.1).min(MAX_EXP_ARG).exp();
    BBox::from_center(cx, cy, w, h)
}

pub fn decode_boxes(deltas: &[[f32; 4]], priors: &[PriorBox], v: Variances) -> Vec<BBox> {
    deltas.iter().zip(priors).map(|(d, p)| decode_box(d, p, v)).collect()
}

/// Inverse of [`decode_box`] for boxes with positive extent.
pub fn encode_box(b: &BBox, prior: &PriorBox, v: Variances) -> [f32; 4] {
    let (cx, cy) = b.center();
    [
        (cx - prior.cx) / (v.0 * prior.w),
        (cy - prior.cy) / (v.0 * prior.h),
        (b.width() / prior.w).ln() / v.1,
        (b.height() / prior.h).ln() / v.1,
    ]
}

/// Ten offsets -> five `(x, y)` points, normalised.
pub fn decode_landmark(d: &[f32; 10], prior: &PriorBox, v: Variances) -> [[f32; 2]; 5] {
    std::array::from_fn(|k| {
        [
            prior.cx + d[2 * k] * v.0 * prior.w,
            prior.cy + d[2 * k + 1] * v.0 * prior.h,
        ]
    })
}

pub fn decode_landmarks(deltas: &[[f32; 10]], priors: &[PriorBox], v: Variances) -> Vec<[[f32; 2]; 5]> {
    deltas.iter().zip(priors).map(|(d, p)| decode_landmark(d, p, v)).collect()
}

pub fn encode_landmark(points: &[[f32; 2]; 5], prior: &PriorBox, v: Variances) -> [f32; 10] {
    let mut d = [0.0; 10];
    for (k, pt) in points.iter().enumerate() {
        d[2 * k] = (pt[0] - prior.cx) / (v.0 * prior.w);
        d[2 * k + 1] = (pt[1] - prior.cy) / (v.0 * prior.h);
    }
    d
}
