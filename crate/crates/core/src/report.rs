//! JSON report schemas and the model size summary.

use serde::{Deserialize, Serialize};

use crate::anchors::{generate_priors, AnchorConfig, PriorBox};
use crate::detector::MODULE_PREFIXES;
use crate::postproc::Detection;
use crate::weightfile;
use crate::weights::WeightStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDetection {
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub score: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<[[f32; 2]; 5]>,
}

impl From<&Detection> for ReportDetection {
    fn from(d: &Detection) -> Self {
        Self {
            bbox: d.bbox.to_array(),
            score: d.score,
            landmarks: Some(d.landmarks),
        }
    }
}

/// Output of a detection run on one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<ReportDetection>,
}

impl DetectionReport {
    pub fn new(image: impl Into<String>, width: usize, height: usize, dets: &[Detection]) -> Self {
        Self {
            image: image.into(),
            width,
            height,
            detections: dets.iter().map(ReportDetection::from).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorLevel {
    pub step: usize,
    /// Feature-map rows and columns.
    pub grid: [usize; 2],
    pub count: usize,
}

/// Prior boxes for one input size, `[cx, cy, w, h]` normalised to the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorsReport {
    pub height: usize,
    pub width: usize,
    pub total: usize,
    pub levels: Vec<PriorLevel>,
    pub priors: Vec<[f32; 4]>,
}

impl PriorsReport {
    pub fn new(height: usize, width: usize, cfg: &AnchorConfig) -> Self {
        let priors = generate_priors(height, width, cfg);
        let levels = cfg
            .steps
            .iter()
            .zip(cfg.level_grids(height, width))
            .zip(cfg.level_counts(height, width))
            .map(|((&step, (gh, gw)), count)| PriorLevel {
                step,
                grid: [gh, gw],
                count,
            })
            .collect();
        Self {
            height,
            width,
            total: priors.len(),
            levels,
            priors: priors.iter().map(|p| [p.cx, p.cy, p.w, p.h]).collect(),
        }
    }

    pub fn to_priors(&self) -> Vec<PriorBox> {
        self.priors.iter().map(|&[cx, cy, w, h]| PriorBox { cx, cy, w, h }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub image: String,
    pub num_gt: usize,
    pub detections: Vec<ReportDetection>,
    /// Per detection, in the order of `detections`.
    pub true_positive: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f32,
    pub num_scenes: usize,
    pub num_gt: usize,
    pub num_detections: usize,
    /// `null` when the corpus holds no ground truth.
    pub ap: Option<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub scenes: Vec<SceneResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleCount {
    pub module: String,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub modules: Vec<ModuleCount>,
    pub total_parameters: usize,
    pub tensors: usize,
    pub serialized_bytes: usize,
}

/// MiB, the unit of the size column.
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

impl ModelSummary {
    pub fn from_store(store: &WeightStore) -> Self {
        let mut modules: Vec<ModuleCount> = MODULE_PREFIXES
            .iter()
            .map(|(m, p)| ModuleCount {
                module: m.to_string(),
                parameters: store.param_count_with_prefix(p),
            })
            .filter(|m| m.parameters > 0)
            .collect();
        let known: usize = modules.iter().map(|m| m.parameters).sum();
        let other = store.param_count() - known;
        if other > 0 {
            modules.push(ModuleCount {
                module: "other".into(),
                parameters: other,
            });
        }
        Self {
            modules,
            total_parameters: store.param_count(),
            tensors: store.len(),
            serialized_bytes: weightfile::encoded_len(store),
        }
    }

    pub fn megabytes(&self) -> f64 {
        self.serialized_bytes as f64 / BYTES_PER_MB
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for m in &self.modules {
            s.push_str(&format!("{:<10} {:>10} parameters\n", m.module, m.parameters));
        }
        s.push_str(&format!("{:<10} {:>10} parameters\n", "total", self.total_parameters));
        s.push_str(&format!("tensors    {:>10}\n", self.tensors));
        s.push_str(&format!(
            "size       {:>10} bytes ({:.1} MB)\n",
            self.serialized_bytes,
            self.megabytes()
        ));
        s
    }
}
