use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use lafd::anchors::{generate_priors, AnchorConfig, BBox};
use lafd::detector::{self, Detector, DetectorConfig};
use lafd::eval::{load_gt_file, match_detections, precision_recall, synth_scene, GtEntry, ScoredMatch};
use lafd::image::RgbImage;
use lafd::postproc::{postprocess, preprocess, Detection, ImageGeometry, PostprocConfig};
use lafd::report::{DetectionReport, EvalReport, ModelSummary, PriorsReport, ReportDetection, SceneResult};
use lafd::selfcheck::{self, SelfcheckOptions};
use lafd::{weightfile, Error};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or settings (exit 2).
    Usage(String),
    /// A check or evaluation failed (exit 1).
    Failed(String),
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Lib(Error::Input(_)) => 2,
            CliError::Lib(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Lib(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
        .into()
    })
}

/// Flags override the config file, which overrides the defaults.
pub fn postproc_config(file: Option<&Path>, conf: Option<f32>, nms: Option<f32>) -> Result<PostprocConfig> {
    let mut cfg = match file {
        Some(p) => read_json(p)?,
        None => PostprocConfig::default(),
    };
    if let Some(c) = conf {
        cfg.conf_threshold = c;
    }
    if let Some(n) = nms {
        cfg.nms_iou = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn init_weights(out: &Path, seed: u64) -> Result<()> {
    let store = detector::init_weights(&DetectorConfig::default(), seed)?;
    weightfile::save(&store, out)?;
    let s = ModelSummary::from_store(&store);
    println!(
        "wrote {} ({} tensors, {} parameters, {:.1} MB)",
        out.display(),
        s.tensors,
        s.total_parameters,
        s.megabytes()
    );
    Ok(())
}

pub fn summary(weights: &Path) -> Result<()> {
    let store = weightfile::load(weights)?;
    print!("{}", ModelSummary::from_store(&store).render());
    Ok(())
}

fn load_model(weights: &Path) -> Result<Detector> {
    let store = weightfile::load(weights)?;
    Detector::from_store(&DetectorConfig::default(), &store).map_err(|e| {
        Error::Parse {
            path: weights.to_path_buf(),
            message: format!("weights do not fit the architecture: {e}"),
        }
        .into()
    })
}

fn run_detector(model: &Detector, img: &RgbImage, cfg: &PostprocConfig, resize: bool) -> Result<Vec<Detection>> {
    let pre = preprocess(img, cfg, resize)?;
    let raw = model.forward(&pre.tensor)?;
    let priors = generate_priors(pre.net_height(), pre.net_width(), &AnchorConfig::default());
    Ok(postprocess(&raw, &priors, cfg, ImageGeometry::from(&pre))?)
}

fn annotate(img: &RgbImage, dets: &[Detection]) -> RgbImage {
    let mut out = img.clone();
    for d in dets {
        let b = d.bbox;
        out.draw_rect(b.x1, b.y1, b.x2, b.y2, [0, 255, 0]);
        for [x, y] in d.landmarks {
            out.draw_dot(x, y, 1, [255, 0, 0]);
        }
    }
    out
}

pub fn detect(
    weights: &Path,
    image: &Path,
    out: &Path,
    annotate_to: Option<&Path>,
    cfg: &PostprocConfig,
    resize: bool,
) -> Result<()> {
    let model = load_model(weights)?;
    let img = RgbImage::load(image)?;
    let dets = run_detector(&model, &img, cfg, resize)?;
    let report = DetectionReport::new(image.display().to_string(), img.width(), img.height(), &dets);
    write_json(out, &report)?;
    if let Some(p) = annotate_to {
        annotate(&img, &dets).save_ppm(p)?;
    }
    println!("{} faces -> {}", dets.len(), out.display());
    Ok(())
}

pub fn priors(height: usize, width: usize, out: Option<&Path>) -> Result<()> {
    let report = PriorsReport::new(height, width, &AnchorConfig::default());
    match out {
        Some(p) => write_json(p, &report),
        None => {
            let mut text = serde_json::to_string(&report).expect("priors serialize");
            text.push('\n');
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                // A closed pipe (`| head`) is not an error.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e).into()),
                _ => Ok(()),
            }
        }
    }
}

/// One entry of a `--detections-override` file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideEntry {
    image: String,
    detections: Vec<ReportDetection>,
}

pub struct EvalOptions<'a> {
    pub weights: Option<&'a Path>,
    pub scenes: &'a Path,
    pub out: &'a Path,
    pub detections_override: Option<&'a Path>,
    pub iou: f32,
    pub config: &'a PostprocConfig,
    pub resize: bool,
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn gather_scenes(dir: &Path) -> Result<Vec<(PathBuf, Vec<BBox>)>> {
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut gt_files = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            gt_files.push(path);
        }
    }
    gt_files.sort();
    let mut scenes = Vec::new();
    for f in &gt_files {
        scenes.extend(load_gt_file(f)?);
    }
    Ok(scenes)
}

pub fn eval(opts: &EvalOptions) -> Result<()> {
    let scenes = gather_scenes(opts.scenes)?;
    if scenes.is_empty() {
        return Err(CliError::Failed(format!("no scenes in {}", opts.scenes.display())));
    }

    // Override detections are keyed by image file name.
    let overrides: Option<HashMap<String, Vec<ReportDetection>>> = match opts.detections_override {
        Some(p) => {
            let entries: Vec<OverrideEntry> = read_json(p)?;
            Some(entries.into_iter().map(|e| (file_name(Path::new(&e.image)), e.detections)).collect())
        }
        None => None,
    };
    let model = match (&overrides, opts.weights) {
        (None, Some(w)) => Some(load_model(w)?),
        (None, None) => return Err(CliError::Usage("--weights is required without --detections-override".into())),
        _ => None,
    };

    let mut matches = Vec::new();
    let mut results = Vec::with_capacity(scenes.len());
    let mut num_gt = 0;
    for (image, gts) in &scenes {
        let mut dets: Vec<ReportDetection> = match (&overrides, &model) {
            (Some(map), _) => map.get(&file_name(image)).cloned().unwrap_or_default(),
            (None, Some(m)) => {
                let img = RgbImage::load(image)?;
                run_detector(m, &img, opts.config, opts.resize)?.iter().map(ReportDetection::from).collect()
            }
            (None, None) => unreachable!("model loaded when no override is given"),
        };
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let boxes: Vec<BBox> = dets.iter().map(|d| BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])).collect();
        let tp = match_detections(&boxes, gts, opts.iou);
        matches.extend(dets.iter().zip(&tp).map(|(d, &t)| ScoredMatch {
            score: d.score,
            true_positive: t,
        }));
        num_gt += gts.len();
        results.push(SceneResult {
            image: image.display().to_string(),
            num_gt: gts.len(),
            detections: dets,
            true_positive: tp,
        });
    }

    let curve = precision_recall(&matches, num_gt);
    let report = EvalReport {
        iou_threshold: opts.iou,
        num_scenes: results.len(),
        num_gt,
        num_detections: matches.len(),
        ap: curve.ap,
        precision: curve.precision,
        recall: curve.recall,
        scenes: results,
    };
    write_json(opts.out, &report)?;
    match report.ap {
        Some(ap) => println!("AP {ap:.4} over {} scenes, {num_gt} faces", report.num_scenes),
        None => println!("AP undefined: no ground-truth faces in {} scenes", report.num_scenes),
    }
    Ok(())
}

pub fn synth(out: &Path, count: usize, faces: usize, seed: u64, height: usize, width: usize) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (img, scene) = synth_scene(seed.wrapping_add(i as u64), faces, height, width)?;
        let name = format!("scene_{i:03}.ppm");
        img.save_ppm(&out.join(&name))?;
        entries.push(GtEntry {
            image: name,
            boxes: scene.boxes.iter().map(BBox::to_array).collect(),
        });
    }
    write_json(&out.join("gt.json"), &entries)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

pub fn selfcheck(fault: Option<String>) -> Result<()> {
    let report = selfcheck::run(&SelfcheckOptions { fault })?;
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("selfcheck failed: {}", report.failed().join(", "))))
    }
}
