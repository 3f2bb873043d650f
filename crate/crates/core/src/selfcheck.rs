//! Built-in oracle suite run by `lafd selfcheck`.
//!
//! Every check compares a library kernel against a slow independent
//! implementation or a hand-derived constant. `SelfcheckOptions::fault`
//! perturbs the library side of one named check so the failure path can be
//! exercised end to end.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{generate_priors, AnchorConfig, BBox};
use crate::backbone::BackboneSpec;
use crate::dcn::{deform_conv2d, OffsetField};
use crate::detector::{self, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::eval::{average_precision, ScoredMatch};
use crate::losses::{
    cross_entropy, focal_loss, loss_gradient, loss_schedule, modulating_factor, smooth_l1, ClassLoss, LossKind,
    LossParams,
};
use crate::nn::{bilinear_sample, conv2d, ConvParams};
use crate::postproc::{iou, nms_indices, resize_scale, Detection, PostprocConfig};
use crate::report::ModelSummary;
use crate::tensor::Tensor;

/// Check names in run order.
pub const CHECKS: [&str; 12] = [
    "priors",
    "model_size",
    "dcn",
    "bilinear",
    "focal",
    "smooth_l1",
    "conv",
    "nms",
    "shapes",
    "resize",
    "schedule",
    "ap",
];

pub const MIN_MODEL_MB: f64 = 8.0;
pub const MAX_MODEL_MB: f64 = 12.5;

#[derive(Clone, Debug, Default)]
pub struct SelfcheckOptions {
    /// Name of a check whose kernel output gets perturbed.
    pub fault: Option<String>,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct SelfcheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SelfcheckReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<12} {:<6} {:>9}  detail\n", "check", "result", "time");
        for o in &self.outcomes {
            s.push_str(&format!(
                "{:<12} {:<6} {:>8.2}s  {}\n",
                o.name,
                if o.passed { "PASS" } else { "FAIL" },
                o.elapsed.as_secs_f64(),
                o.detail
            ));
        }
        let failed = self.failed();
        if failed.is_empty() {
            s.push_str(&format!("all {} checks passed\n", self.outcomes.len()));
        } else {
            s.push_str(&format!("FAILED: {}\n", failed.join(", ")));
        }
        s
    }
}

type CheckResult = std::result::Result<String, String>;

pub fn run(opts: &SelfcheckOptions) -> Result<SelfcheckReport> {
    if let Some(f) = &opts.fault {
        if !CHECKS.contains(&f.as_str()) {
            return Err(Error::Input(format!("unknown check `{f}`, expected one of {}", CHECKS.join(", "))));
        }
    }
    let outcomes = CHECKS
        .iter()
        .map(|&name| run_one(name, opts.fault.as_deref() == Some(name)))
        .collect();
    Ok(SelfcheckReport { outcomes })
}

/// Runs a single named check.
pub fn run_one(name: &'static str, fault: bool) -> CheckOutcome {
    let start = Instant::now();
    let result = match name {
        "priors" => check_priors(fault),
        "model_size" => check_model_size(fault),
        "dcn" => check_dcn(fault),
        "bilinear" => check_bilinear(fault),
        "focal" => check_focal(fault),
        "smooth_l1" => check_smooth_l1(fault),
        "conv" => check_conv(fault),
        "nms" => check_nms(fault),
        "shapes" => check_shapes(fault),
        "resize" => check_resize(fault),
        "schedule" => check_schedule(fault),
        "ap" => check_ap(fault),
        other => Err(format!("no such check `{other}`")),
    };
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn nudge(t: &mut Tensor, fault: bool) {
    if fault {
        if let Some(v) = t.data_mut().first_mut() {
            *v += 1e-3;
        }
    }
}

fn bump(v: f64, fault: bool) -> f64 {
    if fault {
        v + 1e-3
    } else {
        v
    }
}

fn check_priors(fault: bool) -> CheckResult {
    let cfg = AnchorConfig::default();
    let levels = cfg.level_counts(640, 640);
    let total = generate_priors(640, 640, &cfg).len() + usize::from(fault);
    ensure(levels == [12800, 3200, 800], || format!("per-level counts {levels:?}"))?;
    ensure(total == 16800, || format!("640x640 gave {total} priors"))?;
    let single = AnchorConfig {
        steps: vec![8],
        sizes: vec![vec![16, 32]],
    };
    let n = generate_priors(64, 64, &single).len();
    ensure(n == 128, || format!("8x8 level gave {n} priors"))?;
    Ok(format!("{total} = 12800 + 3200 + 800; 8x8x2 = {n}"))
}

fn check_model_size(fault: bool) -> CheckResult {
    let cfg = DetectorConfig::default();
    let store = lib(detector::init_weights(&cfg, 0))?;
    let walked: usize = lib(detector::param_shapes(&cfg))?.iter().map(|s| s.numel()).sum();
    let summary = ModelSummary::from_store(&store);
    ensure(summary.total_parameters == walked, || {
        format!("store holds {} parameters, walker counts {walked}", summary.total_parameters)
    })?;
    let mb = bump(summary.megabytes(), fault) + if fault { MAX_MODEL_MB } else { 0.0 };
    ensure((MIN_MODEL_MB..=MAX_MODEL_MB).contains(&mb), || {
        format!("{mb:.2} MB outside [{MIN_MODEL_MB}, {MAX_MODEL_MB}]")
    })?;
    Ok(format!("{} parameters, {:.1} MB", summary.total_parameters, mb))
}

fn random_tensor(rng: &mut impl Rng, dims: [usize; 4], amp: f32) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-amp..amp))
}

/// Direct nested-loop convolution with explicit bounds tests.
fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, stride: usize, pad: usize, groups: usize) -> Tensor {
    let [n, in_c, h, wd] = x.dims();
    let [out_c, cpg, kh, kw] = w.dims();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let opg = out_c / groups;
    debug_assert_eq!(cpg * groups, in_c);
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    for b in 0..n {
        for o in 0..out_c {
            let g = o / opg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0f64, |bv| bv[o] as f64);
                    for ci in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.get(b, g * cpg + ci, iy as usize, ix as usize) as f64
                                        * w.get(o, ci, ky, kx) as f64;
                                }
                            }
                        }
                    }
                    out.set(b, o, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

fn check_conv(fault: bool) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0A7);
    let mut worst = 0.0f32;
    let mut depthwise = 0;
    let mut done = 0;
    while done < 500 {
        let n = rng.gen_range(1..=2);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let kh = k;
        let kw = if rng.gen_bool(0.2) { [1, 3][rng.gen_range(0..2)] } else { k };
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=k / 2 + 1);
        let h = rng.gen_range(1..=12);
        let w = rng.gen_range(1..=12);
        let (in_c, out_c, groups) = match rng.gen_range(0..3) {
            0 => {
                let c = rng.gen_range(1..=8);
                depthwise += 1;
                (c, c, c)
            }
            1 => {
                let g = rng.gen_range(1..=3);
                (g * rng.gen_range(1..=3), g * rng.gen_range(1..=3), g)
            }
            _ => (rng.gen_range(1..=8), rng.gen_range(1..=8), 1),
        };
        if h + 2 * pad < kh || w + 2 * pad < kw {
            continue;
        }
        let x = random_tensor(&mut rng, [n, in_c, h, w], 1.0);
        let wt = random_tensor(&mut rng, [out_c, in_c / groups, kh, kw], 0.5);
        let bias: Vec<f32> = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias = rng.gen_bool(0.5).then_some(bias);
        let p = ConvParams {
            stride,
            padding: pad,
            groups,
        };
        let mut got = lib(conv2d(&x, &wt, bias.as_deref(), p))?;
        if done == 0 {
            nudge(&mut got, fault);
        }
        let want = conv_oracle(&x, &wt, bias.as_deref(), stride, pad, groups);
        ensure(got.dims() == want.dims(), || format!("shape {:?} vs {:?}", got.dims(), want.dims()))?;
        let d = got.max_abs_diff(&want);
        worst = worst.max(d);
        ensure(d <= 1e-5, || {
            format!("config {done} (k={kh}x{kw} s={stride} p={pad} g={groups}): max |diff| {d:.2e}")
        })?;
        done += 1;
    }
    Ok(format!("500 configs ({depthwise} depthwise), max |diff| {worst:.1e}"))
}

/// Bilinear read written with explicit corner weights.
fn gather(x: &Tensor, n: usize, c: usize, py: f64, px: f64) -> f64 {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let (y0, x0) = (py.floor(), px.floor());
    let (ly, lx) = (py - y0, px - x0);
    let read = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            0.0
        } else {
            x.get(n, c, yy as usize, xx as usize) as f64
        }
    };
    let (y0, x0) = (y0 as isize, x0 as isize);
    (1.0 - ly) * (1.0 - lx) * read(y0, x0)
        + (1.0 - ly) * lx * read(y0, x0 + 1)
        + ly * (1.0 - lx) * read(y0 + 1, x0)
        + ly * lx * read(y0 + 1, x0 + 1)
}

fn dcn_oracle(x: &Tensor, w: &Tensor, off: &OffsetField, stride: usize, pad: usize) -> Tensor {
    let [n, in_c, _, _] = x.dims();
    let [out_c, _, kh, kw] = w.dims();
    let [_, _, oh, ow] = off.tensor().dims();
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    for b in 0..n {
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for c in 0..in_c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (dy, dx) = off.get(b, ky * kw + kx, oy, ox);
                                let py = (oy * stride + ky) as f64 - pad as f64 + dy as f64;
                                let px = (ox * stride + kx) as f64 - pad as f64 + dx as f64;
                                acc += w.get(o, c, ky, kx) as f64 * gather(x, b, c, py, px);
                            }
                        }
                    }
                    out.set(b, o, oy, ox, acc as f32);
                }
            }
        }
    }
    out
}

fn check_dcn(fault: bool) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDC4);
    let (mut worst_zero, mut worst_rand) = (0.0f32, 0.0f32);
    for case in 0..200 {
        let n = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=8);
        let h = rng.gen_range(3..=12);
        let w = rng.gen_range(3..=12);
        let out_c = rng.gen_range(1..=8);
        let k = [1, 3][rng.gen_range(0..2)];
        let stride = rng.gen_range(1..=2);
        let pad = k / 2;
        let p = ConvParams::new(stride, pad);
        let x = random_tensor(&mut rng, [n, c, h, w], 1.0);
        let wt = random_tensor(&mut rng, [out_c, c, k, k], 0.5);
        let oh = p.out_size(h, k).expect("fits");
        let ow = p.out_size(w, k).expect("fits");

        let zero = OffsetField::zeros(n, k, k, oh, ow);
        let mut got = lib(deform_conv2d(&x, &wt, &zero, p))?;
        if case == 0 {
            nudge(&mut got, fault);
        }
        let plain = lib(conv2d(&x, &wt, None, p))?;
        let d = got.max_abs_diff(&plain);
        worst_zero = worst_zero.max(d);
        ensure(d <= 1e-5, || format!("case {case}: zero offsets differ from conv2d by {d:.2e}"))?;

        let mut field = OffsetField::zeros(n, k, k, oh, ow);
        for b in 0..n {
            for t in 0..k * k {
                for oy in 0..oh {
                    for ox in 0..ow {
                        // Mix fractional, integer and far out-of-map offsets.
                        let (dy, dx) = match rng.gen_range(0..4) {
                            0 => (rng.gen_range(-2i32..=2) as f32, rng.gen_range(-2i32..=2) as f32),
                            1 => (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)),
                            _ => (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                        };
                        field.set(b, t, oy, ox, dy, dx);
                    }
                }
            }
        }
        let got = lib(deform_conv2d(&x, &wt, &field, p))?;
        let want = dcn_oracle(&x, &wt, &field, stride, pad);
        let d = got.max_abs_diff(&want);
        worst_rand = worst_rand.max(d);
        ensure(d <= 1e-5, || format!("case {case}: random offsets differ from gather oracle by {d:.2e}"))?;
    }
    Ok(format!(
        "200 shapes; zero-offset |diff| {worst_zero:.1e}, gather |diff| {worst_rand:.1e}"
    ))
}

fn check_bilinear(fault: bool) -> CheckResult {
    // Column x, row y: p(x, y) = 10x + y + 1.
    let t = Tensor::from_fn([1, 1, 6, 4], |[_, _, y, x]| (10 * x + y + 1) as f32);
    let p = |x: usize, y: usize| t.get(0, 0, y, x) as f64;
    let got = bump(bilinear_sample(&t, 0, 0, 1.2, 3.2) as f64, fault);
    let want = 0.8 * 0.8 * p(1, 3) + 0.2 * 0.8 * p(2, 3) + 0.8 * 0.2 * p(1, 4) + 0.2 * 0.2 * p(2, 4);
    let d = (got - want).abs();
    ensure(d <= 1e-6 * want.abs().max(1.0), || format!("sample(1.2, 3.2) = {got}, blend = {want}"))?;
    Ok(format!("sample(1.2, 3.2) = {got:.6}, blend = {want:.6}"))
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn check_focal(fault: bool) -> CheckResult {
    let base = LossParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0CA1);

    // gamma = 0 reduces to alpha-weighted cross-entropy.
    let g0 = LossParams { gamma: 0.0, ..base };
    for i in 0..1000 {
        let p = rng.gen_range(0.001..0.999);
        let y = (i % 2) as u8;
        let fl = focal_loss(p, y, &g0);
        let ce = g0.alpha_t(y) * cross_entropy(p, y);
        ensure((fl - ce).abs() <= 1e-7, || format!("gamma=0 at p={p}, y={y}: {fl} vs {ce}"))?;
    }

    let mf = bump(modulating_factor(0.9, 2.0), fault);
    ensure((mf - 0.01).abs() <= 1e-12, || format!("(1 - 0.9)^2 = {mf}"))?;
    let perfect = focal_loss(1.0, 1, &base);
    ensure(perfect.abs() <= 1e-15, || format!("loss at p_t = 1 is {perfect}"))?;

    let mut worst = 0.0f64;
    let h = 1e-6;
    for _ in 0..2000 {
        let params = LossParams {
            alpha: rng.gen_range(0.05..0.95),
            gamma: [0.0, 0.5, 1.0, 2.0, 3.0][rng.gen_range(0..5)],
            ..base
        };
        let p = rng.gen_range(0.01..0.99);
        let y = rng.gen_range(0..=1u8);
        for kind in [LossKind::Focal, LossKind::CrossEntropy] {
            let analytic = loss_gradient(p, y, &params, kind);
            let numeric = match kind {
                LossKind::Focal => central_difference(|q| focal_loss(q, y, &params), p, h),
                _ => central_difference(|q| cross_entropy(q, y), p, h),
            };
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(rel);
            ensure(rel < 1e-3, || format!("{kind:?} gradient at p={p}, y={y}: {analytic} vs {numeric}"))?;
        }
    }
    Ok(format!("identities hold; gradient max rel err {worst:.1e}"))
}

fn check_smooth_l1(fault: bool) -> CheckResult {
    for (x, want) in [(0.5, 0.125), (2.0, 1.5), (1.0, 0.5)] {
        let got = bump(smooth_l1(x), fault);
        ensure(got == want, || format!("smooth_l1({x}) = {got}, expected {want}"))?;
    }
    let step = 1e-4;
    let mut prev = smooth_l1(-5.0);
    let mut x = -5.0;
    for i in 1..=100_000 {
        x = -5.0 + i as f64 * step;
        let v = smooth_l1(x);
        // |slope| <= 1 bounds every jump by the step.
        ensure((v - prev).abs() <= step * (1.0 + 1e-9), || format!("jump of {} at x={x}", v - prev))?;
        let g = loss_gradient(x, 0, &LossParams::default(), LossKind::SmoothL1);
        ensure(g.abs() <= 1.0, || format!("|derivative| {g} at x={x}"))?;
        prev = v;
    }
    Ok(format!("0.125 / 1.5 / 0.5; continuous with |slope| <= 1 on [-5, {x:.0}]"))
}

/// Keeps box `i` iff no higher-ranked kept box overlaps it above the
/// threshold, evaluated against a precomputed IoU table.
fn nms_oracle(dets: &[Detection], thresh: f32) -> Vec<usize> {
    let n = dets.len();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let table: Vec<Vec<f32>> = (0..n).map(|i| (0..n).map(|j| iou(&dets[i].bbox, &dets[j].bbox)).collect()).collect();
    let mut kept = vec![false; n];
    for (r, &i) in rank.iter().enumerate() {
        kept[i] = rank[..r].iter().all(|&j| !kept[j] || table[i][j] <= thresh);
    }
    let mut out: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    out.sort_unstable();
    out
}

pub(crate) fn random_detection(rng: &mut impl Rng) -> Detection {
    let x1 = rng.gen_range(0.0..40.0f32);
    let y1 = rng.gen_range(0.0..40.0f32);
    Detection {
        bbox: BBox::new(x1, y1, x1 + rng.gen_range(2.0..30.0), y1 + rng.gen_range(2.0..30.0)),
        // Coarse scores force ties.
        score: (rng.gen_range(0..50) as f32) / 50.0,
        landmarks: [[0.0; 2]; 5],
    }
}

fn check_nms(fault: bool) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E45);
    let thresh = PostprocConfig::default().nms_iou;
    let mut kept_total = 0;
    for case in 0..200 {
        let dets: Vec<Detection> = (0..100).map(|_| random_detection(&mut rng)).collect();
        let mut got = nms_indices(&dets, thresh);
        got.sort_unstable();
        if fault && case == 0 {
            got.pop();
        }
        let want = nms_oracle(&dets, thresh);
        ensure(got == want, || format!("instance {case}: kept {} boxes, oracle keeps {}", got.len(), want.len()))?;
        kept_total += got.len();
    }
    Ok(format!("200 x 100 boxes at IoU {thresh}, {kept_total} kept in total"))
}

fn check_shapes(fault: bool) -> CheckResult {
    let cfg = DetectorConfig::default();
    let (model, _) = lib(Detector::init(&cfg, 7))?;
    let mut rng = ChaCha8Rng::seed_from_u64(640);
    let image = random_tensor(&mut rng, [1, 3, 640, 640], 128.0);
    let trace = lib(model.forward_trace(&image))?;
    let taps = [&trace.taps.c1, &trace.taps.c2, &trace.taps.c3];
    let spec = BackboneSpec::lafd();
    for ((t, &c), &s) in taps.iter().zip(&spec.tap_channels()).zip(&spec.tap_strides()) {
        let want = [1, c, 640 / s, 640 / s];
        ensure(t.dims() == want, || format!("tap {:?}, expected {want:?}", t.dims()))?;
    }
    let raw = &trace.predictions[0];
    let rows = raw.class_logits.len() + usize::from(fault);
    ensure(
        rows == 16800 && raw.box_deltas.len() == 16800 && raw.landmark_deltas.len() == 16800,
        || {
            format!(
                "heads ({}, 2) / ({}, 4) / ({}, 10)",
                rows,
                raw.box_deltas.len(),
                raw.landmark_deltas.len()
            )
        },
    )?;
    let finite = raw.class_logits.iter().flatten().all(|v| v.is_finite())
        && raw.box_deltas.iter().flatten().all(|v| v.is_finite())
        && raw.landmark_deltas.iter().flatten().all(|v| v.is_finite());
    ensure(finite, || "non-finite head output".into())?;
    Ok("heads (16800,2)/(16800,4)/(16800,10); taps 40/112/160 at 8/16/32".into())
}

fn check_resize(fault: bool) -> CheckResult {
    let cfg = PostprocConfig::default();
    for ((h, w), want) in [((480, 640), 2.4375), ((1000, 3000), 0.52), ((500, 500), 2.4)] {
        let got = bump(resize_scale(h, w, &cfg), fault);
        ensure(got == want, || format!("scale({h}x{w}) = {got}, expected {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA1E);
    for _ in 0..100 {
        let h = rng.gen_range(1..=4000);
        let w = rng.gen_range(1..=4000);
        let s = resize_scale(h, w, &cfg);
        let nh = (h as f64 * s).round() as usize;
        let nw = (w as f64 * s).round() as usize;
        ensure(nh.max(nw) <= cfg.max_len && nh.min(nw) <= cfg.max_wid, || {
            format!("{h}x{w} resized to {nh}x{nw}")
        })?;
    }
    Ok("2.4375 / 0.52 / 2.4; 100 random sizes within 1560 x 1200".into())
}

fn check_schedule(fault: bool) -> CheckResult {
    let params = LossParams::default();
    let before = lib(loss_schedule(244, &params))?;
    let mut at = lib(loss_schedule(245, &params))?;
    if fault {
        at = ClassLoss::CrossEntropy;
    }
    ensure(before == ClassLoss::CrossEntropy, || format!("epoch 244 uses {before:?}"))?;
    ensure(at == ClassLoss::Focal, || format!("epoch 245 uses {at:?}"))?;
    ensure(loss_schedule(249, &params).is_ok() && loss_schedule(250, &params).is_err(), || {
        "250-epoch bound not enforced".into()
    })?;
    Ok("244 -> cross-entropy, 245 -> focal, 250 epochs".into())
}

fn check_ap(fault: bool) -> CheckResult {
    let m = |score: f32, tp: bool| ScoredMatch {
        score,
        true_positive: tp,
    };
    let hand = average_precision(&[m(0.9, true), m(0.8, false), m(0.7, true)], 2).map(|v| bump(v, fault));
    let want = 0.5 + 0.5 * (2.0 / 3.0);
    ensure(hand.is_some_and(|v| (v - want).abs() <= 1e-4), || format!("hand case AP {hand:?}, expected {want:.4}"))?;
    let perfect = average_precision(&[m(0.9, true), m(0.5, true)], 2);
    ensure(perfect == Some(1.0), || format!("all-found AP {perfect:?}"))?;
    let none = average_precision(&[], 3);
    ensure(none == Some(0.0), || format!("no-detection AP {none:?}"))?;
    ensure(average_precision(&[m(0.5, false)], 0).is_none(), || "zero-GT AP is defined".into())?;
    Ok(format!("hand case {:.4}; 1.0 / 0.0 degenerate cases exact", hand.unwrap_or(f64::NAN)))
}
