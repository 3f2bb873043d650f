//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are printed even when output is captured.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{bilinear_ref, dcn_ref, naive_conv, nms_ref, random_tensor, rng};
use lafd::dcn::{deform_conv2d, OffsetField};
use lafd::eval::{average_precision, ScoredMatch};
use lafd::losses::{
    cross_entropy, focal_loss, loss_gradient, loss_schedule, modulating_factor, smooth_l1, ClassLoss, LossKind,
    LossParams,
};
use lafd::nn::{bilinear_sample, conv2d, ConvParams};
use lafd::postproc::{nms_indices, resize_scale, Detection};
use lafd::{generate_priors, AnchorConfig, BBox, Detector, DetectorConfig, PostprocConfig, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lafd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lafd"))
}

fn prior_arithmetic() -> Outcome {
    let cfg = AnchorConfig::default();
    let total = generate_priors(640, 640, &cfg).len();
    let levels = cfg.level_counts(640, 640);
    ensure(total == 16800 && levels == [12800, 3200, 800], || format!("640x640 gives {total} ({levels:?})"))?;
    let single = AnchorConfig {
        steps: vec![8],
        sizes: vec![vec![16, 32]],
    };
    let n = generate_priors(64, 64, &single).len();
    ensure(n == 128, || format!("8x8 level gives {n}"))?;
    Ok(format!("16800 = {levels:?}, 8x8x2 = {n}"))
}

fn model_size() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.lafd");
    let init = lafd().args(["init-weights", "--out"]).arg(&path).output().map_err(|e| e.to_string())?;
    ensure(init.status.success(), || format!("init-weights: {}", String::from_utf8_lossy(&init.stderr)))?;
    let out = lafd().args(["summary", "--weights"]).arg(&path).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("summary: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("size")).ok_or("no size line")?;
    let bytes: f64 = line.split_whitespace().nth(1).and_then(|v| v.parse().ok()).ok_or("unparsable size")?;
    let mb = bytes / (1024.0 * 1024.0);
    let file_bytes = std::fs::metadata(&path).map_err(|e| e.to_string())?.len() as f64;
    ensure(file_bytes == bytes, || format!("summary says {bytes} bytes, file has {file_bytes}"))?;
    ensure((8.0..=12.5).contains(&mb), || format!("{mb:.2} MB outside [8.0, 12.5]"))?;
    Ok(format!("{mb:.2} MB ({bytes} bytes)"))
}

fn dcn_soundness() -> Outcome {
    let mut r = rng(2024);
    let mut worst = (0.0f32, 0.0f32);
    for case in 0..200 {
        let (n, c, oc) = (r.gen_range(1..=2), r.gen_range(1..=8), r.gen_range(1..=8));
        let (h, w) = (r.gen_range(3..=12), r.gen_range(3..=12));
        let k = if r.gen_bool(0.5) { 3 } else { 1 };
        let stride = r.gen_range(1..=2);
        let p = ConvParams::new(stride, k / 2);
        let (oh, ow) = (p.out_size(h, k).unwrap(), p.out_size(w, k).unwrap());
        let x = random_tensor(&mut r, [n, c, h, w], 1.0);
        let wt = random_tensor(&mut r, [oc, c, k, k], 1.0);
        let zero = deform_conv2d(&x, &wt, &OffsetField::zeros(n, k, k, oh, ow), p).map_err(|e| e.to_string())?;
        let plain = conv2d(&x, &wt, None, p).map_err(|e| e.to_string())?;
        let field = random_tensor(&mut r, [n, 2 * k * k, oh, ow], 3.0);
        let shifted = deform_conv2d(&x, &wt, &OffsetField::new(field.clone(), k, k).unwrap(), p).map_err(|e| e.to_string())?;
        let want = dcn_ref(&x, &wt, stride, k / 2, (oh, ow), |b, t, oy, ox| {
            (field.get(b, 2 * t, oy, ox), field.get(b, 2 * t + 1, oy, ox))
        });
        let (d0, d1) = (zero.max_abs_diff(&plain), shifted.max_abs_diff(&want));
        worst = (worst.0.max(d0), worst.1.max(d1));
        ensure(d0 <= 1e-5 && d1 <= 1e-5, || format!("case {case}: zero-offset diff {d0:e}, gather diff {d1:e}"))?;
    }
    Ok(format!("200 shapes, max diff {:.1e} (zero offsets) / {:.1e} (random)", worst.0, worst.1))
}

fn bilinear_example() -> Outcome {
    let t = Tensor::from_fn([1, 1, 6, 5], |[_, _, y, x]| (y * 5 + x) as f32 * 1.5 + 0.25);
    let p = |x: usize, y: usize| t.get(0, 0, y, x) as f64;
    let got = bilinear_sample(&t, 0, 0, 1.2, 3.2) as f64;
    let want = 0.8 * 0.8 * p(1, 3) + 0.2 * 0.8 * p(2, 3) + 0.8 * 0.2 * p(1, 4) + 0.2 * 0.2 * p(2, 4);
    ensure((got - want).abs() <= 1e-6 * want.abs().max(1.0), || format!("{got} vs hand blend {want}"))?;
    let oracle = bilinear_ref(&t, 0, 0, 3.2, 1.2);
    ensure((got - oracle).abs() <= 1e-5, || format!("{got} vs reference {oracle}"))?;
    Ok(format!("{got:.6} = {want:.6}"))
}

fn focal_identities() -> Outcome {
    let mut r = rng(7);
    for _ in 0..2000 {
        let p = r.gen_range(0.0..=1.0);
        let y = r.gen_range(0..=1u8);
        let alpha = r.gen_range(0.0..=1.0);
        let params = LossParams { alpha, gamma: 0.0, ..LossParams::default() };
        let alpha_t = if y == 1 { alpha } else { 1.0 - alpha };
        let d = (focal_loss(p, y, &params) - alpha_t * cross_entropy(p, y)).abs();
        ensure(d <= 1e-7, || format!("gamma=0 differs by {d:e} at p={p}, y={y}"))?;
    }
    let m = modulating_factor(0.9, 2.0);
    ensure((m - 0.01).abs() <= 1e-12, || format!("(1-0.9)^2 = {m}"))?;
    let perfect = focal_loss(1.0, 1, &LossParams::default());
    ensure(perfect.abs() <= 1e-15, || format!("p_t = 1 gives {perfect:e}"))?;
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let p = r.gen_range(0.02..0.98);
        let y = r.gen_range(0..=1u8);
        let params = LossParams { alpha: r.gen_range(0.0..=1.0), gamma: r.gen_range(0.0..5.0), ..LossParams::default() };
        let h = 1e-6;
        let fd = (focal_loss(p + h, y, &params) - focal_loss(p - h, y, &params)) / (2.0 * h);
        let an = loss_gradient(p, y, &params, LossKind::Focal);
        let rel = (fd - an).abs() / an.abs().max(1e-8);
        // Vanishing gradients (alpha_t = 0) are compared absolutely.
        let err = if an.abs() < 1e-8 { (fd - an).abs() } else { rel };
        worst = worst.max(err);
        ensure(err < 1e-3, || format!("gradient at p={p}, y={y}, {params:?}: {an} vs {fd}"))?;
    }
    Ok(format!("max gradient rel err {worst:.1e}, p_t=1 loss {perfect:.1e}"))
}

fn smooth_l1_values() -> Outcome {
    for (x, want) in [(0.5, 0.125), (2.0, 1.5), (1.0, 0.5)] {
        ensure(smooth_l1(x) == want, || format!("smooth_l1({x}) = {}", smooth_l1(x)))?;
    }
    let params = LossParams::default();
    let step = 1e-4;
    let mut prev = smooth_l1(-5.0);
    for i in 1..=100_000 {
        let x = -5.0 + i as f64 * step;
        let v = smooth_l1(x);
        // |f'| <= 1 bounds every increment, which also rules out jumps.
        ensure((v - prev).abs() <= step * (1.0 + 1e-9), || format!("jump of {} at {x}", v - prev))?;
        let g = loss_gradient(x, 0, &params, LossKind::SmoothL1);
        ensure(g.abs() <= 1.0, || format!("derivative {g} at {x}"))?;
        prev = v;
    }
    Ok("0.125 / 1.5 / 0.5, 1e5-point grid".into())
}

fn conv_oracle() -> Outcome {
    let mut r = rng(99);
    let mut depthwise = 0;
    let mut worst = 0.0f32;
    for case in 0..500 {
        let n = r.gen_range(1..=2);
        let k = [1, 3, 5][r.gen_range(0..3)];
        let stride = r.gen_range(1..=2);
        let pad = r.gen_range(0..=k / 2);
        let h = r.gen_range(k.max(1)..=11);
        let w = r.gen_range(k.max(1)..=11);
        let mode = r.gen_range(0..3);
        let (c, oc, groups) = match mode {
            0 => (r.gen_range(1..=6), r.gen_range(1..=6), 1),
            1 => {
                let c = r.gen_range(1..=8);
                (c, c, c)
            }
            _ => {
                let g = r.gen_range(2..=3);
                (g * r.gen_range(1..=3), g * r.gen_range(1..=3), g)
            }
        };
        if groups == c && groups > 1 {
            depthwise += 1;
        }
        let x = random_tensor(&mut r, [n, c, h, w], 1.0);
        let wt = random_tensor(&mut r, [oc, c / groups, k, k], 1.0);
        let bias: Vec<f32> = (0..oc).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b = if r.gen_bool(0.5) { Some(&bias[..]) } else { None };
        let got = conv2d(&x, &wt, b, ConvParams { stride, padding: pad, groups }).map_err(|e| e.to_string())?;
        let d = got.max_abs_diff(&naive_conv(&x, &wt, b, stride, pad, groups));
        worst = worst.max(d);
        ensure(d <= 1e-5, || format!("case {case} (k{k} s{stride} p{pad} g{groups}): diff {d:e}"))?;
    }
    Ok(format!("500 configs ({depthwise} depthwise), max diff {worst:.1e}"))
}

fn nms_oracle() -> Outcome {
    let mut r = rng(5);
    for case in 0..200 {
        let dets: Vec<Detection> = (0..100)
            .map(|_| {
                let x = r.gen_range(0.0..200.0f32);
                let y = r.gen_range(0.0..200.0f32);
                Detection {
                    bbox: BBox::new(x, y, x + r.gen_range(5.0..60.0), y + r.gen_range(5.0..60.0)),
                    score: r.gen_range(0..50) as f32 / 50.0,
                    landmarks: [[0.0; 2]; 5],
                }
            })
            .collect();
        let mut kept = nms_indices(&dets, 0.4);
        kept.sort_unstable();
        let boxes: Vec<[f32; 4]> = dets.iter().map(|d| d.bbox.to_array()).collect();
        let scores: Vec<f32> = dets.iter().map(|d| d.score).collect();
        let want = nms_ref(&boxes, &scores, 0.4);
        ensure(kept == want, || format!("instance {case}: kept {} vs oracle {}", kept.len(), want.len()))?;
    }
    Ok("200 instances of 100 boxes at 0.4".into())
}

fn shape_contract() -> Outcome {
    let cfg = DetectorConfig::default();
    let (model, _) = Detector::init(&cfg, 0).map_err(|e| e.to_string())?;
    let mut r = rng(1);
    let x = random_tensor(&mut r, [1, 3, 640, 640], 100.0);
    let trace = model.forward_trace(&x).map_err(|e| e.to_string())?;
    let taps = [&trace.taps.c1, &trace.taps.c2, &trace.taps.c3];
    for (t, (c, s)) in taps.iter().zip([(40, 8), (112, 16), (160, 32)]) {
        ensure(t.dims() == [1, c, 640 / s, 640 / s], || format!("tap {:?}, want {c} channels at stride {s}", t.dims()))?;
    }
    let p = &trace.predictions[0];
    let rows = (p.class_logits.len(), p.box_deltas.len(), p.landmark_deltas.len());
    ensure(rows == (16800, 16800, 16800), || format!("head rows {rows:?}"))?;
    let finite = p.class_logits.iter().flatten().chain(p.box_deltas.iter().flatten()).all(|v| v.is_finite());
    ensure(finite, || "non-finite head output".into())?;
    Ok("(16800,2)/(16800,4)/(16800,10); taps 40/112/160 at 8/16/32".into())
}

fn resize_rule() -> Outcome {
    let cfg = PostprocConfig::default();
    for (h, w, want) in [(480, 640, 2.4375), (1000, 3000, 0.52), (500, 500, 2.4)] {
        let s = resize_scale(h, w, &cfg);
        ensure(s == want, || format!("{h}x{w}: scale {s}, want {want}"))?;
    }
    let mut r = rng(11);
    for _ in 0..100 {
        let (h, w) = (r.gen_range(1..6000usize), r.gen_range(1..6000usize));
        let s = resize_scale(h, w, &cfg);
        let (nh, nw) = ((h as f64 * s).round() as usize, (w as f64 * s).round() as usize);
        ensure(nh.max(nw) <= 1560 && nh.min(nw) <= 1200, || format!("{h}x{w} -> {nh}x{nw}"))?;
    }
    Ok("2.4375 / 0.52 / 2.4 exact, 100 random dims in bounds".into())
}

fn loss_schedule_boundary() -> Outcome {
    let p = LossParams::default();
    let got = (loss_schedule(244, &p), loss_schedule(245, &p));
    ensure(
        matches!(got, (Ok(ClassLoss::CrossEntropy), Ok(ClassLoss::Focal))),
        || format!("244/245 -> {got:?}"),
    )?;
    ensure(loss_schedule(250, &p).is_err(), || "epoch 250 accepted".into())?;
    Ok("244 cross-entropy, 245 focal, 250 rejected".into())
}

fn ap_harness() -> Outcome {
    let sm = |score, true_positive| ScoredMatch { score, true_positive };
    let ap = average_precision(&[sm(0.9, true), sm(0.8, false), sm(0.7, true)], 2).ok_or("AP undefined")?;
    ensure((ap - 0.8333).abs() <= 1e-4, || format!("hand case AP {ap}"))?;
    let perfect = average_precision(&[sm(0.9, true), sm(0.4, true)], 2);
    let empty = average_precision(&[], 2);
    ensure(perfect == Some(1.0) && empty == Some(0.0), || format!("degenerate {perfect:?} / {empty:?}"))?;
    Ok(format!("hand case {ap:.4}, degenerate 1.0 / 0.0"))
}

fn selfcheck_binary() -> Outcome {
    let out = lafd().arg("selfcheck").output().map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.success(), || format!("exit {:?}: {text}{}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
    let passed = text.lines().filter(|l| l.split_whitespace().nth(1) == Some("PASS")).count();
    ensure(passed == lafd::selfcheck::CHECKS.len(), || format!("{passed} PASS lines:\n{text}"))?;
    Ok(format!("{passed} checks"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("prior-box arithmetic", Duration::from_secs(1), prior_arithmetic),
        ("model size", Duration::from_secs(10), model_size),
        ("dcn soundness", Duration::from_secs(30), dcn_soundness),
        ("bilinear example", Duration::from_secs(1), bilinear_example),
        ("focal-loss identities", Duration::from_secs(10), focal_identities),
        ("smooth-l1", Duration::from_secs(1), smooth_l1_values),
        ("convolution oracle", Duration::from_secs(60), conv_oracle),
        ("nms", Duration::from_secs(10), nms_oracle),
        ("end-to-end shapes", Duration::from_secs(10), shape_contract),
        ("resize rule", Duration::from_secs(1), resize_rule),
        ("loss schedule", Duration::from_secs(1), loss_schedule_boundary),
        ("ap harness", Duration::from_secs(1), ap_harness),
        ("selfcheck", Duration::from_secs(120), selfcheck_binary),
    ];
    let mut failures = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; took {elapsed:.2?}, budget {budget:?}")),
            Err(e) => (false, e),
        };
        if !ok {
            failures += 1;
        }
        println!("{} {name:<22} {elapsed:>9.2?}  {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failures} failed", 13 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
