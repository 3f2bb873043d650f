//! Slow reference implementations shared by the integration tests. They are
//! written from the defining formulas and share no code with the library.
#![allow(dead_code)]

use lafd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, dims: [usize; 4], amp: f32) -> Tensor {
    let data = (0..dims.iter().product::<usize>()).map(|_| rng.gen_range(-amp..amp)).collect();
    Tensor::new(dims, data).unwrap()
}

/// Value at `(n, c, y, x)` with zero outside the map, in f64.
pub fn at(t: &Tensor, n: usize, c: usize, y: i64, x: i64) -> f64 {
    let [_, _, h, w] = t.dims();
    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
        0.0
    } else {
        t.data()[((n * t.channels() + c) * h + y as usize) * w + x as usize] as f64
    }
}

/// Six nested loops over the zero-padded input.
pub fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let [n, in_c, h, wd] = x.dims();
    let [out_c, cpg, kh, kw] = w.dims();
    assert_eq!(cpg * groups, in_c);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; n * out_c * oh * ow];
    for b in 0..n {
        for o in 0..out_c {
            let g = o / (out_c / groups);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |v| v[o] as f64);
                    for ci in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                acc += at(x, b, g * cpg + ci, iy, ix) * at(w, o, ci, ky as i64, kx as i64);
                            }
                        }
                    }
                    out[((b * out_c + o) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new([n, out_c, oh, ow], out).unwrap()
}

/// Bilinear read at row `py`, column `px` with explicit corner weights.
pub fn bilinear_ref(t: &Tensor, n: usize, c: usize, py: f64, px: f64) -> f64 {
    let (y0, x0) = (py.floor(), px.floor());
    let (ly, lx) = (py - y0, px - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    (1.0 - ly) * (1.0 - lx) * at(t, n, c, y0, x0)
        + (1.0 - ly) * lx * at(t, n, c, y0, x0 + 1)
        + ly * (1.0 - lx) * at(t, n, c, y0 + 1, x0)
        + ly * lx * at(t, n, c, y0 + 1, x0 + 1)
}

/// Gather every tap through [`bilinear_ref`], then dot with the kernel.
/// `offsets(b, tap, oy, ox)` returns `(dy, dx)`.
pub fn dcn_ref(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
    offsets: impl Fn(usize, usize, usize, usize) -> (f32, f32),
) -> Tensor {
    let [n, in_c, _, _] = x.dims();
    let [out_c, _, kh, kw] = w.dims();
    let (oh, ow) = out_hw;
    let mut out = vec![0.0f32; n * out_c * oh * ow];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut column = Vec::with_capacity(in_c * kh * kw);
                for c in 0..in_c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (dy, dx) = offsets(b, ky * kw + kx, oy, ox);
                            let py = (oy * stride + ky) as f64 - pad as f64 + dy as f64;
                            let px = (ox * stride + kx) as f64 - pad as f64 + dx as f64;
                            column.push(bilinear_ref(x, b, c, py, px));
                        }
                    }
                }
                for o in 0..out_c {
                    let wrow = &w.data()[o * in_c * kh * kw..(o + 1) * in_c * kh * kw];
                    let dot: f64 = wrow.iter().zip(&column).map(|(&a, &b)| a as f64 * b).sum();
                    out[((b * out_c + o) * oh + oy) * ow + ox] = dot as f32;
                }
            }
        }
    }
    Tensor::new([n, out_c, oh, ow], out).unwrap()
}

/// IoU of `[x1, y1, x2, y2]` boxes computed in f64.
pub fn iou_ref(a: [f32; 4], b: [f32; 4]) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.map(f64::from);
    let [bx1, by1, bx2, by2] = b.map(f64::from);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// O(n^2) NMS over a precomputed IoU table: a box survives iff no kept box
/// of higher rank (score, then lower index) overlaps it above `thresh`.
pub fn nms_ref(boxes: &[[f32; 4]], scores: &[f32], thresh: f32) -> Vec<usize> {
    let n = boxes.len();
    let table: Vec<Vec<f32>> = (0..n)
        .map(|i| (0..n).map(|j| lafd::postproc::iou(&bbox(boxes[i]), &bbox(boxes[j]))).collect())
        .collect();
    let outranks = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut kept = vec![None::<bool>; n];
    // Resolve in rank order; each decision only depends on higher ranks.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        if outranks(a, b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    for &i in &order {
        let suppressed = (0..n).any(|j| j != i && outranks(j, i) && kept[j] == Some(true) && table[i][j] > thresh);
        kept[i] = Some(!suppressed);
    }
    (0..n).filter(|&i| kept[i] == Some(true)).collect()
}

pub fn bbox(b: [f32; 4]) -> lafd::BBox {
    lafd::BBox::new(b[0], b[1], b[2], b[3])
}
