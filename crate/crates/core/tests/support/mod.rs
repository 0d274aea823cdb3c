//! Independent oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rohan::{BBox, BinaryMask, FrameDetections, PixelBox};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// IoU by counting grid cells covered by each box.
pub fn raster_iou(a: PixelBox, b: PixelBox, size: u32) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..size {
        for x in 0..size {
            let (ia, ib) = (a.contains_pixel(x, y), b.contains_pixel(x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn random_pixel_box(rng: &mut ChaCha8Rng, size: u32) -> PixelBox {
    let x1 = rng.gen_range(0..size);
    let y1 = rng.gen_range(0..size);
    let x2 = rng.gen_range(x1 + 1..=size);
    let y2 = rng.gen_range(y1 + 1..=size);
    PixelBox::new(x1, y1, x2, y2)
}

/// Minimum total cost over every injection of the smaller side into the
/// larger, by enumerating permutations.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let (n, m) = (rows.min(cols), rows.max(cols));
    let entry = |small: usize, large: usize| {
        if rows <= cols {
            cost[small][large]
        } else {
            cost[large][small]
        }
    };
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(n);
    fn rec(
        n: usize,
        m: usize,
        chosen: &mut Vec<usize>,
        best: &mut f64,
        entry: &dyn Fn(usize, usize) -> f64,
    ) {
        if chosen.len() == n {
            let total: f64 = chosen.iter().enumerate().map(|(s, &l)| entry(s, l)).sum();
            *best = best.min(total);
            return;
        }
        for l in 0..m {
            if !chosen.contains(&l) {
                chosen.push(l);
                rec(n, m, chosen, best, entry);
                chosen.pop();
            }
        }
    }
    rec(n, m, &mut chosen, &mut best, &entry);
    best
}

/// IoU from corner coordinates, written independently of the library.
fn corner_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ax2) = (a.cx() - a.w() / 2.0, a.cx() + a.w() / 2.0);
    let (ay1, ay2) = (a.cy() - a.h() / 2.0, a.cy() + a.h() / 2.0);
    let (bx1, bx2) = (b.cx() - b.w() / 2.0, b.cx() + b.w() / 2.0);
    let (by1, by2) = (b.cy() - b.h() / 2.0, b.cy() + b.h() / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
}

#[derive(Debug, Clone, Copy)]
pub struct OracleMetrics {
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Enumerate every confidence cutoff, re-match each image from scratch using
/// only predictions at or above it, and build the PR curve point by point.
pub fn brute_force_eval(images: &[(Vec<BBox>, Vec<BBox>)], iou_thr: f64) -> OracleMetrics {
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    let mut cutoffs: Vec<f64> = images
        .iter()
        .flat_map(|(p, _)| p.iter().map(|b| b.conf().unwrap()))
        .collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();

    let mut points = Vec::new(); // (precision, recall)
    for &t in &cutoffs {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (preds, gts) in images {
            let mut kept: Vec<&BBox> = preds.iter().filter(|b| b.conf().unwrap() >= t).collect();
            // stable: equal confidences keep input order
            kept.sort_by(|a, b| b.conf().unwrap().partial_cmp(&a.conf().unwrap()).unwrap());
            let mut used = vec![false; gts.len()];
            for p in kept {
                let mut best: Option<usize> = None;
                let mut best_iou = iou_thr;
                for (g, gt) in gts.iter().enumerate() {
                    let v = corner_iou(p, gt);
                    if !used[g] && v >= iou_thr && (best.is_none() || v > best_iou) {
                        best = Some(g);
                        best_iou = v;
                    }
                }
                match best {
                    Some(g) => {
                        used[g] = true;
                        tp += 1;
                    }
                    None => fp += 1,
                }
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        };
        points.push((precision, recall));
    }

    let mut map50 = 0.0;
    if n_gt > 0 {
        let mut prev_recall = 0.0;
        for i in 0..points.len() {
            let envelope = points[i..].iter().map(|p| p.0).fold(0.0, f64::max);
            map50 += (points[i].1 - prev_recall) * envelope;
            prev_recall = points[i].1;
        }
    }
    let mut best = (0.0, 0.0, -1.0);
    for &(p, r) in &points {
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        if f1 > best.2 {
            best = (p, r, f1);
        }
    }
    OracleMetrics {
        map50,
        precision: best.0,
        recall: best.1,
    }
}

/// Random corpus with at most `max_images` images and `max_boxes` ground
/// truth and prediction boxes per image. Predictions are jittered copies of
/// ground truth or free-floating boxes; confidences come from a coarse grid
/// so ties occur.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    max_images: usize,
    max_boxes: usize,
) -> Vec<(Vec<BBox>, Vec<BBox>)> {
    let n_images = rng.gen_range(1..=max_images);
    (0..n_images)
        .map(|_| {
            let gts: Vec<BBox> = (0..rng.gen_range(0..=max_boxes))
                .map(|_| {
                    BBox::new(
                        rng.gen_range(0.15..0.85),
                        rng.gen_range(0.15..0.85),
                        rng.gen_range(0.1..0.3),
                        rng.gen_range(0.1..0.3),
                    )
                    .unwrap()
                })
                .collect();
            let preds: Vec<BBox> = (0..rng.gen_range(0..=max_boxes))
                .map(|_| {
                    let conf = rng.gen_range(1..=10) as f64 / 10.0;
                    let b = if !gts.is_empty() && rng.gen_bool(0.7) {
                        let g = gts[rng.gen_range(0..gts.len())];
                        BBox::new(
                            (g.cx() + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0),
                            (g.cy() + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0),
                            g.w() * rng.gen_range(0.7..1.3),
                            g.h() * rng.gen_range(0.7..1.3),
                        )
                        .unwrap()
                    } else {
                        BBox::new(
                            rng.gen_range(0.1..0.9),
                            rng.gen_range(0.1..0.9),
                            rng.gen_range(0.05..0.3),
                            rng.gen_range(0.05..0.3),
                        )
                        .unwrap()
                    };
                    b.with_conf(conf).unwrap()
                })
                .collect();
            (preds, gts)
        })
        .collect()
}

pub fn hand(cx: f64, cy: f64, conf: f64) -> BBox {
    BBox::new(cx, cy, 0.12, 0.12)
        .unwrap()
        .with_conf(conf)
        .unwrap()
}

/// Synthetic video: two persistent hands drifting slowly over `frames`
/// frames, plus `n_transient` short-lived false boxes (each 1 to 4 frames)
/// in a band away from the hands. Returns (detections, ground truth).
pub fn transient_noise_video(
    rng: &mut ChaCha8Rng,
    frames: u32,
    n_transient: usize,
) -> (Vec<FrameDetections>, Vec<Vec<BBox>>) {
    let truth: Vec<Vec<BBox>> = (0..frames)
        .map(|f| {
            let t = f as f64 / frames as f64;
            vec![
                hand(0.3 + 0.1 * t, 0.3, 0.9),
                hand(0.7 - 0.1 * t, 0.35, 0.85),
            ]
        })
        .collect();
    let mut dets: Vec<FrameDetections> = truth
        .iter()
        .enumerate()
        .map(|(f, boxes)| FrameDetections::new(f as u32, boxes.clone()))
        .collect();
    for i in 0..n_transient {
        let len = rng.gen_range(1..=4u32);
        let start = rng.gen_range(0..frames - len);
        // each transient gets its own column so transients never chain
        let cx = 0.05 + 0.9 * (i as f64 + 0.5) / n_transient as f64;
        let cy = rng.gen_range(0.75..0.9);
        for f in start..start + len {
            dets[f as usize].boxes.push(
                BBox::new(cx, cy, 0.03, 0.03)
                    .unwrap()
                    .with_conf(0.6)
                    .unwrap(),
            );
        }
    }
    (dets, truth)
}

/// Image with a smooth colour gradient and a mask made of 1-3 ellipses.
pub fn image_mask_pair(rng: &mut ChaCha8Rng, w: u32, h: u32) -> (rohan::RgbImage, BinaryMask) {
    let mut img = rohan::RgbImage::filled(w, h, [0, 0, 0]);
    let (r0, g0, b0) = (rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>());
    for y in 0..h {
        for x in 0..w {
            img.put(
                x,
                y,
                [
                    r0.wrapping_add((x * 3) as u8),
                    g0.wrapping_add((y * 2) as u8),
                    b0.wrapping_add((x + y) as u8),
                ],
            );
        }
    }
    let mut mask = BinaryMask::filled(w, h, false);
    for _ in 0..rng.gen_range(1..=3) {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let (rx, ry) = (
            rng.gen_range(4.0..w as f64 / 3.0),
            rng.gen_range(4.0..h as f64 / 3.0),
        );
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    mask.set(x, y, true);
                }
            }
        }
    }
    (img, mask)
}

pub fn save_png(img: &rohan::RgbImage, path: &Path) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    let buf: image::RgbImage = img.clone().into();
    buf.save(path).unwrap();
}

pub fn save_mask(mask: &BinaryMask, path: &Path) {
    mask.to_gray().save(path).unwrap();
}

pub fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, text).unwrap();
}
