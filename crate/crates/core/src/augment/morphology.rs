//! Gaussian blur and binary morphology used to turn seed noise into splatters.

use crate::geometry::BinaryMask;

/// Normalized 1-D Gaussian taps for radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of a row-major field, clamping at the edges.
pub fn gaussian_blur(field: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(field.len(), width * height);
    if width == 0 || height == 0 {
        return Vec::new();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut horizontal = vec![0.0; field.len()];
    for y in 0..height {
        let row = &field[y * width..(y + 1) * width];
        for x in 0..width {
            horizontal[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[clamp(x as i64 + k as i64 - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    w * horizontal[clamp(y as i64 + k as i64 - radius, height) * width + x]
                })
                .sum();
        }
    }
    out
}

/// Offsets of a rasterized disk: every `(dx, dy)` with `dx² + dy² <= r²`.
pub fn disk(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

// Out-of-image neighbours are ignored by both operators.
fn morph(mask: &BinaryMask, radius: u32, dilate: bool) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = BinaryMask::filled(mask.width(), mask.height(), false);
    for y in 0..h {
        for x in 0..w {
            let mut neighbours = se.iter().filter_map(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as u32, ny as u32))
            });
            let v = if dilate {
                neighbours.any(|b| b)
            } else {
                neighbours.all(|b| b)
            };
            out.set(x as u32, y as u32, v);
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    morph(mask, radius, true)
}

pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    morph(mask, radius, false)
}

/// Dilate then erode.
pub fn close(mask: &BinaryMask, radius: u32) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Erode then dilate.
pub fn open(mask: &BinaryMask, radius: u32) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}
