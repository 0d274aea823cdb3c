//! Shared box, mask and image types.
//!
//! Boxes are stored YOLO-style: normalized center and size. Pixel corner boxes
//! ([`PixelBox`]) only appear at I/O and rendering boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only class this toolkit detects.
pub const HAND_CLASS: u32 = 0;

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
    #[serde(default)]
    class_id: u32,
}

impl BBox {
    /// Build a hand box. Rejects centers outside `[0,1]`, sizes outside `(0,1]`
    /// and non-finite values.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        for (name, v) in [("cx", cx), ("cy", cy)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidBox(format!("{name}={v} outside [0,1]")));
            }
        }
        for (name, v) in [("w", w), ("h", h)] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::InvalidBox(format!("{name}={v} outside (0,1]")));
            }
        }
        Ok(BBox {
            cx,
            cy,
            w,
            h,
            conf: None,
            class_id: HAND_CLASS,
        })
    }

    pub fn with_conf(mut self, conf: f64) -> Result<Self> {
        if !conf.is_finite() || !(0.0..=1.0).contains(&conf) {
            return Err(Error::InvalidBox(format!("conf={conf} outside [0,1]")));
        }
        self.conf = Some(conf);
        Ok(self)
    }

    pub fn without_conf(mut self) -> Self {
        self.conf = None;
        self
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn conf(&self) -> Option<f64> {
        self.conf
    }
    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    /// Confidence with ground-truth style boxes counted as certain.
    pub fn score(&self) -> f64 {
        self.conf.unwrap_or(1.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(x1, y1, x2, y2)` in normalized units.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    /// Same box moved by `(dx, dy)`, with the center clamped to the image.
    pub fn shifted(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            cx: (self.cx + dx).clamp(0.0, 1.0),
            cy: (self.cy + dy).clamp(0.0, 1.0),
            ..*self
        }
    }

    pub fn to_pixel(&self, width: u32, height: u32) -> Result<PixelBox> {
        check_dims(width, height)?;
        let (x1, y1, x2, y2) = self.corners();
        let px = |v: f64, max: u32| (v * max as f64).round().clamp(0.0, max as f64) as u32;
        Ok(PixelBox {
            x1: px(x1, width),
            y1: px(y1, height),
            x2: px(x2, width),
            y2: px(y2, height),
        })
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Intersection over union. Boxes that only touch at an edge score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from corners so that iou(a, a) is exactly 1
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Half-open pixel corner box `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        PixelBox { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> u64 {
        self.x2.saturating_sub(self.x1) as u64 * self.y2.saturating_sub(self.y1) as u64
    }

    /// Exact IoU on integer corners.
    pub fn iou(&self, other: &PixelBox) -> f64 {
        let iw = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1)) as u64;
        let ih = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1)) as u64;
        let inter = iw * ih;
        if inter == 0 {
            return 0.0;
        }
        inter as f64 / (self.area() + other.area() - inter) as f64
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn to_normalized(&self, width: u32, height: u32) -> Result<BBox> {
        check_dims(width, height)?;
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::InvalidBox(format!("zero-area pixel box {self:?}")));
        }
        let (w, h) = (width as f64, height as f64);
        BBox::new(
            (self.x1 + self.x2) as f64 / (2.0 * w),
            (self.y1 + self.y2) as f64 / (2.0 * h),
            (self.x2 - self.x1) as f64 / w,
            (self.y2 - self.y1) as f64 / h,
        )
    }
}

/// Row-major boolean foreground grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 && height == 0 {
            return Err(Error::InvalidArgument("mask has no pixels".into()));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "mask buffer has {} cells, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        assert!(width > 0 || height > 0, "mask has no pixels");
        BinaryMask {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    /// Nonzero luma is foreground.
    pub fn from_gray(img: &image::GrayImage) -> Self {
        BinaryMask::new(
            img.width(),
            img.height(),
            img.as_raw().iter().map(|&v| v != 0).collect(),
        )
        .expect("gray image buffer matches its dimensions")
    }

    pub fn to_gray(&self) -> image::GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, raw)
            .expect("mask buffer matches its dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.same_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                image_w: self.width,
                image_h: self.height,
                mask_w: other.width,
                mask_h: other.height,
            });
        }
        Ok(())
    }

    /// Tight pixel box around all foreground, `None` when there is none.
    pub fn pixel_bounds(&self) -> Option<PixelBox> {
        let mut bounds: Option<PixelBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let b = bounds.get_or_insert(PixelBox::new(x, y, x + 1, y + 1));
                    b.x1 = b.x1.min(x);
                    b.y1 = b.y1.min(y);
                    b.x2 = b.x2.max(x + 1);
                    b.y2 = b.y2.max(y + 1);
                }
            }
        }
        bounds
    }
}

/// Normalized box enclosing every foreground pixel cell, or `None` for an
/// empty mask.
pub fn bbox_from_mask(mask: &BinaryMask) -> Option<BBox> {
    mask.pixel_bounds().map(|pb| {
        pb.to_normalized(mask.width, mask.height)
            .expect("non-empty bounds have positive area")
    })
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

pub type Rgb = [u8; 3];

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer has {} bytes, expected 3x{}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let pixels = color
            .iter()
            .copied()
            .cycle()
            .take(3 * width as usize * height as usize)
            .collect();
        RgbImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: Rgb) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub(crate) fn check_mask(&self, mask: &BinaryMask) -> Result<()> {
        if self.width != mask.width || self.height != mask.height {
            return Err(Error::DimensionMismatch {
                image_w: self.width,
                image_h: self.height,
                mask_w: mask.width,
                mask_h: mask.height,
            });
        }
        Ok(())
    }
}

impl From<image::RgbImage> for RgbImage {
    fn from(img: image::RgbImage) -> Self {
        let (width, height) = img.dimensions();
        RgbImage {
            width,
            height,
            pixels: img.into_raw(),
        }
    }
}

impl From<RgbImage> for image::RgbImage {
    fn from(img: RgbImage) -> Self {
        image::RgbImage::from_raw(img.width, img.height, img.pixels)
            .expect("pixel buffer matches its dimensions")
    }
}

/// Boxes detected (or labeled) in one frame of a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_idx: u32,
    pub boxes: Vec<BBox>,
}

impl FrameDetections {
    pub fn new(frame_idx: u32, boxes: Vec<BBox>) -> Self {
        FrameDetections { frame_idx, boxes }
    }

    pub fn empty(frame_idx: u32) -> Self {
        FrameDetections::new(frame_idx, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    /// Cell-count IoU on an integer grid.
    fn raster_iou(a: PixelBox, b: PixelBox, size: u32) -> f64 {
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

    #[test]
    fn iou_identity_and_disjoint() {
        let a = b(0.3, 0.4, 0.2, 0.1);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0.25, 0.5, 0.1, 0.1), &b(0.75, 0.5, 0.1, 0.1)), 0.0);
    }

    #[test]
    fn iou_half_overlap_pixels() {
        let a = PixelBox::new(0, 0, 10, 10);
        let c = PixelBox::new(5, 0, 15, 10);
        let oracle = raster_iou(a, c, 20);
        assert_eq!(oracle, 50.0 / 150.0);
        assert_eq!(a.iou(&c), oracle);
        let (na, nc) = (
            a.to_normalized(20, 20).unwrap(),
            c.to_normalized(20, 20).unwrap(),
        );
        assert!((iou(&na, &nc) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = PixelBox::new(0, 0, 10, 10);
        let c = PixelBox::new(10, 0, 20, 10);
        assert_eq!(a.iou(&c), 0.0);
        let (na, nc) = (
            a.to_normalized(20, 20).unwrap(),
            c.to_normalized(20, 20).unwrap(),
        );
        assert_eq!(iou(&na, &nc), 0.0);
    }

    #[test]
    fn box_validation() {
        assert!(BBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BBox::new(1.1, 0.5, 0.1, 0.1).is_err());
        assert!(BBox::new(0.5, 0.5, 1.5, 0.1).is_err());
        assert!(BBox::new(f64::NAN, 0.5, 0.1, 0.1).is_err());
        assert!(b(0.5, 0.5, 0.1, 0.1).with_conf(1.2).is_err());
        assert!(PixelBox::new(3, 3, 3, 9).to_normalized(10, 10).is_err());
    }

    #[test]
    fn to_pixel_examples() {
        assert_eq!(
            b(0.5, 0.5, 1.0, 1.0).to_pixel(640, 480).unwrap(),
            PixelBox::new(0, 0, 640, 480)
        );
        assert_eq!(
            b(0.5, 0.5, 0.25, 0.5).to_pixel(400, 200).unwrap(),
            PixelBox::new(150, 50, 250, 150)
        );
        assert!(b(0.5, 0.5, 0.2, 0.2).to_pixel(0, 10).is_err());
        assert!(PixelBox::new(0, 0, 1, 1).to_normalized(10, 0).is_err());
    }

    #[test]
    fn mask_bbox_examples() {
        assert_eq!(bbox_from_mask(&BinaryMask::filled(10, 10, false)), None);

        let mut single = BinaryMask::filled(10, 10, false);
        single.set(5, 5, true);
        assert_eq!(single.pixel_bounds(), Some(PixelBox::new(5, 5, 6, 6)));
        let sb = bbox_from_mask(&single).unwrap();
        assert!((sb.cx() - 0.55).abs() < 1e-12 && (sb.w() - 0.1).abs() < 1e-12);

        let mut rect = BinaryMask::filled(10, 10, false);
        for y in 2..=7 {
            for x in 3..=8 {
                rect.set(x, y, true);
            }
        }
        // direct scan: cols 3..=8 -> [3, 9), rows 2..=7 -> [2, 8)
        let rb = bbox_from_mask(&rect).unwrap();
        for (got, want) in [(rb.cx(), 0.6), (rb.cy(), 0.5), (rb.w(), 0.6), (rb.h(), 0.6)] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn mask_rejects_bad_buffer() {
        assert!(BinaryMask::new(3, 3, vec![false; 8]).is_err());
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pixel_box(size: u32) -> impl Strategy<Value = PixelBox> {
            (0..size, 0..size, 1..=size, 1..=size).prop_map(move |(x, y, w, h)| {
                PixelBox::new(x, y, (x + w).min(size), (y + h).min(size))
            })
        }

        fn norm_box() -> impl Strategy<Value = BBox> {
            (0.0..=1.0f64, 0.0..=1.0f64, 0.001..=1.0f64, 0.001..=1.0f64)
                .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
        }

        proptest! {
            #[test]
            fn iou_symmetric(a in norm_box(), c in norm_box()) {
                prop_assert_eq!(iou(&a, &c), iou(&c, &a));
                prop_assert_eq!(iou(&a, &a), 1.0);
                let v = iou(&a, &c);
                prop_assert!((0.0..=1.0).contains(&v));
            }

            #[test]
            fn pixel_iou_matches_raster(a in pixel_box(30), c in pixel_box(30)) {
                prop_assert_eq!(a.iou(&c), raster_iou(a, c, 30));
            }

            #[test]
            fn mask_bbox_contains_foreground(
                cells in proptest::collection::vec(any::<bool>(), 12 * 9)
            ) {
                let mask = BinaryMask::new(12, 9, cells).unwrap();
                match bbox_from_mask(&mask) {
                    None => prop_assert!(mask.is_empty()),
                    Some(bb) => {
                        let pb = bb.to_pixel(12, 9).unwrap();
                        prop_assert_eq!(Some(pb), mask.pixel_bounds());
                        for y in 0..9 {
                            for x in 0..12 {
                                if mask.get(x, y) {
                                    prop_assert!(pb.contains_pixel(x, y));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
