//! Artificial glove augmentation.
//!
//! A glove colour is alpha-blended into the hand region given by a
//! segmentation mask. Blood splatters are grown from seeded uniform noise:
//! sparse seed points are blurred, thresholded into blobs, cleaned with a
//! morphological close and open, and finally clipped to the glove.

mod components;
mod dataset;
pub mod morphology;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, Rgb, RgbImage};

pub use components::{label_components, Component};
pub use dataset::{augment_dataset, Assignment, AugmentSummary, Palette, Skipped};

pub const STERILE_WHITE: Rgb = [235, 235, 235];
pub const NON_STERILE_BLUE: Rgb = [90, 140, 190];
pub const LATEX_GREEN: Rgb = [140, 190, 160];
pub const DEFAULT_OPACITY: f64 = 0.5;

/// Glove colour, its opacity, and optional blood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveSpec {
    pub color: Rgb,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    #[serde(default)]
    pub blood: Option<BloodParams>,
}

fn default_opacity() -> f64 {
    DEFAULT_OPACITY
}

impl GloveSpec {
    pub fn new(color: Rgb, opacity: f64) -> Result<Self> {
        check_unit("opacity", opacity)?;
        Ok(GloveSpec {
            color,
            opacity,
            blood: None,
        })
    }

    pub fn with_blood(mut self, blood: BloodParams) -> Result<Self> {
        blood.validate()?;
        self.blood = Some(blood);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("opacity", self.opacity)?;
        if let Some(b) = &self.blood {
            b.validate()?;
        }
        Ok(())
    }
}

/// Parameters of the splatter generator. The seed is mandatory: the same
/// mask and parameters always produce the same splatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BloodParams {
    pub seed: u64,
    pub density: f64,
    pub blur_sigma: f64,
    pub blob_threshold: f64,
    pub close_radius: u32,
    pub open_radius: u32,
    pub blood_color: Rgb,
    pub blood_opacity: f64,
}

impl Default for BloodParams {
    fn default() -> Self {
        BloodParams::with_seed(0)
    }
}

impl BloodParams {
    pub fn with_seed(seed: u64) -> Self {
        BloodParams {
            seed,
            density: 0.005,
            blur_sigma: 4.0,
            blob_threshold: 0.02,
            close_radius: 3,
            open_radius: 2,
            blood_color: [120, 10, 15],
            blood_opacity: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // density 0 is accepted and yields no blood
        check_unit("density", self.density)?;
        if !(self.blur_sigma.is_finite() && self.blur_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "blur_sigma must be > 0, got {}",
                self.blur_sigma
            )));
        }
        if !(self.blob_threshold > 0.0 && self.blob_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "blob_threshold must be in (0,1), got {}",
                self.blob_threshold
            )));
        }
        check_unit("blood_opacity", self.blood_opacity)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be in [0,1], got {v}"
        )));
    }
    Ok(())
}

fn blend(img: &RgbImage, mask: &BinaryMask, color: Rgb, alpha: f64) -> Result<RgbImage> {
    img.check_mask(mask)?;
    check_unit("opacity", alpha)?;
    let mut out = img.clone();
    let px = out.pixels_mut();
    for (i, &on) in mask.bits().iter().enumerate() {
        if !on {
            continue;
        }
        for c in 0..3 {
            let v = &mut px[3 * i + c];
            *v = (alpha * color[c] as f64 + (1.0 - alpha) * *v as f64)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Blend the glove colour into every masked pixel:
/// `round(opacity * color + (1 - opacity) * pixel)` per channel.
/// Pixels outside the mask are copied unchanged.
pub fn overlay_glove(img: &RgbImage, mask: &BinaryMask, spec: &GloveSpec) -> Result<RgbImage> {
    blend(img, mask, spec.color, spec.opacity)
}

/// Same blend as [`overlay_glove`], driven by a blood mask.
pub fn apply_blood(
    img: &RgbImage,
    blood: &BinaryMask,
    color: Rgb,
    opacity: f64,
) -> Result<RgbImage> {
    blend(img, blood, color, opacity)
}

/// Grow a splatter mask inside `mask`.
pub fn synth_blood_mask(mask: &BinaryMask, p: &BloodParams) -> Result<BinaryMask> {
    p.validate()?;
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let seeds: Vec<f64> = (0..w * h)
        .map(|_| {
            if rng.gen::<f64>() < p.density {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if seeds.iter().all(|&s| s == 0.0) {
        return Ok(BinaryMask::filled(mask.width(), mask.height(), false));
    }
    let blurred = morphology::gaussian_blur(&seeds, w, h, p.blur_sigma);
    let blobs = BinaryMask::new(
        mask.width(),
        mask.height(),
        blurred.iter().map(|&v| v > p.blob_threshold).collect(),
    )?;
    let cleaned = morphology::open(&morphology::close(&blobs, p.close_radius), p.open_radius);
    cleaned.and(mask)
}

/// Glove overlay followed by blood (when the spec carries blood params).
pub fn augment_image(img: &RgbImage, mask: &BinaryMask, spec: &GloveSpec) -> Result<RgbImage> {
    let gloved = overlay_glove(img, mask, spec)?;
    match &spec.blood {
        Some(bp) => {
            let blood = synth_blood_mask(mask, bp)?;
            apply_blood(&gloved, &blood, bp.blood_color, bp.blood_opacity)
        }
        None => Ok(gloved),
    }
}
