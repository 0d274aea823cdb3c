use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{augment_image, label_components, BloodParams, GloveSpec};
use super::{DEFAULT_OPACITY, LATEX_GREEN, NON_STERILE_BLUE, STERILE_WHITE};
use crate::error::{Error, IoContext, Result};
use crate::geometry::{BBox, BinaryMask, RgbImage};
use crate::yolo;

/// Glove palette plus the per-image policy: one glove drawn uniformly per
/// image, blood added with probability `blood_probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    pub gloves: Vec<GloveSpec>,
    pub blood_probability: f64,
    /// Splatter parameters used when a glove has none of its own. The seed
    /// is replaced per image.
    pub blood: BloodParams,
    pub jpeg_quality: u8,
    /// Mask components smaller than this produce no label.
    pub min_component_pixels: usize,
}

impl Default for Palette {
    fn default() -> Self {
        let glove = |color| GloveSpec {
            color,
            opacity: DEFAULT_OPACITY,
            blood: None,
        };
        Palette {
            gloves: vec![
                glove(STERILE_WHITE),
                glove(NON_STERILE_BLUE),
                glove(LATEX_GREEN),
            ],
            blood_probability: 0.5,
            blood: BloodParams::with_seed(0),
            jpeg_quality: 95,
            min_component_pixels: 1,
        }
    }
}

impl Palette {
    pub fn from_toml(text: &str) -> Result<Self> {
        let palette: Palette =
            toml::from_str(text).map_err(|e| Error::Config(format!("palette: {e}")))?;
        palette.validate()?;
        Ok(palette)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Palette::from_toml(&fs::read_to_string(path).at(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gloves.is_empty() {
            return Err(Error::Config("palette has no gloves".into()));
        }
        for g in &self.gloves {
            g.validate()?;
        }
        self.blood.validate()?;
        if !(0.0..=1.0).contains(&self.blood_probability) {
            return Err(Error::Config(format!(
                "blood_probability must be in [0,1], got {}",
                self.blood_probability
            )));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::Config("jpeg_quality must be in 1..=100".into()));
        }
        Ok(())
    }

    /// Glove (with seeded blood, if any) for one image. Depends only on the
    /// master seed and the image name, never on processing order.
    pub fn assign(&self, master_seed: u64, name: &str) -> (usize, GloveSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(image_seed(master_seed, name));
        let idx = rng.gen_range(0..self.gloves.len());
        let bloody = rng.gen::<f64>() < self.blood_probability;
        let blood_seed = rng.gen::<u64>();
        let mut spec = self.gloves[idx].clone();
        spec.blood = bloody.then(|| BloodParams {
            seed: blood_seed,
            ..spec.blood.clone().unwrap_or_else(|| self.blood.clone())
        });
        (idx, spec)
    }
}

fn image_seed(master_seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub name: String,
    pub glove: usize,
    pub blood: bool,
    pub boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub images: usize,
    pub boxes: usize,
    pub skipped: Vec<Skipped>,
    pub assignments: Vec<Assignment>,
}

/// Labels for every 8-connected mask component.
pub(crate) fn mask_labels(mask: &BinaryMask, min_pixels: usize) -> Vec<BBox> {
    let (_, comps) = label_components(mask);
    comps
        .iter()
        .filter(|c| c.pixels >= min_pixels.max(1))
        .map(|c| {
            c.bounds
                .to_normalized(mask.width(), mask.height())
                .expect("component bounds have positive area")
        })
        .collect()
}

fn load_mask(path: &Path) -> std::result::Result<BinaryMask, String> {
    let img = image::open(path).map_err(|e| format!("unreadable mask: {e}"))?;
    Ok(BinaryMask::from_gray(&img.to_luma8()))
}

fn write_jpeg(path: &Path, img: &RgbImage, quality: u8) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut enc = JpegEncoder::new_with_quality(BufWriter::new(file), quality);
    enc.encode(
        img.pixels(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

enum Outcome {
    Done(Assignment),
    Skip(Skipped),
}

fn process_one(
    image_path: &Path,
    in_root: &Path,
    out_root: &Path,
    palette: &Palette,
    master_seed: u64,
) -> Result<Outcome> {
    let name = yolo::stem(image_path);
    let skip = |reason: String| {
        Ok(Outcome::Skip(Skipped {
            name: name.clone(),
            reason,
        }))
    };
    let mask_path = in_root.join("masks").join(format!("{name}.png"));
    if !mask_path.is_file() {
        return skip(format!("missing mask {}", mask_path.display()));
    }
    let img: RgbImage = match image::open(image_path) {
        Ok(i) => i.to_rgb8().into(),
        Err(e) => return skip(format!("unreadable image: {e}")),
    };
    let mask = match load_mask(&mask_path) {
        Ok(m) => m,
        Err(reason) => return skip(reason),
    };
    if img.check_mask(&mask).is_err() {
        return skip(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        ));
    }

    let (glove, spec) = palette.assign(master_seed, &name);
    let out = augment_image(&img, &mask, &spec)?;
    let labels = mask_labels(&mask, palette.min_component_pixels);
    write_jpeg(
        &out_root.join("images").join(format!("{name}.jpg")),
        &out,
        palette.jpeg_quality,
    )?;
    yolo::write_label_file(
        &out_root.join("labels").join(format!("{name}.txt")),
        &labels,
    )?;
    Ok(Outcome::Done(Assignment {
        name,
        glove,
        blood: spec.blood.is_some(),
        boxes: labels.len(),
    }))
}

/// Augment every `<in_root>/images/*` that has a `<in_root>/masks/<name>.png`,
/// writing `<out_root>/images/<name>.jpg` and `<out_root>/labels/<name>.txt`.
/// Images without a usable mask are skipped and reported, not fatal.
pub fn augment_dataset(
    in_root: &Path,
    out_root: &Path,
    palette: &Palette,
    master_seed: u64,
) -> Result<AugmentSummary> {
    palette.validate()?;
    if !in_root.is_dir() {
        return Err(Error::io(
            in_root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input directory not found"),
        ));
    }
    let images_dir = in_root.join("images");
    let images = if images_dir.is_dir() {
        yolo::list_images(&images_dir)?
    } else {
        Vec::new()
    };
    for sub in ["images", "labels"] {
        let d = out_root.join(sub);
        fs::create_dir_all(&d).at(&d)?;
    }

    let mut summary = AugmentSummary::default();
    let mut seen = BTreeSet::new();
    let mut unique = Vec::new();
    for path in images {
        let name = yolo::stem(&path);
        if seen.insert(name.clone()) {
            unique.push(path);
        } else {
            summary.skipped.push(Skipped {
                name,
                reason: format!("duplicate image name {}", path.display()),
            });
        }
    }

    let outcomes: Vec<Result<Outcome>> = unique
        .par_iter()
        .map(|p| process_one(p, in_root, out_root, palette, master_seed))
        .collect();
    for outcome in outcomes {
        match outcome? {
            Outcome::Done(a) => {
                summary.images += 1;
                summary.boxes += a.boxes;
                summary.assignments.push(a);
            }
            Outcome::Skip(s) => summary.skipped.push(s),
        }
    }
    summary.skipped.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(summary)
}
