//! YOLO label files.
//!
//! One `.txt` per image with the same basename. Each line is
//! `class cx cy w h` with normalized coordinates; prediction files append a
//! sixth `conf` field. An empty file means no objects. Numbers are written
//! with six significant digits (never fewer than six decimals), so
//! write -> parse -> write reproduces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::geometry::BBox;

pub const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "webp"];
pub const LABEL_EXTENSION: &str = "txt";

/// Whether a label file carries the trailing confidence column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    /// Ground truth: five fields, a sixth is tolerated and kept.
    Optional,
    /// Predictions: exactly six fields.
    Required,
}

/// Format a normalized value with six significant digits.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0.000000".to_string();
    }
    // Round to 6 significant digits first so the decade is that of the
    // rounded value (0.0999999 -> 0.1).
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    let exponent = rounded.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(6) as usize;
    format!("{rounded:.decimals$}")
}

pub fn format_line(b: &BBox) -> String {
    let mut line = format!(
        "{} {} {} {} {}",
        b.class_id(),
        format_number(b.cx()),
        format_number(b.cy()),
        format_number(b.w()),
        format_number(b.h())
    );
    if let Some(c) = b.conf() {
        line.push(' ');
        line.push_str(&format_number(c));
    }
    line
}

pub fn format_labels(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format_line(b));
        out.push('\n');
    }
    out
}

/// Parse the contents of one label file. `path` is only used in errors.
pub fn parse_labels(text: &str, path: &Path, conf: Confidence) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let ok_len = match conf {
            Confidence::Required => fields.len() == 6,
            Confidence::Optional => fields.len() == 5 || fields.len() == 6,
        };
        if !ok_len {
            let want = match conf {
                Confidence::Required => "6 fields (class cx cy w h conf)",
                Confidence::Optional => "5 fields (class cx cy w h)",
            };
            return Err(err(format!("expected {want}, got {}", fields.len())));
        }
        let class_id: u32 = fields[0].parse().map_err(|_| {
            err(format!(
                "class id `{}` is not a non-negative integer",
                fields[0]
            ))
        })?;
        let mut nums = [0.0f64; 5];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| err(format!("`{field}` is not a number")))?;
        }
        let mut b = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| err(e.to_string()))?
            .with_class(class_id);
        if fields.len() == 6 {
            b = b.with_conf(nums[4]).map_err(|e| err(e.to_string()))?;
        }
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn read_label_file(path: &Path, conf: Confidence) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).at(path)?;
    parse_labels(&text, path, conf)
}

pub fn write_label_file(path: &Path, boxes: &[BBox]) -> Result<()> {
    fs::write(path, format_labels(boxes)).at(path)
}

pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn list_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_file() && keep(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, is_image)
}

pub fn list_label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, |p| {
        p.extension().and_then(|e| e.to_str()) == Some(LABEL_EXTENSION)
    })
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `root/labels` when present, otherwise `root` itself.
pub fn labels_dir(root: &Path) -> PathBuf {
    let nested = root.join("labels");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// All label files under a dataset root (or a bare labels directory), keyed
/// by file stem.
pub fn read_label_dir(root: &Path, conf: Confidence) -> Result<BTreeMap<String, Vec<BBox>>> {
    let dir = labels_dir(root);
    let mut out = BTreeMap::new();
    for path in list_label_files(&dir)? {
        out.insert(stem(&path), read_label_file(&path, conf)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetSummary {
    pub images: usize,
    pub boxes: usize,
}

/// Check that `root/images` and `root/labels` pair up one-to-one and every
/// label file parses.
pub fn validate_dataset(root: &Path) -> Result<DatasetSummary> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    let images = list_images(&images_dir)?;
    let labels = list_label_files(&labels_dir)?;
    let mut problems = Vec::new();
    let mut summary = DatasetSummary::default();
    for img in &images {
        let label = labels_dir.join(format!("{}.{LABEL_EXTENSION}", stem(img)));
        if !label.is_file() {
            problems.push(format!("no label file for {}", img.display()));
            continue;
        }
        summary.images += 1;
        summary.boxes += read_label_file(&label, Confidence::Optional)?.len();
    }
    let image_stems: std::collections::BTreeSet<String> = images.iter().map(|p| stem(p)).collect();
    for label in &labels {
        if !image_stems.contains(&stem(label)) {
            problems.push(format!("label {} has no image", label.display()));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: {}",
            root.display(),
            problems.join("; ")
        )));
    }
    Ok(summary)
}
