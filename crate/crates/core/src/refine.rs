//! Pseudo-label refinement.
//!
//! Two filters remove unreliable detections from a video's raw predictions:
//!
//! * the spatial filter: frames are grouped into blocks of `window_len`;
//!   boxes whose center lies farther than `radius` from the mean center of
//!   their block are dropped;
//! * the track-length filter: detections are tracked across frames and every
//!   track with fewer than `min_track_len` observations is dropped.
//!
//! Filters only ever remove boxes; surviving boxes are bit-identical to the
//! input.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::geometry::{BBox, FrameDetections};
use crate::track::{track_ids, tracks_to_frames, Track, TrackerConfig};
use crate::yolo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub window_len: usize,
    /// Normalized distance from the block mean center.
    pub radius: f64,
    pub min_track_len: usize,
    pub conf_floor: f64,
    /// Centered sliding window instead of tumbling blocks.
    pub sliding: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            window_len: 10,
            radius: 0.35,
            min_track_len: 5,
            conf_floor: 0.25,
            sliding: false,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 1 {
            return Err(Error::InvalidArgument("window_len must be >= 1".into()));
        }
        if self.min_track_len < 1 {
            return Err(Error::InvalidArgument("min_track_len must be >= 1".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius must be > 0, got {}",
                self.radius
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_floor) {
            return Err(Error::InvalidArgument(format!(
                "conf_floor must be in [0,1], got {}",
                self.conf_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Raw pseudo-labels.
    #[default]
    None,
    Spatial,
    Tracking,
    /// Spatial filter followed by the tracking filter.
    Both,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::None => "none",
            FilterMode::Spatial => "spatial",
            FilterMode::Tracking => "tracking",
            FilterMode::Both => "both",
        })
    }
}

impl FromStr for FilterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FilterMode::None),
            "spatial" => Ok(FilterMode::Spatial),
            "tracking" => Ok(FilterMode::Tracking),
            "both" => Ok(FilterMode::Both),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter mode `{other}` (none|spatial|tracking|both)"
            ))),
        }
    }
}

fn mean_center<'a>(frames: impl IntoIterator<Item = &'a FrameDetections>) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for b in frames.into_iter().flat_map(|f| &f.boxes) {
        sx += b.cx();
        sy += b.cy();
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

fn within(b: &BBox, center: (f64, f64), radius: f64) -> bool {
    (b.cx() - center.0).hypot(b.cy() - center.1) <= radius
}

fn keep_near(frame: &FrameDetections, center: Option<(f64, f64)>, radius: f64) -> FrameDetections {
    match center {
        None => frame.clone(),
        Some(c) => FrameDetections::new(
            frame.frame_idx,
            frame
                .boxes
                .iter()
                .copied()
                .filter(|b| within(b, c, radius))
                .collect(),
        ),
    }
}

/// Area-of-interest filter over frames ordered by index.
pub fn spatial_filter(video: &[FrameDetections], p: &FilterParams) -> Vec<FrameDetections> {
    let w = p.window_len.max(1);
    if p.sliding {
        let n = video.len();
        return (0..n)
            .map(|i| {
                let end = (i.saturating_sub((w - 1) / 2) + w).min(n);
                let start = end.saturating_sub(w);
                keep_near(&video[i], mean_center(&video[start..end]), p.radius)
            })
            .collect();
    }
    video
        .chunks(w)
        .flat_map(|block| {
            let center = mean_center(block);
            block.iter().map(move |f| keep_near(f, center, p.radius))
        })
        .collect()
}

/// Observations of every track with at least `min_track_len` entries,
/// regrouped per frame. Frames with no surviving box are omitted.
pub fn track_length_filter(tracks: &[Track], p: &FilterParams) -> Vec<FrameDetections> {
    tracks_to_frames(tracks.iter().filter(|t| t.len() >= p.min_track_len))
}

/// Track `video` and drop detections on short tracks, keeping the input's
/// frame list and box order.
pub fn tracking_filter(
    video: &[FrameDetections],
    p: &FilterParams,
    tracker: &TrackerConfig,
) -> Result<Vec<FrameDetections>> {
    let (tracks, ids) = track_ids(video, tracker)?;
    let survivors: BTreeSet<u64> = tracks
        .iter()
        .filter(|t| t.len() >= p.min_track_len)
        .map(|t| t.id)
        .collect();
    Ok(video
        .iter()
        .zip(ids)
        .map(|(frame, ids)| {
            let boxes = frame
                .boxes
                .iter()
                .zip(ids)
                .filter(|(_, id)| id.is_some_and(|id| survivors.contains(&id)))
                .map(|(b, _)| *b)
                .collect();
            FrameDetections::new(frame.frame_idx, boxes)
        })
        .collect())
}

pub fn apply_conf_floor(video: &[FrameDetections], floor: f64) -> Vec<FrameDetections> {
    video
        .iter()
        .map(|f| {
            FrameDetections::new(
                f.frame_idx,
                f.boxes
                    .iter()
                    .copied()
                    .filter(|b| b.score() >= floor)
                    .collect(),
            )
        })
        .collect()
}

/// Everything that decides which pseudo-labels survive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub mode: FilterMode,
    #[serde(flatten)]
    pub params: FilterParams,
    pub tracker: TrackerConfig,
    /// Leave frames without any surviving box out of the dataset.
    pub drop_empty: bool,
}

impl RefineOptions {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.tracker.validate()
    }
}

/// Confidence floor, then the selected filter.
pub fn refine_video(
    video: &[FrameDetections],
    opts: &RefineOptions,
) -> Result<Vec<FrameDetections>> {
    opts.validate()?;
    let floored = apply_conf_floor(video, opts.params.conf_floor);
    Ok(match opts.mode {
        FilterMode::None => floored,
        FilterMode::Spatial => spatial_filter(&floored, &opts.params),
        FilterMode::Tracking => tracking_filter(&floored, &opts.params, &opts.tracker)?,
        FilterMode::Both => {
            let spatial = spatial_filter(&floored, &opts.params);
            tracking_filter(&spatial, &opts.params, &opts.tracker)?
        }
    })
}

/// Frame images of one video with their prediction files.
///
/// Frame `i` is the `i`-th image of `frames_dir` in file-name order; its
/// predictions live in `<pred_dir>/<image stem>.txt`. Frames without a
/// prediction file have no detections. A prediction file without a matching
/// image is an error.
pub fn load_video_predictions(frames_dir: &Path, pred_dir: &Path) -> Result<Vec<FrameDetections>> {
    let images = yolo::list_images(frames_dir)?;
    let stems: BTreeSet<String> = images.iter().map(|p| yolo::stem(p)).collect();
    for label in yolo::list_label_files(pred_dir)? {
        if !stems.contains(&yolo::stem(&label)) {
            return Err(Error::Dataset(format!(
                "prediction {} has no frame image in {}",
                label.display(),
                frames_dir.display()
            )));
        }
    }
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let pred = pred_dir.join(format!("{}.{}", yolo::stem(img), yolo::LABEL_EXTENSION));
            let boxes = if pred.is_file() {
                yolo::read_label_file(&pred, yolo::Confidence::Required)?
            } else {
                Vec::new()
            };
            Ok(FrameDetections::new(i as u32, boxes))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cycle: Option<u32>,
    pub options: RefineOptions,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub frames: usize,
    pub raw_boxes: usize,
    pub kept_boxes: usize,
    pub dropped_boxes: usize,
}

impl DatasetStats {
    pub fn merge(&mut self, other: DatasetStats) {
        self.frames += other.frames;
        self.raw_boxes += other.raw_boxes;
        self.kept_boxes += other.kept_boxes;
        self.dropped_boxes += other.dropped_boxes;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoFrame {
    pub image: PathBuf,
    pub labels: FrameDetections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    pub root: PathBuf,
    pub frames: Vec<PseudoFrame>,
    pub provenance: Provenance,
    pub stats: DatasetStats,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

/// Refine one video and add it to the dataset at `out` (creating
/// `out/images` and `out/labels`). Output files are named
/// `<prefix><frame file name>`.
pub fn write_video(
    frames_dir: &Path,
    predictions: &[FrameDetections],
    opts: &RefineOptions,
    out: &Path,
    prefix: &str,
) -> Result<(Vec<PseudoFrame>, DatasetStats)> {
    let images = yolo::list_images(frames_dir)?;
    for f in predictions {
        if f.frame_idx as usize >= images.len() {
            return Err(Error::Dataset(format!(
                "prediction for frame {} but {} has only {} images",
                f.frame_idx,
                frames_dir.display(),
                images.len()
            )));
        }
    }
    let mut ordered = predictions.to_vec();
    ordered.sort_by_key(|f| f.frame_idx);
    // every frame is present so labels exist for all images
    let mut full: Vec<FrameDetections> = (0..images.len() as u32)
        .map(FrameDetections::empty)
        .collect();
    for f in ordered {
        full[f.frame_idx as usize].boxes.extend(f.boxes);
    }
    let refined = refine_video(&full, opts)?;

    let images_out = out.join("images");
    let labels_out = out.join("labels");
    fs::create_dir_all(&images_out).at(&images_out)?;
    fs::create_dir_all(&labels_out).at(&labels_out)?;

    let raw_boxes: usize = full.iter().map(|f| f.boxes.len()).sum();
    let mut stats = DatasetStats {
        raw_boxes,
        ..Default::default()
    };
    let mut frames = Vec::new();
    for frame in refined {
        if opts.drop_empty && frame.boxes.is_empty() {
            continue;
        }
        let src = &images[frame.frame_idx as usize];
        let file_name = src.file_name().expect("listed image has a file name");
        let dst = images_out.join(format!("{prefix}{}", file_name.to_string_lossy()));
        fs::copy(src, &dst).at(&dst)?;
        let label = labels_out.join(format!(
            "{prefix}{}.{}",
            yolo::stem(src),
            yolo::LABEL_EXTENSION
        ));
        let boxes: Vec<BBox> = frame.boxes.iter().map(|b| b.without_conf()).collect();
        yolo::write_label_file(&label, &boxes)?;
        stats.frames += 1;
        stats.kept_boxes += boxes.len();
        frames.push(PseudoFrame {
            image: dst,
            labels: frame,
        });
    }
    stats.dropped_boxes = stats.raw_boxes - stats.kept_boxes;
    Ok((frames, stats))
}

pub fn write_provenance(out: &Path, provenance: &Provenance) -> Result<()> {
    let path = out.join(PROVENANCE_FILE);
    let text = serde_json::to_string_pretty(provenance).expect("provenance serializes");
    fs::write(&path, text + "\n").at(&path)
}

/// Pair the frames of one video with their (refined) predictions and write a
/// YOLO dataset plus a provenance record to `out`.
pub fn build_pseudo_dataset(
    frames_dir: &Path,
    predictions: &[FrameDetections],
    opts: &RefineOptions,
    out: &Path,
    cycle: Option<u32>,
) -> Result<PseudoDataset> {
    let (frames, stats) = write_video(frames_dir, predictions, opts, out, "")?;
    let provenance = Provenance {
        cycle,
        options: *opts,
        sources: vec![frames_dir.display().to_string()],
    };
    write_provenance(out, &provenance)?;
    Ok(PseudoDataset {
        root: out.to_path_buf(),
        frames,
        provenance,
        stats,
    })
}
