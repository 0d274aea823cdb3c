//! Tracking-by-detection with constant-velocity prediction and IoU
//! association.
//!
//! Each frame, every live track predicts its box forward from the velocity
//! of its last two observations. Detections are matched to predictions by
//! solving the assignment problem on `1 - IoU`; matches below the IoU gate are
//! discarded. A track that misses a frame freezes its predicted position and
//! is kept as `Lost` until it has missed more than `max_misses` frames.

mod assign;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, FrameDetections};

pub use assign::{assign, total_cost};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Minimum IoU between prediction and detection to continue a track.
    pub iou_gate: f64,
    /// Consecutive unmatched frames a track survives.
    pub max_misses: u32,
    /// Detections below this confidence are ignored entirely.
    pub min_conf: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_gate: 0.3,
            max_misses: 5,
            min_conf: 0.25,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_gate > 0.0 && self.iou_gate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "iou_gate must be in (0,1), got {}",
                self.iou_gate
            )));
        }
        if !(0.0..=1.0).contains(&self.min_conf) {
            return Err(Error::InvalidArgument(format!(
                "min_conf must be in [0,1], got {}",
                self.min_conf
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Active,
    Lost,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub observations: Vec<Observation>,
    pub state: TrackState,
    pub misses: u32,
    #[serde(skip)]
    frozen: Option<BBox>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_frame(&self) -> u32 {
        self.observations[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.observations[self.observations.len() - 1].frame
    }

    fn last(&self) -> &Observation {
        &self.observations[self.observations.len() - 1]
    }

    fn predict(&self, frame: u32) -> BBox {
        if let Some(frozen) = self.frozen {
            return frozen;
        }
        let last = self.last();
        let n = self.observations.len();
        if n < 2 {
            return last.bbox;
        }
        let prev = &self.observations[n - 2];
        let span = (last.frame - prev.frame) as f64;
        let ahead = (frame - last.frame) as f64;
        let vx = (last.bbox.cx() - prev.bbox.cx()) / span;
        let vy = (last.bbox.cy() - prev.bbox.cy()) / span;
        last.bbox.shifted(vx * ahead, vy * ahead)
    }
}

/// Per-video tracker state. Frames must be fed in strictly increasing order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }

    /// Advance one frame. Returns the track id given to each input box, or
    /// `None` for boxes under `min_conf`.
    pub fn step(&mut self, frame: &FrameDetections) -> Result<Vec<Option<u64>>> {
        if let Some(last) = self.last_frame {
            if frame.frame_idx <= last {
                return Err(Error::FrameOrder {
                    last,
                    got: frame.frame_idx,
                });
            }
        }
        self.last_frame = Some(frame.frame_idx);

        let accepted: Vec<usize> = (0..frame.boxes.len())
            .filter(|&i| frame.boxes[i].score() >= self.cfg.min_conf)
            .collect();
        let live: Vec<usize> = (0..self.tracks.len())
            .filter(|&t| self.tracks[t].state != TrackState::Finished)
            .collect();
        let predicted: Vec<BBox> = live
            .iter()
            .map(|&t| self.tracks[t].predict(frame.frame_idx))
            .collect();

        let cost: Vec<Vec<f64>> = predicted
            .iter()
            .map(|p| {
                accepted
                    .iter()
                    .map(|&d| 1.0 - iou(p, &frame.boxes[d]))
                    .collect()
            })
            .collect();
        let matches = assign(&cost, 1.0 - self.cfg.iou_gate);

        let mut ids = vec![None; frame.boxes.len()];
        let mut track_matched = vec![false; live.len()];
        for &(ti, di) in &matches {
            let track = &mut self.tracks[live[ti]];
            let det = accepted[di];
            track.observations.push(Observation {
                frame: frame.frame_idx,
                bbox: frame.boxes[det],
            });
            track.state = TrackState::Active;
            track.misses = 0;
            track.frozen = None;
            track_matched[ti] = true;
            ids[det] = Some(track.id);
        }

        for (ti, &t) in live.iter().enumerate() {
            if track_matched[ti] {
                continue;
            }
            let track = &mut self.tracks[t];
            if track.frozen.is_none() {
                track.frozen = Some(predicted[ti]);
            }
            track.misses += 1;
            track.state = if track.misses > self.cfg.max_misses {
                TrackState::Finished
            } else {
                TrackState::Lost
            };
        }

        for &d in &accepted {
            if ids[d].is_some() {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                observations: vec![Observation {
                    frame: frame.frame_idx,
                    bbox: frame.boxes[d],
                }],
                state: TrackState::Active,
                misses: 0,
                frozen: None,
            });
            ids[d] = Some(id);
        }
        Ok(ids)
    }
}

/// Track a whole video. Returns every track ever created, ordered by id.
pub fn run_tracker(video: &[FrameDetections], cfg: &TrackerConfig) -> Result<Vec<Track>> {
    let mut tracker = Tracker::new(*cfg)?;
    for frame in video {
        tracker.step(frame)?;
    }
    Ok(tracker.into_tracks())
}

/// Track ids per frame, aligned with each frame's boxes.
pub fn track_ids(
    video: &[FrameDetections],
    cfg: &TrackerConfig,
) -> Result<(Vec<Track>, Vec<Vec<Option<u64>>>)> {
    let mut tracker = Tracker::new(*cfg)?;
    let mut ids = Vec::with_capacity(video.len());
    for frame in video {
        ids.push(tracker.step(frame)?);
    }
    Ok((tracker.into_tracks(), ids))
}

/// Reassemble track observations into per-frame detections, ordered by
/// frame then track id.
pub fn tracks_to_frames<'a>(tracks: impl IntoIterator<Item = &'a Track>) -> Vec<FrameDetections> {
    let mut frames: BTreeMap<u32, Vec<BBox>> = BTreeMap::new();
    for t in tracks {
        for o in &t.observations {
            frames.entry(o.frame).or_default().push(o.bbox);
        }
    }
    frames
        .into_iter()
        .map(|(frame_idx, boxes)| FrameDetections::new(frame_idx, boxes))
        .collect()
}
