//! Hand-detection data toolkit for surgical video: artificial glove
//! augmentation, tracking-based pseudo-label refinement, detection metrics,
//! and an iterative self-training loop around external detector/trainer
//! commands.

pub mod augment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod refine;
pub mod track;
pub mod yolo;

pub use error::{Error, Result};
pub use geometry::{bbox_from_mask, iou, BBox, BinaryMask, FrameDetections, PixelBox, RgbImage};
