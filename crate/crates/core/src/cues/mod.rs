//! Per-frame 2D cue ingestion: binary masks, relative depth, dense optical
//! flow and detection boxes, plus the temporal association logic that turns
//! raw detections into usable hand / object tracks.

mod pgm;
mod sequence;
mod tensor;
mod tracks;

pub use pgm::{load_pgm, save_pgm};
pub use sequence::{
    load_camera, load_detections, load_sequence, save_detections, save_sequence, sequence_paths,
};
pub use tensor::{load_rten, save_rten};
pub use tracks::{
    associate_object_track, box_iou, propagate_hand_track, visible_hand_mask, ObjectTrack,
};

use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::grid::{Grid2, Mask};

#[derive(Debug, thiserror::Error)]
pub enum CueError {
    #[error("missing {kind} cue for frame {frame}")]
    MissingCue { frame: usize, kind: String },
    #[error("corrupt tensor {path}: {reason}")]
    CorruptTensor { path: String, reason: String },
    #[error("corrupt mask {path}: {reason}")]
    CorruptMask { path: String, reason: String },
    #[error("shape mismatch: {context} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    ShapeMismatch { context: String, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("anchor frame {frame} has no hand detection")]
    NoAnchorDetection { frame: usize },
    #[error("invalid cue data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

/// What a detector detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionKind {
    Hand,
    ActiveObject,
    GenericInstance,
}

/// One detection box in one frame. `boxv` is `(u_min, v_min, u_max, v_max)`
/// in pixels; `mask` optionally names a PGM file (relative to
/// `detections.json`) with the instance segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub frame: usize,
    #[serde(rename = "box")]
    pub boxv: [f64; 4],
    pub kind: DetectionKind,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

impl DetectionBox {
    /// Checks box ordering and clamps it to the image bounds.
    pub fn validated(mut self, width: u32, height: u32) -> Result<Self, CueError> {
        let [u0, v0, u1, v1] = self.boxv;
        if !(u0 < u1 && v0 < v1) {
            return Err(CueError::Invalid(format!(
                "detection box {:?} in frame {} is not min < max",
                self.boxv, self.frame
            )));
        }
        self.boxv = [
            u0.clamp(0.0, width as f64),
            v0.clamp(0.0, height as f64),
            u1.clamp(0.0, width as f64),
            v1.clamp(0.0, height as f64),
        ];
        Ok(self)
    }
}

/// All 2D cues for one frame. Flow maps pixels of frame `t` back to
/// `t - 1` displacements (forward flow into `t`); by convention frame 0
/// carries a zero flow field.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCues {
    pub index: usize,
    pub object_mask: Mask,
    pub hand_mask: Mask,
    pub depth: Grid2<f32>,
    pub flow: Grid2<f32>,
}

impl FrameCues {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), CueError> {
        let check = |name: &str, w: usize, h: usize, c: usize, want_c: usize| {
            if w != width || h != height {
                return Err(CueError::ShapeMismatch {
                    context: format!("frame {} {name}", self.index),
                    got_w: w,
                    got_h: h,
                    want_w: width,
                    want_h: height,
                });
            }
            if c != want_c {
                return Err(CueError::Invalid(format!(
                    "frame {} {name} has {c} channels, expected {want_c}",
                    self.index
                )));
            }
            Ok(())
        };
        check("object mask", self.object_mask.width, self.object_mask.height, self.object_mask.channels, 1)?;
        check("hand mask", self.hand_mask.width, self.hand_mask.height, self.hand_mask.channels, 1)?;
        check("depth", self.depth.width, self.depth.height, self.depth.channels, 1)?;
        check("flow", self.flow.width, self.flow.height, self.flow.channels, 2)?;
        if !self.object_mask.is_binary() || !self.hand_mask.is_binary() {
            return Err(CueError::Invalid(format!("frame {} masks must be binary", self.index)));
        }
        Ok(())
    }
}

/// An ordered, validated batch of frames sharing one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CueSequence {
    pub camera: Camera,
    pub frames: Vec<FrameCues>,
}

impl CueSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), CueError> {
        self.camera
            .validate()
            .map_err(|e| CueError::Invalid(e.to_string()))?;
        let (w, h) = (self.camera.width as usize, self.camera.height as usize);
        for (t, f) in self.frames.iter().enumerate() {
            if f.index != t {
                return Err(CueError::Invalid(format!(
                    "frame indices not contiguous: position {t} holds index {}",
                    f.index
                )));
            }
            f.validate(w, h)?;
        }
        Ok(())
    }
}
