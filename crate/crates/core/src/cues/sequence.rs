//! Directory layout for cue sequences:
//!
//! ```text
//! <dir>/camera.json
//! <dir>/detections.json            (optional)
//! <dir>/frames/NNNNNN.obj_mask.pgm
//! <dir>/frames/NNNNNN.hand_mask.pgm
//! <dir>/frames/NNNNNN.depth.rten
//! <dir>/frames/NNNNNN.flow.rten
//! ```

use std::path::{Path, PathBuf};

use super::pgm::{load_pgm, save_pgm};
use super::tensor::{load_rten, save_rten};
use super::{CueError, CueSequence, DetectionBox, FrameCues};
use crate::geometry::Camera;
use crate::grid::Grid2;

/// File paths for one frame's cues.
pub fn sequence_paths(dir: &Path, frame: usize) -> [PathBuf; 4] {
    let frames = dir.join("frames");
    [
        frames.join(format!("{frame:06}.obj_mask.pgm")),
        frames.join(format!("{frame:06}.hand_mask.pgm")),
        frames.join(format!("{frame:06}.depth.rten")),
        frames.join(format!("{frame:06}.flow.rten")),
    ]
}

pub fn load_camera(path: &Path) -> Result<Camera, CueError> {
    let text = std::fs::read_to_string(path)?;
    let cam: Camera = serde_json::from_str(&text)
        .map_err(|source| CueError::Json { path: path.display().to_string(), source })?;
    cam.validate().map_err(|e| CueError::Invalid(e.to_string()))?;
    Ok(cam)
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionBox>, CueError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|source| CueError::Json { path: path.display().to_string(), source })
}

/// Loads and validates a full sequence. The frame count is the highest
/// index present in `frames/`; any hole below it is a [`CueError::MissingCue`]
/// naming the first absent frame. A missing flow file is tolerated for
/// frame 0 only (flow is undefined there) and loads as zeros.
pub fn load_sequence(dir: &Path) -> Result<CueSequence, CueError> {
    let camera = load_camera(&dir.join("camera.json"))?;
    let frames_dir = dir.join("frames");
    let mut max_index: Option<usize> = None;
    for entry in std::fs::read_dir(&frames_dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some((prefix, _)) = name.split_once('.') {
            if let Ok(i) = prefix.parse::<usize>() {
                max_index = Some(max_index.map_or(i, |m| m.max(i)));
            }
        }
    }
    let count = max_index.map(|m| m + 1).ok_or(CueError::MissingCue {
        frame: 0,
        kind: "any".into(),
    })?;

    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut frames = Vec::with_capacity(count);
    for t in 0..count {
        let [obj_p, hand_p, depth_p, flow_p] = sequence_paths(dir, t);
        let kinds = [("object mask", &obj_p), ("hand mask", &hand_p), ("depth", &depth_p)];
        for (kind, p) in kinds {
            if !p.exists() {
                return Err(CueError::MissingCue { frame: t, kind: kind.into() });
            }
        }
        let flow = if flow_p.exists() {
            load_rten(&flow_p)?
        } else if t == 0 {
            Grid2::filled(w, h, 2, 0.0f32)
        } else {
            return Err(CueError::MissingCue { frame: t, kind: "flow".into() });
        };
        let cues = FrameCues {
            index: t,
            object_mask: load_pgm(&obj_p)?,
            hand_mask: load_pgm(&hand_p)?,
            depth: load_rten(&depth_p)?,
            flow,
        };
        frames.push(cues);
    }
    let seq = CueSequence { camera, frames };
    seq.validate()?;
    Ok(seq)
}

/// Writes a sequence in the canonical layout (including frame 0's zero
/// flow, so `load ∘ save` is the identity, byte for byte).
pub fn save_sequence(dir: &Path, seq: &CueSequence) -> Result<(), CueError> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let cam_json = serde_json::to_string(&seq.camera)
        .map_err(|source| CueError::Json { path: "camera.json".into(), source })?;
    std::fs::write(dir.join("camera.json"), cam_json)?;
    for f in &seq.frames {
        let [obj_p, hand_p, depth_p, flow_p] = sequence_paths(dir, f.index);
        save_pgm(&obj_p, &f.object_mask)?;
        save_pgm(&hand_p, &f.hand_mask)?;
        save_rten(&depth_p, &f.depth)?;
        save_rten(&flow_p, &f.flow)?;
    }
    Ok(())
}

pub fn save_detections(path: &Path, detections: &[DetectionBox]) -> Result<(), CueError> {
    let json = serde_json::to_string(detections)
        .map_err(|source| CueError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::DetectionKind;
    use crate::grid::Mask;

    fn tiny_sequence() -> CueSequence {
        let camera = Camera { fx: 50.0, fy: 50.0, cx: 4.0, cy: 3.0, width: 8, height: 6 };
        let mut frames = Vec::new();
        for t in 0..3 {
            let mut om = Mask::filled(8, 6, 1, 0);
            om.set(t, 0, 0, 1);
            let mut hm = Mask::filled(8, 6, 1, 0);
            hm.set(t, 1, 0, 1);
            let mut depth = Grid2::filled(8, 6, 1, 0.0f32);
            depth.set(t, 2, 0, 1.25 + t as f32);
            let mut flow = Grid2::filled(8, 6, 2, 0.0f32);
            if t > 0 {
                flow.set(1, 1, 0, 0.5);
                flow.set(1, 1, 1, -0.25);
            }
            frames.push(FrameCues { index: t, object_mask: om, hand_mask: hm, depth, flow });
        }
        CueSequence { camera, frames }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let e = e.unwrap();
                if e.path().is_dir() {
                    stack.push(e.path());
                } else {
                    let rel = e.path().strip_prefix(dir).unwrap().display().to_string();
                    out.push((rel, std::fs::read(e.path()).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn save_load_save_round_trips_bit_exactly() {
        let seq = tiny_sequence();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_sequence(d1.path(), &seq).unwrap();
        let loaded = load_sequence(d1.path()).unwrap();
        assert_eq!(loaded, seq);
        save_sequence(d2.path(), &loaded).unwrap();
        assert_eq!(dir_bytes(d1.path()), dir_bytes(d2.path()));
    }

    #[test]
    fn frame_gap_reports_first_missing_index() {
        let seq = tiny_sequence();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &seq).unwrap();
        for p in sequence_paths(dir.path(), 1) {
            std::fs::remove_file(p).unwrap();
        }
        match load_sequence(dir.path()) {
            Err(CueError::MissingCue { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("expected MissingCue, got {other:?}"),
        }
    }

    #[test]
    fn truncated_tensor_names_the_file() {
        let seq = tiny_sequence();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &seq).unwrap();
        let depth1 = &sequence_paths(dir.path(), 1)[2];
        let bytes = std::fs::read(depth1).unwrap();
        std::fs::write(depth1, &bytes[..bytes.len() - 1]).unwrap();
        match load_sequence(dir.path()) {
            Err(CueError::CorruptTensor { path, .. }) => {
                assert!(path.contains("000001.depth.rten"), "path was {path}")
            }
            other => panic!("expected CorruptTensor, got {other:?}"),
        }
    }

    #[test]
    fn missing_frame0_flow_loads_as_zeros() {
        let seq = tiny_sequence();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &seq).unwrap();
        std::fs::remove_file(&sequence_paths(dir.path(), 0)[3]).unwrap();
        let loaded = load_sequence(dir.path()).unwrap();
        assert!(loaded.frames[0].flow.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detections_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.json");
        let dets = vec![
            DetectionBox {
                frame: 0,
                boxv: [1.0, 2.0, 30.0, 40.0],
                kind: DetectionKind::Hand,
                score: 0.875,
                mask: None,
            },
            DetectionBox {
                frame: 1,
                boxv: [5.0, 6.0, 7.0, 8.0],
                kind: DetectionKind::ActiveObject,
                score: 1.0,
                mask: Some("frames/000001.inst0.pgm".into()),
            },
        ];
        save_detections(&path, &dets).unwrap();
        let loaded = load_detections(&path).unwrap();
        assert_eq!(loaded, dets);
        // Kind serialization is snake_case.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"active_object\""));
        assert!(text.contains("\"hand\""));
    }
}
