//! Temporal association of detections into object and hand tracks.

use super::{CueError, DetectionBox};
use crate::grid::Mask;

/// IoU threshold below which an instance is not associated to the active
/// object box.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Intersection-over-union of two `(u_min, v_min, u_max, v_max)` boxes.
/// Degenerate or disjoint pairs give 0.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| ((r[2] - r[0]).max(0.0)) * ((r[3] - r[1]).max(0.0));
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-frame object masks selected by IoU against the active-object box.
#[derive(Debug, Clone)]
pub struct ObjectTrack {
    pub masks: Vec<Mask>,
    /// Frames where no instance reached the IoU threshold; those carry a
    /// zero mask.
    pub gaps: Vec<bool>,
}

/// For every frame, picks the instance whose box best overlaps the active
/// box (ties broken by lower instance index). Frames whose best IoU falls
/// below [`IOU_THRESHOLD`] get a zero mask and a gap flag.
pub fn associate_object_track(
    instances: &[Vec<(DetectionBox, Mask)>],
    active_boxes: &[DetectionBox],
    width: usize,
    height: usize,
) -> ObjectTrack {
    assert_eq!(instances.len(), active_boxes.len(), "one active box per frame");
    let mut masks = Vec::with_capacity(instances.len());
    let mut gaps = Vec::with_capacity(instances.len());
    for (frame_instances, active) in instances.iter().zip(active_boxes) {
        let mut best: Option<(f64, usize)> = None;
        for (i, (det, _)) in frame_instances.iter().enumerate() {
            let iou = box_iou(&det.boxv, &active.boxv);
            // Strict > keeps the lowest index on ties.
            if best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, i));
            }
        }
        match best {
            Some((iou, i)) if iou >= IOU_THRESHOLD => {
                masks.push(frame_instances[i].1.clone());
                gaps.push(false);
            }
            _ => {
                masks.push(Mask::filled(width, height, 1, 0));
                gaps.push(true);
            }
        }
    }
    ObjectTrack { masks, gaps }
}

/// Hand box track built outward from an anchor frame: at the anchor the
/// highest-score detection wins; walking away from it in both directions,
/// each frame keeps the detection overlapping the previous frame's box
/// most, carrying the previous box (and flagging) when nothing overlaps.
pub fn propagate_hand_track(
    detections: &[Vec<DetectionBox>],
    anchor: usize,
) -> Result<(Vec<[f64; 4]>, Vec<bool>), CueError> {
    assert!(anchor < detections.len(), "anchor out of range");
    let anchor_box = detections[anchor]
        .iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(CueError::NoAnchorDetection { frame: anchor })?
        .boxv;

    let n = detections.len();
    let mut boxes = vec![[0.0; 4]; n];
    let mut carried = vec![false; n];
    boxes[anchor] = anchor_box;

    let step = |t: usize, prev: [f64; 4], boxes: &mut Vec<[f64; 4]>, carried: &mut Vec<bool>| {
        let mut best: Option<(f64, usize)> = None;
        for (i, det) in detections[t].iter().enumerate() {
            let iou = box_iou(&det.boxv, &prev);
            if best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, i));
            }
        }
        match best {
            Some((iou, i)) if iou > 0.0 => boxes[t] = detections[t][i].boxv,
            _ => {
                boxes[t] = prev;
                carried[t] = true;
            }
        }
    };

    for t in anchor + 1..n {
        let prev = boxes[t - 1];
        step(t, prev, &mut boxes, &mut carried);
    }
    for t in (0..anchor).rev() {
        let prev = boxes[t + 1];
        step(t, prev, &mut boxes, &mut carried);
    }
    Ok((boxes, carried))
}

/// Visible hand pixels: the hand mask minus its overlap with the object
/// mask.
pub fn visible_hand_mask(hand: &Mask, object: &Mask) -> Result<Mask, CueError> {
    if !hand.same_shape(object) {
        return Err(CueError::ShapeMismatch {
            context: "visible_hand_mask".into(),
            got_w: object.width,
            got_h: object.height,
            want_w: hand.width,
            want_h: hand.height,
        });
    }
    let data = hand
        .data
        .iter()
        .zip(&object.data)
        .map(|(&h, &o)| if h != 0 && o == 0 { 1 } else { 0 })
        .collect();
    Ok(Mask { width: hand.width, height: hand.height, channels: 1, data })
}
