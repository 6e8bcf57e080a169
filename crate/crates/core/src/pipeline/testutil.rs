//! Shared fixtures for pipeline tests: a small box object, a grasp-like
//! multi-frame scene with self-consistent cues, and mask morphology.

use crate::cues::{CueSequence, FrameCues};
use crate::geometry::{Camera, Quat, TriMesh, Vec3};
use crate::grid::{Grid2, Mask};
use crate::hand::{GraspRef, HandRig, HandState};
use crate::pipeline::losses::PosedObject;
use crate::pipeline::{FrameState, ObjectState, TrajectoryEstimate};

pub fn cam64() -> Camera {
    Camera { fx: 80.0, fy: 80.0, cx: 32.0, cy: 32.0, width: 64, height: 64 }
}

pub fn box_mesh(hx: f64, hy: f64, hz: f64) -> TriMesh {
    let v = vec![
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(-hx, hy, -hz),
        Vec3::new(-hx, -hy, hz),
        Vec3::new(hx, -hy, hz),
        Vec3::new(hx, hy, hz),
        Vec3::new(-hx, hy, hz),
    ];
    let f = vec![
        [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
        [1, 2, 6], [1, 6, 5], [3, 0, 4], [3, 4, 7],
    ];
    TriMesh::new(v, f).unwrap()
}

pub fn erode(mask: &Mask, r: usize) -> Mask {
    mask.eroded(r)
}

pub struct GraspScene {
    pub mesh: TriMesh,
    pub cues: CueSequence,
    pub truth: TrajectoryEstimate,
    pub grasp: Vec<GraspRef>,
}

/// A grasp-like scene: the hand's fingers dip into a slowly moving tilted
/// box. All cues are rendered from the exact truth states, with the object
/// mask eroded 2 px so effective pixel sets stay stable under
/// finite-difference probes, and the depth cue smoothly corrupted so its
/// gradients stay nonzero at the truth.
pub fn grasp_scene(rig: &HandRig, frames: usize) -> GraspScene {
    grasp_scene_with(rig, frames, 2)
}

/// [`grasp_scene`] with a chosen object-mask erosion radius. Radius 0 keeps
/// the mask consistent with the truth silhouette (for convergence tests);
/// the default 2 px stabilizes finite-difference pixel sets instead.
pub fn grasp_scene_with(rig: &HandRig, frames: usize, erode_px: usize) -> GraspScene {
    let camera = cam64();
    let mesh = box_mesh(0.06, 0.05, 0.04);
    let scale = 0.95;
    let mut frames_cues = Vec::new();
    let mut frames_states = Vec::new();
    for f in 0..frames {
        let t = f as f64;
        let object = ObjectState {
            rot: Quat::from_axis_angle(&Vec3::new(1.0, 0.7, 0.3), 0.5 + 0.08 * t),
            trans: Vec3::new(0.01 + 0.012 * t, -0.005, 0.62),
        };
        let hand = HandState {
            rot: Quat::from_axis_angle(&Vec3::new(0.2, 1.0, 0.1), -1.2),
            trans: object.trans + Vec3::new(-0.045, 0.02, 0.055 + 0.006 * t),
            artic: {
                let mut a = vec![0.0; rig.latent_dim()];
                a[0] = 0.55;
                a[1] = -0.2;
                a
            },
        };

        let posed_obj = PosedObject::new(&mesh, &object, scale).unwrap();
        let obj_buf = crate::render::rasterize(&posed_obj.to_mesh(&mesh), &camera, 2.0).unwrap();
        let posed_hand = crate::hand::pose_hand(rig, &hand).unwrap();
        let hand_buf = crate::render::rasterize(&posed_hand, &camera, 2.0).unwrap();

        let (w, h) = (camera.width as usize, camera.height as usize);
        let mut obj_mask = Grid2::filled(w, h, 1, 0u8);
        let mut hand_mask = Grid2::filled(w, h, 1, 0u8);
        let mut depth = Grid2::filled(w, h, 1, 0.0f32);
        for y in 0..h {
            for x in 0..w {
                let zo = obj_buf.depth.get(x, y, 0);
                let zh = hand_buf.depth.get(x, y, 0);
                if zo.is_finite() && zo <= zh {
                    obj_mask.set(x, y, 0, 1);
                }
                if zh.is_finite() {
                    hand_mask.set(x, y, 0, 1);
                }
                if zo.is_finite() {
                    let wobble = 0.004 * ((0.11 * x as f64).sin() + (0.13 * y as f64).cos());
                    depth.set(x, y, 0, (1.7 * (zo + wobble) + 0.2) as f32);
                }
            }
        }
        let obj_mask = erode(&obj_mask, erode_px);

        let mut flow = Grid2::filled(w, h, 2, 0.0f32);
        for y in 0..h {
            for x in 0..w {
                flow.set(x, y, 0, (1.2 * (0.05 * x as f64).sin() + 0.4) as f32);
                flow.set(x, y, 1, (0.8 * (0.07 * y as f64).cos() - 0.2) as f32);
            }
        }

        frames_cues.push(FrameCues { index: f, object_mask: obj_mask, hand_mask, depth, flow });
        frames_states.push(FrameState { index: f, hand, object });
    }
    let grasp = (0..frames)
        .map(|f| GraspRef {
            frame: f,
            artic: {
                let mut a = vec![0.1; rig.latent_dim()];
                a[0] = 0.7;
                a
            },
        })
        .collect();
    GraspScene {
        mesh,
        cues: CueSequence { camera, frames: frames_cues },
        truth: TrajectoryEstimate { scale, camera, frames: frames_states },
        grasp,
    }
}

/// The truth nudged by a fixed offset, for nonzero anchor terms.
pub fn nudged(truth: &TrajectoryEstimate) -> TrajectoryEstimate {
    let mut t = truth.clone();
    for f in &mut t.frames {
        f.object.trans += Vec3::new(0.004, -0.003, 0.008);
        f.hand.trans += Vec3::new(-0.003, 0.002, -0.005);
    }
    t
}
