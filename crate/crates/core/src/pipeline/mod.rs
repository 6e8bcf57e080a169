//! The reconstruction engine: per-frame object pose initialization and the
//! two-stage temporal joint optimization over hand and object states, built
//! on the loss library in [`losses`] and the guarded Adam optimizer in
//! [`adam`].

pub mod adam;
pub mod gradcheck;
mod init;
mod losses;
mod objective;
mod optimize;
#[cfg(test)]
pub(crate) mod testutil;

pub use adam::{guarded_descent, Adam, AdamConfig, DescentReport, GuardMode};
pub use init::{init_object_poses, score_pose, InitOptions};
pub use losses::{
    loss_fingertip_proximity, loss_grasp_reference, loss_occlusion, loss_optical_flow,
    loss_penetration, loss_proj, loss_projection_anchor, loss_temporal, loss_temporal_sequence,
    project_anchors, AnchorLoss, FlowLoss, ObjectGrads, OcclusionLoss, PosedObject,
    ProximityLoss, DEFAULT_OCC_MARGIN,
};
pub use objective::{merged_scene_depth, Layout, Objective, Stage, TermValues};
pub use optimize::{run_temporal_optimization, OptimizeReport};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cues::CueError;
use crate::geometry::{vec3_serde, Camera, GeometryError, Pose, Quat, ScaledPose, TriMesh, Vec3};
use crate::hand::{HandError, HandRig, HandState};
use crate::render::RenderError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no initialization possible: first frame object mask is empty and no external pose was given")]
    NoInitialization,
    #[error("non-finite gradient in loss term `{term}`")]
    NonFiniteGradient { term: String },
    #[error("length mismatch in {context}: got {got}, want {want}")]
    LengthMismatch { context: String, got: usize, want: usize },
    #[error("invalid {context}: {reason}")]
    Invalid { context: String, reason: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cues(#[from] CueError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn invalid(context: &str, reason: impl Into<String>) -> PipelineError {
    PipelineError::Invalid { context: context.into(), reason: reason.into() }
}

/// Per-frame object pose. The object scale is shared across frames and
/// lives on [`TrajectoryEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub rot: Quat,
    #[serde(with = "vec3_serde")]
    pub trans: Vec3,
}

impl ObjectState {
    pub fn identity() -> Self {
        ObjectState { rot: Quat::identity(), trans: Vec3::zeros() }
    }

    pub fn to_scaled_pose(&self, scale: f64) -> Result<ScaledPose, GeometryError> {
        ScaledPose::new(Pose::new(self.rot, self.trans), scale)
    }
}

/// One frame of the recovered trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub index: usize,
    pub hand: HandState,
    pub object: ObjectState,
}

/// The pipeline's central output: per-frame hand and object states plus the
/// shared object scale and the camera they were recovered under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub scale: f64,
    pub camera: Camera,
    pub frames: Vec<FrameState>,
}

impl TrajectoryEstimate {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.frames.is_empty() {
            return Err(invalid("trajectory", "needs at least one frame"));
        }
        if !(self.scale > 0.0) {
            return Err(invalid("trajectory", format!("scale must be positive, got {}", self.scale)));
        }
        self.camera.validate().map_err(PipelineError::Geometry)?;
        let artic_dim = self.frames[0].hand.artic.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(invalid("trajectory", format!("frame {i} has index {}", f.index)));
            }
            if !f.hand.rot.is_unit(1e-6) || !f.object.rot.is_unit(1e-6) {
                return Err(invalid("trajectory", format!("frame {i} rotation not unit")));
            }
            if f.hand.artic.len() != artic_dim {
                return Err(PipelineError::LengthMismatch {
                    context: format!("frame {i} articulation"),
                    got: f.hand.artic.len(),
                    want: artic_dim,
                });
            }
        }
        Ok(())
    }

    /// Copy with all rotations normalized to canonical sign, so two equal
    /// trajectories always serialize to identical bytes.
    pub fn canonicalized(&self) -> Result<TrajectoryEstimate, GeometryError> {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.hand.rot = f.hand.rot.canonicalized()?;
            f.object.rot = f.object.rot.canonicalized()?;
        }
        Ok(out)
    }
}

pub fn save_trajectory(path: &Path, traj: &TrajectoryEstimate) -> Result<(), PipelineError> {
    let canon = traj.canonicalized()?;
    let text = serde_json::to_string(&canon)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryEstimate, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let traj: TrajectoryEstimate = serde_json::from_str(&text)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    traj.validate()?;
    Ok(traj)
}

/// Per-frame hand states, stored alongside cue directories as
/// `hand_init.json` (a plain JSON list, frame order).
pub fn load_hand_init(path: &Path) -> Result<Vec<HandState>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })
}

pub fn save_hand_init(path: &Path, states: &[HandState]) -> Result<(), PipelineError> {
    let canon: Result<Vec<HandState>, GeometryError> = states
        .iter()
        .map(|s| Ok(HandState { rot: s.rot.canonicalized()?, ..s.clone() }))
        .collect();
    let text = serde_json::to_string(&canon?)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Weights of every optimization loss term. `lambda_*` drive the per-frame
/// initialization objective; `w_*` drive the temporal stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_proj: f64,
    pub lambda_depth: f64,
    pub w_mask_obj: f64,
    pub w_mask_hand: f64,
    pub w_pen: f64,
    pub w_inter: f64,
    pub w_depth: f64,
    pub w_temporal: f64,
    pub w_flow: f64,
    pub w_occ_h: f64,
    pub w_occ_o: f64,
    pub w_mpn: f64,
    pub w_gn: f64,
    pub w_iop: f64,
    pub w_ihp: f64,
    /// Minimum fingertip-to-object distance (meters) below which the grasp
    /// reference term becomes active.
    pub gn_distance_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_proj: 1.0,
            lambda_depth: 20.0,
            w_mask_obj: 1.0,
            w_mask_hand: 1.0,
            w_pen: 2e3,
            w_inter: 20.0,
            w_depth: 20.0,
            w_temporal: 2.0,
            w_flow: 5e-3,
            w_occ_h: 1e3,
            w_occ_o: 1e3,
            w_mpn: 0.1,
            w_gn: 1.0,
            w_iop: 1e-3,
            w_ihp: 1e-3,
            gn_distance_threshold: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fields = [
            ("lambda_proj", self.lambda_proj),
            ("lambda_depth", self.lambda_depth),
            ("w_mask_obj", self.w_mask_obj),
            ("w_mask_hand", self.w_mask_hand),
            ("w_pen", self.w_pen),
            ("w_inter", self.w_inter),
            ("w_depth", self.w_depth),
            ("w_temporal", self.w_temporal),
            ("w_flow", self.w_flow),
            ("w_occ_h", self.w_occ_h),
            ("w_occ_o", self.w_occ_o),
            ("w_mpn", self.w_mpn),
            ("w_gn", self.w_gn),
            ("w_iop", self.w_iop),
            ("w_ihp", self.w_ihp),
            ("gn_distance_threshold", self.gn_distance_threshold),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(invalid("loss weights", format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// All stage weights zero (gate threshold untouched); useful as a base
    /// for enabling terms one at a time.
    pub fn zero() -> Self {
        LossWeights {
            lambda_proj: 0.0,
            lambda_depth: 0.0,
            w_mask_obj: 0.0,
            w_mask_hand: 0.0,
            w_pen: 0.0,
            w_inter: 0.0,
            w_depth: 0.0,
            w_temporal: 0.0,
            w_flow: 0.0,
            w_occ_h: 0.0,
            w_occ_o: 0.0,
            w_mpn: 0.0,
            w_gn: 0.0,
            w_iop: 0.0,
            w_ihp: 0.0,
            gn_distance_threshold: 0.05,
        }
    }
}

/// Frame-0 pose sampling parameters for [`init_object_poses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Random pose proposals scored at frame 0.
    pub n_samples: usize,
    /// Best-scoring proposals refined before picking the winner.
    pub top_k: usize,
    /// Depth sweep for mask-centroid back-projection (meters, log-spaced).
    pub depth_min: f64,
    pub depth_max: f64,
    pub depth_steps: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { n_samples: 128, top_k: 8, depth_min: 0.25, depth_max: 1.6, depth_steps: 6, seed: 11 }
    }
}

/// Renderer and SDF knobs used by the optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub softness: f64,
    pub sdf_res: usize,
    /// Padding around the object AABB, as a fraction of its diagonal.
    pub sdf_padding_frac: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { softness: crate::render::DEFAULT_SOFTNESS, sdf_res: 32, sdf_padding_frac: 0.25 }
    }
}

/// Everything the CLI reads from `--config`: loss weights, optimizer
/// schedule, initialization sampling and render knobs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub init: InitConfig,
    pub render: RenderConfig,
}

impl InitConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_samples == 0 || self.top_k == 0 {
            return Err(invalid("init config", "n_samples and top_k must be positive"));
        }
        if !(self.depth_min > 0.0 && self.depth_max >= self.depth_min) {
            return Err(invalid("init config", "need 0 < depth_min <= depth_max"));
        }
        if self.depth_steps == 0 {
            return Err(invalid("init config", "depth_steps must be positive"));
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.weights.validate()?;
        self.adam.validate()?;
        self.init.validate()?;
        if !(self.render.softness > 0.0) {
            return Err(invalid("render config", "softness must be positive"));
        }
        if self.render.sdf_res < 8 {
            return Err(invalid("render config", "sdf_res must be at least 8"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: PipelineConfig = serde_json::from_str(&text)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: &Path, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, text)?;
    Ok(())
}

/// The default configuration committed with the crate.
pub fn bundled_config() -> PipelineConfig {
    serde_json::from_str(include_str!("../../data/default_config.json"))
        .expect("bundled config is valid")
}

/// Shared handles to the scene models an optimization operates on.
#[derive(Clone, Copy)]
pub struct SceneModels<'a> {
    pub object: &'a TriMesh,
    pub rig: &'a HandRig,
}
