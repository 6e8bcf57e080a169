//! Recovery of temporally smooth 4D hand + object trajectories from
//! per-frame 2D cues (masks, depth, optical flow, detection boxes), plus a
//! kinematic imitation harness that scores how well a recovered object
//! trajectory can be replayed under a dense two-phase reward.
//!
//! The crate is organised as a pipeline:
//!
//! * [`geometry`] — meshes, rigid poses, quaternions, cameras, signed
//!   distance grids, and the analytic Jacobians everything else chains
//!   through.
//! * [`render`] — a differentiable silhouette/depth rasterizer.
//! * [`cues`] — on-disk cue formats (masks, dense tensors, detections) and
//!   detection-track bookkeeping.
//! * [`hand`] — a procedural low-poly hand rig with linear-blend skinning
//!   and a low-dimensional articulation space.
//! * [`pipeline`] — the per-frame initialization and temporally coupled
//!   gradient optimization that produces trajectories.
//! * [`imitation`] — goal-conditioned rollouts of a recovered trajectory in
//!   a simplified kinematic environment.
//! * [`synth`] — procedural ground-truth scenes used for testing and
//!   evaluation, plus trajectory metrics.
//!
//! All floating point work is `f64` and every seeded entry point is
//! deterministic: identical inputs and seeds produce byte-identical outputs.

pub mod cues;
pub mod geometry;
pub mod grid;
pub mod hand;
pub mod imitation;
pub mod pipeline;
pub mod render;
pub mod synth;
