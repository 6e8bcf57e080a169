//! Parametric articulated hand: a low-poly template mesh skinned to a
//! 16-joint skeleton, articulated through a low-dimensional orthonormal
//! latent basis, with analytic Jacobians for every state parameter.

mod gen;

pub use gen::{generate_default_rig, DEFAULT_LATENT_DIM, DEFAULT_RIG_SEED};

use nalgebra::{Matrix3, Matrix3x4};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    cross_matrix, obj_to_string, parse_obj, rotate_jacobian, so3_right_jacobian, vec3_serde, Mat3,
    Quat, TriMesh, Vec3,
};

/// Wrist + 3 joints per finger × 5 fingers.
pub const JOINT_COUNT: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum HandError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("articulation has {got} dims, rig expects {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad hand JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One skeleton joint. Joints are stored parent-before-child.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    #[serde(with = "vec3_serde")]
    pub center: Vec3,
}

/// A single skinning influence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VertexWeight {
    pub joint: usize,
    pub weight: f64,
}

/// The articulated hand model: template geometry, skeleton, skinning
/// weights, latent articulation basis and fingertip landmarks.
#[derive(Debug, Clone)]
pub struct HandRig {
    pub mesh: TriMesh,
    pub joints: Vec<Joint>,
    pub weights: Vec<Vec<VertexWeight>>,
    /// `latent_dim` mutually orthonormal vectors in joint axis-angle space
    /// (3 components per joint); the wrist block is zero.
    pub basis: Vec<Vec<f64>>,
    pub fingertips: [usize; 5],
}

/// Pose parameters: latent articulation, global rotation and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub rot: Quat,
    #[serde(with = "vec3_serde")]
    pub trans: Vec3,
    pub artic: Vec<f64>,
}

impl HandState {
    pub fn rest(latent_dim: usize) -> Self {
        HandState { artic: vec![0.0; latent_dim], rot: Quat::identity(), trans: Vec3::zeros() }
    }
}

impl HandRig {
    pub fn latent_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn validate(&self) -> Result<(), HandError> {
        if self.joints.len() != JOINT_COUNT {
            return Err(HandError::InvalidRig(format!(
                "expected {JOINT_COUNT} joints, found {}",
                self.joints.len()
            )));
        }
        for (j, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if j != 0 => {
                    return Err(HandError::InvalidRig(format!("joint {j} has no parent")))
                }
                Some(p) if p >= j => {
                    return Err(HandError::InvalidRig(format!(
                        "joint {j} parent {p} is not earlier in the list"
                    )))
                }
                _ => {}
            }
        }
        if self.weights.len() != self.mesh.vertices.len() {
            return Err(HandError::InvalidRig(format!(
                "{} weight rows for {} vertices",
                self.weights.len(),
                self.mesh.vertices.len()
            )));
        }
        for (vi, ws) in self.weights.iter().enumerate() {
            if ws.is_empty() || ws.len() > 4 {
                return Err(HandError::InvalidRig(format!(
                    "vertex {vi} has {} influences (need 1..=4)",
                    ws.len()
                )));
            }
            let sum: f64 = ws.iter().map(|w| w.weight).sum();
            if (sum - 1.0).abs() > 1e-9 || ws.iter().any(|w| w.weight < 0.0) {
                return Err(HandError::InvalidRig(format!(
                    "vertex {vi} weights must be non-negative and sum to 1 (sum {sum})"
                )));
            }
            if ws.iter().any(|w| w.joint >= JOINT_COUNT) {
                return Err(HandError::InvalidRig(format!("vertex {vi} references a bad joint")));
            }
        }
        let dim = JOINT_COUNT * 3;
        for (i, a) in self.basis.iter().enumerate() {
            if a.len() != dim {
                return Err(HandError::InvalidRig(format!("basis vector {i} has length {}", a.len())));
            }
            for (j, b) in self.basis.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(HandError::InvalidRig(format!(
                        "basis vectors {i},{j} have inner product {d}"
                    )));
                }
            }
        }
        if self.fingertips.iter().any(|&t| t >= self.mesh.vertices.len()) {
            return Err(HandError::InvalidRig("fingertip index out of range".into()));
        }
        Ok(())
    }

    /// Per-joint axis-angle rotations `basis · A`.
    fn joint_rotvecs(&self, artic: &[f64]) -> Result<Vec<Vec3>, HandError> {
        if artic.len() != self.latent_dim() {
            return Err(HandError::LengthMismatch { got: artic.len(), want: self.latent_dim() });
        }
        let mut out = vec![Vec3::zeros(); JOINT_COUNT];
        for (a, b) in artic.iter().zip(&self.basis) {
            for j in 0..JOINT_COUNT {
                out[j] += *a * Vec3::new(b[3 * j], b[3 * j + 1], b[3 * j + 2]);
            }
        }
        Ok(out)
    }
}

/// Posed hand vertices plus everything needed to pull image-space gradients
/// back into the state parameters.
#[derive(Debug, Clone)]
pub struct PosedHand {
    /// Final vertex positions (global pose applied).
    pub vertices: Vec<Vec3>,
    /// Vertex positions before the global rotation/translation.
    pub local_vertices: Vec<Vec3>,
    /// `d vertex / d artic[d]`, indexed `[latent][vertex]`.
    pub d_artic: Vec<Vec<Vec3>>,
    /// `d vertex / d (raw quaternion)`, normalization included.
    pub d_rot: Vec<Matrix3x4<f64>>,
}

impl PosedHand {
    /// Chains per-vertex gradients into state-parameter gradients,
    /// returning `(d artic, d rot(wxyz), d trans)`.
    pub fn chain(&self, grad_verts: &[Vec3]) -> (Vec<f64>, [f64; 4], Vec3) {
        assert_eq!(grad_verts.len(), self.vertices.len());
        let mut ga = vec![0.0; self.d_artic.len()];
        for (d, col) in self.d_artic.iter().enumerate() {
            ga[d] = col.iter().zip(grad_verts).map(|(dv, g)| dv.dot(g)).sum();
        }
        let mut gq = [0.0; 4];
        let mut gt = Vec3::zeros();
        for (jac, g) in self.d_rot.iter().zip(grad_verts) {
            let v = jac.transpose() * g;
            for k in 0..4 {
                gq[k] += v[k];
            }
            gt += g;
        }
        (ga, gq, gt)
    }
}

/// Forward kinematics + linear blend skinning, producing the posed mesh.
pub fn pose_hand(rig: &HandRig, state: &HandState) -> Result<TriMesh, HandError> {
    let posed = pose_hand_with_jacobian(rig, state)?;
    Ok(TriMesh { vertices: posed.vertices, faces: rig.mesh.faces.clone() })
}

/// As [`pose_hand`], also returning analytic Jacobians of every vertex with
/// respect to the articulation vector and the raw global rotation.
pub fn pose_hand_with_jacobian(rig: &HandRig, state: &HandState) -> Result<PosedHand, HandError> {
    let d_count = rig.latent_dim();
    let rotvecs = rig.joint_rotvecs(&state.artic)?;

    // Per-joint local rotations and their derivatives along each latent
    // direction: d/dt exp(ω + t b) = exp(ω) [Jr(ω) b]ₓ.
    let mut local_rot = Vec::with_capacity(JOINT_COUNT);
    let mut d_local: Vec<Vec<Mat3>> = vec![Vec::with_capacity(JOINT_COUNT); d_count];
    for j in 0..JOINT_COUNT {
        let r = Quat::from_rotation_vector(&rotvecs[j]).to_matrix();
        let jr = so3_right_jacobian(&rotvecs[j]);
        for (d, db) in d_local.iter_mut().enumerate() {
            let b = &rig.basis[d];
            let bj = Vec3::new(b[3 * j], b[3 * j + 1], b[3 * j + 2]);
            db.push(r * cross_matrix(&(jr * bj)));
        }
        local_rot.push(r);
    }

    // World (hand-local) joint frames and their latent derivatives.
    let mut world_rot = vec![Matrix3::identity(); JOINT_COUNT];
    let mut world_pos = vec![Vec3::zeros(); JOINT_COUNT];
    let mut d_world_rot: Vec<Vec<Mat3>> = vec![vec![Matrix3::zeros(); JOINT_COUNT]; d_count];
    let mut d_world_pos: Vec<Vec<Vec3>> = vec![vec![Vec3::zeros(); JOINT_COUNT]; d_count];
    for j in 0..JOINT_COUNT {
        match rig.joints[j].parent {
            None => {
                world_rot[j] = local_rot[j];
                world_pos[j] = rig.joints[j].center;
                for d in 0..d_count {
                    d_world_rot[d][j] = d_local[d][j];
                }
            }
            Some(p) => {
                world_rot[j] = world_rot[p] * local_rot[j];
                let offset = rig.joints[j].center - rig.joints[p].center;
                world_pos[j] = world_pos[p] + world_rot[p] * offset;
                for d in 0..d_count {
                    d_world_rot[d][j] = d_world_rot[d][p] * local_rot[j] + world_rot[p] * d_local[d][j];
                    d_world_pos[d][j] = d_world_pos[d][p] + d_world_rot[d][p] * offset;
                }
            }
        }
    }

    // Linear blend skinning with forward-mode latent derivatives.
    let n = rig.mesh.vertices.len();
    let mut local_vertices = Vec::with_capacity(n);
    let mut d_local_verts: Vec<Vec<Vec3>> = vec![Vec::with_capacity(n); d_count];
    for (vi, v0) in rig.mesh.vertices.iter().enumerate() {
        let mut v = Vec3::zeros();
        let mut dv = vec![Vec3::zeros(); d_count];
        for w in &rig.weights[vi] {
            let j = w.joint;
            let rel = v0 - rig.joints[j].center;
            v += w.weight * (world_rot[j] * rel + world_pos[j]);
            for d in 0..d_count {
                dv[d] += w.weight * (d_world_rot[d][j] * rel + d_world_pos[d][j]);
            }
        }
        local_vertices.push(v);
        for (d, dvd) in dv.into_iter().enumerate() {
            d_local_verts[d].push(dvd);
        }
    }

    // Global similarity-free rigid transform.
    let q = state.rot;
    let qn = q.normalized().map_err(crate::geometry::GeometryError::from)?;
    let rg = qn.to_matrix();
    let mut vertices = Vec::with_capacity(n);
    let mut d_rot = Vec::with_capacity(n);
    for lv in &local_vertices {
        vertices.push(rg * lv + state.trans);
        d_rot.push(rotate_jacobian(&q, lv).expect("norm checked above"));
    }
    let d_artic = d_local_verts
        .into_iter()
        .map(|col| col.into_iter().map(|dv| rg * dv).collect())
        .collect();

    Ok(PosedHand { vertices, local_vertices, d_artic, d_rot })
}

/// The five fingertip landmark positions of the posed hand.
pub fn fingertips(rig: &HandRig, state: &HandState) -> Result<[Vec3; 5], HandError> {
    let posed = pose_hand_with_jacobian(rig, state)?;
    Ok(rig.fingertips.map(|i| posed.vertices[i]))
}

/// Squared Euclidean norm of the articulation latent.
pub fn pose_prior_norm(state: &HandState) -> f64 {
    state.artic.iter().map(|a| a * a).sum()
}

/// A reference articulation for one frame, used by the grasp-prior loss.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraspRef {
    pub frame: usize,
    #[serde(rename = "A")]
    pub artic: Vec<f64>,
}

pub fn load_grasp_reference(path: &std::path::Path) -> Result<Vec<GraspRef>, HandError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_grasp_reference(path: &std::path::Path, refs: &[GraspRef]) -> Result<(), HandError> {
    std::fs::write(path, serde_json::to_string(refs)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    joints: Vec<Joint>,
    weights: Vec<Vec<VertexWeight>>,
    basis: Vec<Vec<f64>>,
    fingertips: [usize; 5],
}

/// Serializes a rig as a JSON skeleton file plus an OBJ template.
pub fn save_rig(json_path: &std::path::Path, obj_path: &std::path::Path, rig: &HandRig) -> Result<(), HandError> {
    let file = RigFile {
        joints: rig.joints.clone(),
        weights: rig.weights.clone(),
        basis: rig.basis.clone(),
        fingertips: rig.fingertips,
    };
    std::fs::write(json_path, serde_json::to_string(&file)?)?;
    std::fs::write(obj_path, obj_to_string(&rig.mesh))?;
    Ok(())
}

pub fn load_rig(json_path: &std::path::Path, obj_path: &std::path::Path) -> Result<HandRig, HandError> {
    rig_from_strs(
        &std::fs::read_to_string(json_path)?,
        &std::fs::read_to_string(obj_path)?,
    )
}

fn rig_from_strs(json: &str, obj: &str) -> Result<HandRig, HandError> {
    let file: RigFile = serde_json::from_str(json)?;
    let mesh = parse_obj(obj)?;
    let rig = HandRig {
        mesh,
        joints: file.joints,
        weights: file.weights,
        basis: file.basis,
        fingertips: file.fingertips,
    };
    rig.validate()?;
    Ok(rig)
}

/// The rig committed with the crate (embedded at compile time).
pub fn bundled_rig() -> HandRig {
    rig_from_strs(
        include_str!("../../data/hand_rig.json"),
        include_str!("../../data/hand_template.obj"),
    )
    .expect("bundled rig is valid")
}
