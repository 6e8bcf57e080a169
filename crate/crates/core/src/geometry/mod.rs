//! Core geometric types: rigid poses, pinhole cameras, triangle meshes and
//! signed-distance grids, plus the analytic Jacobians used throughout the
//! optimization pipeline.
//!
//! Conventions, used everywhere in this crate:
//!
//! * right-handed camera frame, `+z` forward (in front of the camera),
//!   `+x` right, `+y` down, so image coordinates grow right/down;
//! * quaternions are `(w, x, y, z)` with `w >= 0` canonical sign applied
//!   only when poses are stored or serialized;
//! * lengths are meters, angles radians, and all math is `f64`.

mod mesh;
mod quat;
mod sdf;

pub use mesh::{load_obj, obj_to_string, parse_obj, save_obj, MeshEdge, TriMesh};
pub use quat::{
    cross_matrix, quat_angle_diff, random_unit_quat, rotate_jacobian, rotate_jacobian_unit,
    so3_right_jacobian, Quat,
};
pub use sdf::{
    build_sdf, point_triangle_distance, winding_number, SdfGrid, DEFAULT_SDF_PADDING,
    DEFAULT_SDF_RES,
};

use serde::{Deserialize, Serialize};

/// Serde adapter storing a [`Vec3`] as the 3-array `[x, y, z]`.
pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("point has non-positive camera depth z = {z}")]
    NonPositiveDepth { z: f64 },
    #[error("scale must be positive, got {scale}")]
    InvalidScale { scale: f64 },
    #[error("quaternion norm {norm} too small to normalize")]
    NotNormalized { norm: f64 },
    #[error("camera intrinsics invalid: {reason}")]
    InvalidCamera { reason: String },
    #[error("mesh invalid: {reason}")]
    InvalidMesh { reason: String },
    #[error("malformed OBJ data at line {line}: {reason}")]
    MalformedObj { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rigid transform: rotation followed by translation, `p -> R(q) p + t`.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Quat::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self * rhs`: applies `rhs` first.
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose::new(
            self.rotation.mul(&rhs.rotation),
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.conjugate();
        Pose::new(rinv, -rinv.rotate(&self.translation))
    }

    /// Pose with normalized, canonical-sign rotation; used at storage
    /// boundaries so serialized trajectories are unique.
    pub fn canonicalized(&self) -> Result<Pose, GeometryError> {
        Ok(Pose::new(self.rotation.canonicalized()?, self.translation))
    }
}

/// Similarity transform used for scaled objects: `p -> s R(q) p + t`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledPose {
    pub pose: Pose,
    pub scale: f64,
}

impl ScaledPose {
    pub fn new(pose: Pose, scale: f64) -> Result<Self, GeometryError> {
        if !(scale > 0.0) {
            return Err(GeometryError::InvalidScale { scale });
        }
        Ok(ScaledPose { pose, scale })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.pose.rotation.rotate(&(self.scale * p)) + self.pose.translation
    }

    /// Maps a world point back into the local (unscaled) frame.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.pose
            .rotation
            .conjugate()
            .rotate(&(p - self.pose.translation))
            / self.scale
    }
}

/// Pinhole camera intrinsics. Distortion-free; `width`/`height` bound the
/// image plane in pixels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera {
                reason: format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy),
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera {
                reason: "image dimensions must be nonzero".into(),
            });
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidCamera {
                reason: "principal point must be finite".into(),
            });
        }
        Ok(())
    }

    /// Projects a camera-frame point to pixel coordinates
    /// `(fx x / z + cx, fy y / z + cy)`. Points at or behind the camera
    /// plane are an error, not a NaN.
    pub fn project(&self, p: &Vec3) -> Result<Vec2, GeometryError> {
        if p.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth { z: p.z });
        }
        Ok(Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Jacobian of `project` with respect to the 3D point:
    /// `[[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]`.
    pub fn project_jacobian(&self, p: &Vec3) -> Result<nalgebra::Matrix2x3<f64>, GeometryError> {
        if p.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth { z: p.z });
        }
        let z2 = p.z * p.z;
        Ok(nalgebra::Matrix2x3::new(
            self.fx / p.z,
            0.0,
            -self.fx * p.x / z2,
            0.0,
            self.fy / p.z,
            -self.fy * p.y / z2,
        ))
    }

    /// Camera-frame ray direction through pixel `(u, v)`, with unit `z`.
    pub fn unproject_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}
