//! Unit quaternions in `(w, x, y, z)` order with the analytic Jacobians the
//! optimizer chains rotation gradients through.

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::{GeometryError, Mat3, Vec3};

/// Quaternion stored as `(w, x, y, z)`: scalar part first.
///
/// Most operations assume (and document) unit norm; storage does not enforce
/// it because intermediate optimizer states are deliberately unnormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

// Serialized as the 4-array [w, x, y, z].
impl serde::Serialize for Quat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.w, self.x, self.y, self.z].serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Quat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Ok(Quat::new(a[0], a[1], a[2], a[3]))
    }
}

impl Quat {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn identity() -> Self {
        Quat::new(1.0, 0.0, 0.0, 0.0)
    }

    /// Vector (imaginary) part.
    pub fn vector(&self) -> Vec3 {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Scales to unit norm. Errors on (near-)zero input rather than
    /// producing NaNs.
    pub fn normalized(&self) -> Result<Quat, GeometryError> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(GeometryError::NotNormalized { norm: n });
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation angle (radians, in `[0, π]`) taking this rotation to
    /// `other`; both inputs may be unnormalized.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let dot = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z)
            / (self.norm() * other.norm());
        2.0 * dot.abs().clamp(0.0, 1.0).acos()
    }

    /// Unit quaternion with the canonical sign used for storage: `w >= 0`,
    /// ties (`w == 0`) broken by the first nonzero of `x, y, z` being
    /// positive. `q` and `-q` encode the same rotation; canonicalizing only
    /// at serialization boundaries keeps optimization trajectories smooth.
    pub fn canonicalized(&self) -> Result<Quat, GeometryError> {
        let q = self.normalized()?;
        let flip = if q.w != 0.0 {
            q.w < 0.0
        } else if q.x != 0.0 {
            q.x < 0.0
        } else if q.y != 0.0 {
            q.y < 0.0
        } else {
            q.z < 0.0
        };
        Ok(if flip { Quat::new(-q.w, -q.x, -q.y, -q.z) } else { q })
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Conjugate; equals the inverse for unit quaternions.
    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, rhs: &Quat) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    /// Rotates `v` by the normalized quaternion,
    /// `R(q̂) v = v + (2/|q|²) (w (u × v) + u × (u × v))` with `u` the vector
    /// part. Normalizing here (rather than assuming unit input) keeps the
    /// rotation invariant along rays `c·q`, matching [`rotate_jacobian`];
    /// optimizer states are deliberately allowed to drift off the sphere.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let n2 = self.dot(self);
        if n2 < 1e-24 {
            return *v;
        }
        let u = self.vector();
        let uv = u.cross(v);
        v + (2.0 / n2) * (self.w * uv + u.cross(&uv))
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> Mat3 {
        let q = self.normalized().unwrap_or_else(|_| Quat::identity());
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
        let n = axis.norm();
        if n < 1e-12 {
            return Quat::identity();
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Quat::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Exponential map of a rotation vector (axis * angle).
    pub fn from_rotation_vector(w: &Vec3) -> Quat {
        Quat::from_axis_angle(w, w.norm())
    }

    /// Geodesic interpolation from `self` (t = 0) to `other` (t = 1), taking
    /// the shorter arc.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut d = self.dot(other);
        let mut b = *other;
        if d < 0.0 {
            d = -d;
            b = Quat::new(-b.w, -b.x, -b.y, -b.z);
        }
        if d > 1.0 - 1e-10 {
            // Nearly parallel: nlerp is numerically safer and equal in the limit.
            let q = Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
            return q.normalized().unwrap_or(Quat::identity());
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let a = ((1.0 - t) * theta).sin() / s;
        let c = (t * theta).sin() / s;
        Quat::new(
            a * self.w + c * b.w,
            a * self.x + c * b.x,
            a * self.y + c * b.y,
            a * self.z + c * b.z,
        )
    }
}

/// Relative rotation angle in radians between two unit quaternions:
/// `2 * acos(min(1, |<q1, q2>|))`, in `[0, pi]`.
pub fn quat_angle_diff(a: &Quat, b: &Quat) -> f64 {
    2.0 * a.dot(b).abs().min(1.0).acos()
}

/// Uniformly random unit quaternion (Shoemake's subgroup algorithm).
pub fn random_unit_quat<R: rand::Rng>(rng: &mut R) -> Quat {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let t2 = 2.0 * std::f64::consts::PI * u2;
    let t3 = 2.0 * std::f64::consts::PI * u3;
    Quat::new(a * t2.sin(), a * t2.cos(), b * t3.sin(), b * t3.cos())
}

/// Jacobian of `R(q) v` with respect to the four raw components of an
/// already-unit `q`, as a 3x4 matrix with columns `[d/dw, d/dx, d/dy, d/dz]`.
///
/// `d(Rv)/dw = 2 (u × v)` and for the vector part
/// `J_u = -2 w [v]x - 2 [u × v]x - 2 [u]x [v]x` (with `[.]x` the cross
/// matrix), which follows from differentiating
/// `Rv = v + 2 w (u × v) + 2 u × (u × v)`.
pub fn rotate_jacobian_unit(q: &Quat, v: &Vec3) -> nalgebra::Matrix3x4<f64> {
    let u = q.vector();
    let uv = u.cross(v);
    let dw = 2.0 * uv;
    let ju = -2.0 * q.w * cross_matrix(v) - 2.0 * cross_matrix(&uv)
        - 2.0 * cross_matrix(&u) * cross_matrix(v);
    let mut j = nalgebra::Matrix3x4::zeros();
    j.set_column(0, &dw);
    j.set_column(1, &ju.column(0).into_owned());
    j.set_column(2, &ju.column(1).into_owned());
    j.set_column(3, &ju.column(2).into_owned());
    j
}

/// Jacobian of `R(q/|q|) v` with respect to the raw (not necessarily unit)
/// components of `q`: the unit-quaternion Jacobian composed with the
/// normalization Jacobian `(I - q̂ q̂ᵀ) / |q|`.
pub fn rotate_jacobian(q: &Quat, v: &Vec3) -> Result<nalgebra::Matrix3x4<f64>, GeometryError> {
    let n = q.norm();
    if n < 1e-12 {
        return Err(GeometryError::NotNormalized { norm: n });
    }
    let qh = q.normalized()?;
    let ju = rotate_jacobian_unit(&qh, v);
    let qv = nalgebra::Vector4::new(qh.w, qh.x, qh.y, qh.z);
    let proj = (Matrix4::identity() - qv * qv.transpose()) / n;
    Ok(ju * proj)
}

/// Skew-symmetric cross-product matrix `[v]x` with `[v]x a = v × a`.
pub fn cross_matrix(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): maps a perturbation of the rotation vector to a
/// body-frame angular velocity, `d/dt exp(w(t)) = exp(w) [Jr(w) ẇ]x`.
pub fn so3_right_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let wx = cross_matrix(w);
    if theta2 < 1e-12 {
        // Second-order Taylor expansion; coefficients 1/2 and 1/6.
        return Matrix3::identity() - 0.5 * wx + (wx * wx) / 6.0;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() - a * wx + b * (wx * wx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_quat(rng: &mut ChaCha8Rng) -> Quat {
        random_unit_quat(rng)
    }

    fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        use rand::Rng;
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn rotate_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = rand_quat(&mut rng);
            let v = rand_vec(&mut rng);
            let rv = q.rotate(&v);
            let mv = q.to_matrix() * v;
            assert_relative_eq!(rv, mv, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let q = rand_quat(&mut rng);
            let v = rand_vec(&mut rng);
            assert_relative_eq!(q.rotate(&v).norm(), v.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn composition_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = rand_quat(&mut rng);
            let b = rand_quat(&mut rng);
            let v = rand_vec(&mut rng);
            assert_relative_eq!(
                a.mul(&b).rotate(&v),
                a.to_matrix() * (b.to_matrix() * v),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn axis_angle_round_trip() {
        // 90 degrees about +z maps +x to +y.
        let q = Quat::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let v = q.rotate(&Vector3::x());
        assert_relative_eq!(v, Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn angle_diff_matches_matrix_trace() {
        // Oracle: angle = acos((trace(Ra' * Rb) - 1) / 2).
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a = rand_quat(&mut rng);
            let b = rand_quat(&mut rng);
            let rel = a.to_matrix().transpose() * b.to_matrix();
            let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            assert_relative_eq!(quat_angle_diff(&a, &b), c.acos(), epsilon = 1e-6);
        }
    }

    #[test]
    fn angle_diff_sign_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = rand_quat(&mut rng);
            let b = rand_quat(&mut rng);
            let nb = Quat::new(-b.w, -b.x, -b.y, -b.z);
            assert_relative_eq!(
                quat_angle_diff(&a, &b),
                quat_angle_diff(&a, &nb),
                epsilon = 1e-12
            );
            assert_relative_eq!(quat_angle_diff(&a, &a), 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn canonical_sign_nonnegative_w() {
        let q = Quat::new(-0.5, 0.5, -0.5, 0.5).canonicalized().unwrap();
        assert!(q.w >= 0.0);
        assert_relative_eq!(q.w, 0.5, epsilon = 1e-12);
        assert_relative_eq!(q.x, -0.5, epsilon = 1e-12);
        // w == 0: first nonzero vector component decides.
        let q = Quat::new(0.0, -1.0, 0.0, 0.0).canonicalized().unwrap();
        assert!(q.x > 0.0);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(Quat::new(0.0, 0.0, 0.0, 0.0).normalized().is_err());
    }

    #[test]
    fn rotate_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for _ in 0..20 {
            // Deliberately non-unit: the Jacobian includes normalization.
            let q0 = rand_quat(&mut rng);
            let q = Quat::new(q0.w * 1.3, q0.x * 1.3, q0.y * 1.3, q0.z * 1.3);
            let v = rand_vec(&mut rng);
            let j = rotate_jacobian(&q, &v).unwrap();
            let f = |q: &Quat| q.normalized().unwrap().rotate(&v);
            let mut comps = [q.w, q.x, q.y, q.z];
            for c in 0..4 {
                let orig = comps[c];
                comps[c] = orig + h;
                let qp = Quat::new(comps[0], comps[1], comps[2], comps[3]);
                comps[c] = orig - h;
                let qm = Quat::new(comps[0], comps[1], comps[2], comps[3]);
                comps[c] = orig;
                let fd = (f(&qp) - f(&qm)) / (2.0 * h);
                assert_relative_eq!(j.column(c).into_owned(), fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn rotate_is_scale_invariant_in_the_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let q = rand_quat(&mut rng);
            let scaled = Quat::new(q.w * 2.7, q.x * 2.7, q.y * 2.7, q.z * 2.7);
            let v = rand_vec(&mut rng);
            assert_relative_eq!(q.rotate(&v), scaled.rotate(&v), epsilon = 1e-12);
            assert_relative_eq!(scaled.rotate(&v), scaled.to_matrix() * v, epsilon = 1e-12);
            assert_relative_eq!(q.rotate(&v).norm(), v.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = Quat::identity();
        let b = Quat::from_axis_angle(&Vector3::z(), 1.0);
        assert_relative_eq!(quat_angle_diff(&a.slerp(&b, 0.0), &a), 0.0, epsilon = 1e-7);
        assert_relative_eq!(quat_angle_diff(&a.slerp(&b, 1.0), &b), 0.0, epsilon = 1e-7);
        let mid = a.slerp(&b, 0.5);
        assert_relative_eq!(quat_angle_diff(&a, &mid), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-6;
        for _ in 0..20 {
            let w = rand_vec(&mut rng);
            let jr = so3_right_jacobian(&w);
            // d/dt R(w + t e) at t=0 should equal R(w) [Jr e]x.
            for c in 0..3 {
                let mut e = Vector3::zeros();
                e[c] = 1.0;
                let rp = Quat::from_rotation_vector(&(w + h * e)).to_matrix();
                let rm = Quat::from_rotation_vector(&(w - h * e)).to_matrix();
                let fd = (rp - rm) / (2.0 * h);
                let analytic = Quat::from_rotation_vector(&w).to_matrix()
                    * cross_matrix(&(jr * e).into());
                assert_relative_eq!(fd, analytic, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn shoemake_sampling_is_unit_and_covers_hemispheres() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut pos = 0;
        for _ in 0..200 {
            let q = random_unit_quat(&mut rng);
            assert!(q.is_unit(1e-9));
            if q.w > 0.0 {
                pos += 1;
            }
        }
        assert!(pos > 50 && pos < 150);
    }
}
