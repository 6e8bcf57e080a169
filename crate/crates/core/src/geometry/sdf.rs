//! Signed-distance grids sampled from triangle meshes.
//!
//! Sign is decided by the generalized winding number, which stays correct
//! for meshes assembled from several overlapping closed components (a body
//! plus a handle, say) where ray-parity tests break. Open meshes fall back
//! to unsigned distance and are flagged.

use super::{GeometryError, TriMesh, Vec3};

/// Regular grid of (signed) distances to a mesh surface.
///
/// Values live at grid points `origin + cell * (i, j, k)`. Queries inside
/// the grid interpolate trilinearly; queries outside return the value at
/// the clamped boundary point plus the distance to the grid box, which is
/// continuous and strictly grows away from the grid.
#[derive(Debug, Clone)]
pub struct SdfGrid {
    pub origin: Vec3,
    pub cell: f64,
    pub res: [usize; 3],
    pub values: Vec<f64>,
    /// True when the source mesh was not watertight, in which case values
    /// are unsigned distances.
    pub unsigned: bool,
}

/// Default grid resolution per axis.
pub const DEFAULT_SDF_RES: usize = 64;
/// Default padding around the mesh AABB, as a fraction of its diagonal.
pub const DEFAULT_SDF_PADDING: f64 = 0.1;

/// Samples a distance grid over the mesh AABB expanded by
/// `padding_frac * diagonal` on every side.
pub fn build_sdf(mesh: &TriMesh, res: usize, padding_frac: f64) -> Result<SdfGrid, GeometryError> {
    if mesh.faces.is_empty() || res < 2 {
        return Err(GeometryError::InvalidMesh {
            reason: "SDF needs a non-empty mesh and resolution >= 2".into(),
        });
    }
    let (lo, hi) = mesh.aabb();
    let pad = (hi - lo).norm() * padding_frac;
    let origin = lo - Vec3::repeat(pad);
    let extent = (hi - lo) + Vec3::repeat(2.0 * pad);
    // Uniform cell covering the largest extent keeps cells cubic.
    let cell = extent.max() / (res - 1) as f64;
    let signed = mesh.is_watertight();

    // Face bounding boxes let the distance scan skip far triangles.
    let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.face_vertices(f)).collect();
    let boxes: Vec<(Vec3, Vec3)> = tris
        .iter()
        .map(|t| {
            let lo = t[0].inf(&t[1]).inf(&t[2]);
            let hi = t[0].sup(&t[1]).sup(&t[2]);
            (lo, hi)
        })
        .collect();

    let mut values = vec![0.0f64; res * res * res];
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let p = origin + cell * Vec3::new(i as f64, j as f64, k as f64);
                let mut best = f64::INFINITY;
                for (t, bb) in tris.iter().zip(&boxes) {
                    if aabb_distance_lower_bound(&p, bb) >= best {
                        continue;
                    }
                    let d = point_triangle_distance(&p, &t[0], &t[1], &t[2]);
                    if d < best {
                        best = d;
                    }
                }
                let sign = if signed && winding_number(&p, &tris) > 0.5 { -1.0 } else { 1.0 };
                values[(k * res + j) * res + i] = sign * best;
            }
        }
    }
    Ok(SdfGrid { origin, cell, res: [res, res, res], values, unsigned: !signed })
}

impl SdfGrid {
    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.res[1] + j) * self.res[0] + i]
    }

    /// Interpolated distance at `p`; see the type docs for outside-grid
    /// behavior.
    pub fn query(&self, p: &Vec3) -> f64 {
        self.query_with_gradient(p).0
    }

    /// Distance and its spatial gradient. The gradient is the exact
    /// derivative of `query` wherever it is differentiable (everywhere but
    /// cell boundaries and the grid box surface).
    pub fn query_with_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let t = (p - self.origin) / self.cell;
        let limit = Vec3::new(
            (self.res[0] - 1) as f64,
            (self.res[1] - 1) as f64,
            (self.res[2] - 1) as f64,
        );
        let tc = Vec3::new(
            t.x.clamp(0.0, limit.x),
            t.y.clamp(0.0, limit.y),
            t.z.clamp(0.0, limit.z),
        );
        let outside = t - tc;
        let (v, mut grad) = self.trilinear(&tc);
        if outside == Vec3::zeros() {
            return (v, grad);
        }
        // Outside the box: clamped directions contribute no interpolation
        // gradient, and the box-distance term pushes straight outward.
        let dist = (outside * self.cell).norm();
        for a in 0..3 {
            if outside[a] != 0.0 {
                grad[a] = 0.0;
            }
        }
        (v + dist, grad + (outside * self.cell) / dist)
    }

    /// Trilinear value and gradient at grid-space coordinates (already
    /// clamped into the grid).
    fn trilinear(&self, t: &Vec3) -> (f64, Vec3) {
        let idx = |a: usize| -> (usize, f64) {
            let max_cell = self.res[a] - 2;
            let i = (t[a].floor() as usize).min(max_cell);
            (i, t[a] - i as f64)
        };
        let (i0, fx) = idx(0);
        let (j0, fy) = idx(1);
        let (k0, fz) = idx(2);
        let c = |di: usize, dj: usize, dk: usize| self.value_at(i0 + di, j0 + dj, k0 + dk);

        let c00 = c(0, 0, 0) * (1.0 - fx) + c(1, 0, 0) * fx;
        let c10 = c(0, 1, 0) * (1.0 - fx) + c(1, 1, 0) * fx;
        let c01 = c(0, 0, 1) * (1.0 - fx) + c(1, 0, 1) * fx;
        let c11 = c(0, 1, 1) * (1.0 - fx) + c(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        let v = c0 * (1.0 - fz) + c1 * fz;

        let dx = ((c(1, 0, 0) - c(0, 0, 0)) * (1.0 - fy) + (c(1, 1, 0) - c(0, 1, 0)) * fy)
            * (1.0 - fz)
            + ((c(1, 0, 1) - c(0, 0, 1)) * (1.0 - fy) + (c(1, 1, 1) - c(0, 1, 1)) * fy) * fz;
        let dy = (c10 - c00) * (1.0 - fz) + (c11 - c01) * fz;
        let dz = c1 - c0;
        (v, Vec3::new(dx, dy, dz) / self.cell)
    }
}

/// Lower bound on the distance from `p` to anything inside the box.
fn aabb_distance_lower_bound(p: &Vec3, bb: &(Vec3, Vec3)) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let v = if p[a] < bb.0[a] {
            bb.0[a] - p[a]
        } else if p[a] > bb.1[a] {
            p[a] - bb.1[a]
        } else {
            0.0
        };
        d2 += v * v;
    }
    d2.sqrt()
}

/// Euclidean distance from a point to a triangle (Ericson's region test).
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - v * ab).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - w * ac).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - w * (c - b)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (ap - v * ab - w * ac).norm()
}

/// Generalized winding number of `p` with respect to a triangle soup:
/// the sum of signed solid angles over 4π. Near 1 inside a closed surface,
/// near 0 outside, and additive over overlapping closed components.
pub fn winding_number(p: &Vec3, tris: &[[Vec3; 3]]) -> f64 {
    let mut total = 0.0;
    for t in tris {
        total += solid_angle(p, &t[0], &t[1], &t[2]);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Signed solid angle of triangle `abc` seen from `p`
/// (van Oosterom & Strackee).
fn solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let va = a - p;
    let vb = b - p;
    let vc = c - p;
    let la = va.norm();
    let lb = vb.norm();
    let lc = vc.norm();
    let num = va.dot(&vb.cross(&vc));
    let den = la * lb * lc + va.dot(&vb) * lc + vb.dot(&vc) * la + vc.dot(&va) * lb;
    2.0 * num.atan2(den)
}
