//! Rasterization internals: hard coverage/depth buffers, silhouette-edge
//! extraction, and exact signed distance to the projected silhouette.

use crate::geometry::{Camera, GeometryError, TriMesh, Vec2, Vec3};
use crate::grid::Grid2;

/// Points closer than this to the camera plane are rejected.
pub const NEAR_PLANE: f64 = 1e-3;

/// Everything one rasterization pass knows about a mesh seen by a camera.
/// Gradient routines index into it instead of re-deriving geometry.
#[derive(Debug, Clone)]
pub struct RasterCache {
    /// Projected vertex positions, pixels.
    pub proj: Vec<Vec2>,
    /// Camera-frame vertex positions.
    pub verts: Vec<Vec3>,
    /// Hard depth at pixel centers; `f64::INFINITY` = background.
    pub depth: Grid2<f64>,
    /// Magnitude of the rasterized face's depth gradient per pixel of
    /// screen motion; 0 on background. Visibility tests use it to absorb
    /// pixel-center quantization on steep surfaces.
    pub depth_slope: Grid2<f64>,
    /// Index into `mesh.faces` of the front-most face per pixel, or
    /// `usize::MAX` for background.
    pub face_id: Grid2<usize>,
    /// Signed distance (pixels) to the nearest projected silhouette edge,
    /// positive where the pixel center is covered.
    pub signed_dist: Grid2<f64>,
    /// Per pixel, index into `sil_edges` of the nearest silhouette edge.
    pub nearest_edge: Grid2<usize>,
    /// Clamped projection parameter onto the nearest edge, in [0, 1].
    pub nearest_t: Grid2<f64>,
    /// Silhouette edges as vertex-id pairs.
    pub sil_edges: Vec<(usize, usize)>,
    /// Copy of the mesh faces, for routing per-pixel gradients to vertices.
    pub faces: Vec<[usize; 3]>,
}

impl RasterCache {
    pub fn width(&self) -> usize {
        self.depth.width
    }
    pub fn height(&self) -> usize {
        self.depth.height
    }

    /// Soft coverage at a pixel for a given softness (pixels).
    #[inline]
    pub fn soft_coverage(&self, x: usize, y: usize, softness: f64) -> f64 {
        sigmoid(self.signed_dist.get(x, y, 0) / softness)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Builds the full cache: projection, z-buffered coverage, silhouette edge
/// set, and the exact per-pixel nearest silhouette edge.
pub fn build_cache(mesh: &TriMesh, camera: &Camera) -> Result<RasterCache, GeometryError> {
    camera.validate()?;
    let w = camera.width as usize;
    let h = camera.height as usize;

    let mut proj = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        if v.z <= NEAR_PLANE {
            return Err(GeometryError::NonPositiveDepth { z: v.z });
        }
        proj.push(camera.project(v).expect("z checked above"));
    }

    let mut depth = Grid2::filled(w, h, 1, f64::INFINITY);
    let mut face_id = Grid2::filled(w, h, 1, usize::MAX);

    // Hard rasterization: per-face bounding-box scan, exact plane-ray depth.
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (pa, pb, pc) = (proj[f[0]], proj[f[1]], proj[f[2]]);
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        let n = (b - a).cross(&(c - a));
        let min_x = pa.x.min(pb.x).min(pc.x).floor().max(0.0) as usize;
        let max_x = (pa.x.max(pb.x).max(pc.x).ceil() as usize).min(w.saturating_sub(1));
        let min_y = pa.y.min(pb.y).min(pc.y).floor().max(0.0) as usize;
        let max_y = (pa.y.max(pb.y).max(pc.y).ceil() as usize).min(h.saturating_sub(1));
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let area = edge_fn(&pa, &pb, &pc);
        if area == 0.0 {
            continue;
        }
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let w0 = edge_fn(&pa, &pb, &p);
                let w1 = edge_fn(&pb, &pc, &p);
                let w2 = edge_fn(&pc, &pa, &p);
                // Covered regardless of orientation (front or back face).
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let dir = camera.unproject_dir(p.x, p.y);
                let denom = n.dot(&dir);
                if denom.abs() < 1e-300 {
                    continue;
                }
                let z = n.dot(&a) / denom;
                if z > NEAR_PLANE && z < depth.get(x, y, 0) {
                    depth.set(x, y, 0, z);
                    face_id.set(x, y, 0, fi);
                }
            }
        }
    }

    // Depth slope of the winning face at each covered pixel:
    // t(u,v) = (n·a)/(n·dir), so ∂t/∂u = −t·n_x/(fx·(n·dir)).
    let mut depth_slope = Grid2::filled(w, h, 1, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let fi = face_id.get(x, y, 0);
            if fi == usize::MAX {
                continue;
            }
            let f = mesh.faces[fi];
            let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
            let n = (b - a).cross(&(c - a));
            let dir = camera.unproject_dir(x as f64 + 0.5, y as f64 + 0.5);
            let den = n.dot(&dir);
            let t = depth.get(x, y, 0);
            let du = -t * n.x / (camera.fx * den);
            let dv = -t * n.y / (camera.fy * den);
            depth_slope.set(x, y, 0, (du * du + dv * dv).sqrt());
        }
    }

    let sil_edges = silhouette_edges(mesh);
    let (signed_dist, nearest_edge, nearest_t) =
        signed_distance_field(&proj, &sil_edges, &depth, w, h);

    Ok(RasterCache {
        proj,
        verts: mesh.vertices.clone(),
        depth,
        depth_slope,
        face_id,
        signed_dist,
        nearest_edge,
        nearest_t,
        sil_edges,
        faces: mesh.faces.clone(),
    })
}

/// 2D cross product of `(b - a)` and `(p - a)`.
#[inline]
fn edge_fn(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Edges on the outline: boundary edges (one adjacent face) and edges whose
/// two faces point to opposite sides of the camera.
pub fn silhouette_edges(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let facing: Vec<f64> = (0..mesh.faces.len())
        .map(|fi| {
            let [a, b, c] = mesh.face_vertices(fi);
            let n = (b - a).cross(&(c - a));
            // Camera at the origin: view ray toward the face centroid.
            n.dot(&((a + b + c) / 3.0))
        })
        .collect();
    mesh.edges()
        .iter()
        .filter(|e| match e.face_b {
            None => true,
            Some(fb) => facing[e.face_a] * facing[fb] <= 0.0,
        })
        .map(|e| (e.v0, e.v1))
        .collect()
}

/// Exact distance from every pixel center to the nearest projected
/// silhouette edge, signed by hard coverage. Uses a tile grid with ring
/// expansion so the cost stays near-linear in pixels.
fn signed_distance_field(
    proj: &[Vec2],
    sil_edges: &[(usize, usize)],
    depth: &Grid2<f64>,
    w: usize,
    h: usize,
) -> (Grid2<f64>, Grid2<usize>, Grid2<f64>) {
    let mut dist = Grid2::filled(w, h, 1, f64::NEG_INFINITY);
    let mut nearest = Grid2::filled(w, h, 1, usize::MAX);
    let mut nearest_t = Grid2::filled(w, h, 1, 0.0f64);
    if sil_edges.is_empty() {
        return (dist, nearest, nearest_t);
    }

    const TILE: usize = 8;
    let tw = w.div_ceil(TILE).max(1);
    let th = h.div_ceil(TILE).max(1);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tw * th];
    for (ei, &(v0, v1)) in sil_edges.iter().enumerate() {
        let (a, b) = (proj[v0], proj[v1]);
        let x0 = ((a.x.min(b.x)) / TILE as f64).floor().max(0.0) as usize;
        let x1 = ((a.x.max(b.x)) / TILE as f64).floor().max(0.0) as usize;
        let y0 = ((a.y.min(b.y)) / TILE as f64).floor().max(0.0) as usize;
        let y1 = ((a.y.max(b.y)) / TILE as f64).floor().max(0.0) as usize;
        for ty in y0.min(th - 1)..=y1.min(th - 1) {
            for tx in x0.min(tw - 1)..=x1.min(tw - 1) {
                tiles[ty * tw + tx].push(ei as u32);
            }
        }
    }

    let max_ring = tw.max(th);
    for y in 0..h {
        for x in 0..w {
            let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let (ptx, pty) = (x / TILE, y / TILE);
            let mut best = f64::INFINITY;
            let mut best_edge = usize::MAX;
            let mut best_t = 0.0;
            let scan_tile = |tx: usize, ty: usize, best: &mut f64, be: &mut usize, bt: &mut f64| {
                for &ei in &tiles[ty * tw + tx] {
                    let (v0, v1) = sil_edges[ei as usize];
                    let (d, t) = point_segment(&p, &proj[v0], &proj[v1]);
                    if d < *best {
                        *best = d;
                        *be = ei as usize;
                        *bt = t;
                    }
                }
            };
            for r in 0..=max_ring {
                // Once the ring's closest possible point is beyond the best
                // distance, no farther ring can improve on it.
                if best_edge != usize::MAX && (r as f64 - 1.0) * TILE as f64 > best {
                    break;
                }
                let x_lo = ptx.saturating_sub(r);
                let x_hi = (ptx + r).min(tw - 1);
                let y_lo = pty.saturating_sub(r);
                let y_hi = (pty + r).min(th - 1);
                if r == 0 {
                    scan_tile(ptx, pty, &mut best, &mut best_edge, &mut best_t);
                    continue;
                }
                for tx in x_lo..=x_hi {
                    if pty >= r {
                        scan_tile(tx, pty - r, &mut best, &mut best_edge, &mut best_t);
                    }
                    if pty + r <= th - 1 {
                        scan_tile(tx, pty + r, &mut best, &mut best_edge, &mut best_t);
                    }
                }
                for ty in (y_lo.max(pty.saturating_sub(r - 1)))..=(y_hi.min(pty + r - 1)) {
                    if ptx >= r {
                        scan_tile(ptx - r, ty, &mut best, &mut best_edge, &mut best_t);
                    }
                    if ptx + r <= tw - 1 {
                        scan_tile(ptx + r, ty, &mut best, &mut best_edge, &mut best_t);
                    }
                }
            }
            let covered = depth.get(x, y, 0).is_finite();
            dist.set(x, y, 0, if covered { best } else { -best });
            nearest.set(x, y, 0, best_edge);
            nearest_t.set(x, y, 0, best_t);
        }
    }
    (dist, nearest, nearest_t)
}

/// Distance from `p` to segment `ab` and the clamped projection parameter.
#[inline]
pub fn point_segment(p: &Vec2, a: &Vec2, b: &Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + t * ab;
    ((p - q).norm(), t)
}
