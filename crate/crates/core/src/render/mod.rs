//! Differentiable silhouette / depth rasterizer.
//!
//! The soft silhouette at a pixel is `sigmoid(d / softness)` where `d` is
//! the signed distance (in pixels) from the pixel center to the nearest
//! projected silhouette edge, positive inside the covered region. Depthature
//! is hard nearest-surface z-buffering; depth-loss gradients flow through
//! the hit triangle's plane equation rather than through the soft mask.
//!
//! Image losses return per-vertex 3D gradients; callers chain them into
//! pose or articulation parameters.

mod raster;

pub use raster::{build_cache, point_segment, sigmoid, silhouette_edges, RasterCache, NEAR_PLANE};

use crate::geometry::{Camera, GeometryError, TriMesh, Vec2, Vec3};
use crate::grid::{Grid2, Mask};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{context}: buffer is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    ShapeMismatch { context: String, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
}

/// Default softness, in pixels of silhouette-edge distance.
pub const DEFAULT_SOFTNESS: f64 = 2.0;
/// Guard on depth standard deviations when normalizing.
pub const EPS_SIGMA: f64 = 1e-6;
/// Minimum pixels for a usable depth-loss region.
pub const MIN_DEPTH_REGION: usize = 16;

/// Rendered buffers for one mesh under one camera.
#[derive(Debug, Clone)]
pub struct RenderBuffers {
    /// Soft coverage in [0, 1].
    pub silhouette: Grid2<f64>,
    /// Meters; `f64::INFINITY` marks background.
    pub depth: Grid2<f64>,
    /// True where a vertex's depth is within the visibility tolerance of
    /// the depth buffer at its projected pixel.
    pub vertex_visible: Vec<bool>,
}

/// Renders soft silhouette, hard depth and per-vertex visibility.
pub fn rasterize(
    mesh: &TriMesh,
    camera: &Camera,
    softness: f64,
) -> Result<RenderBuffers, RenderError> {
    assert!(softness > 0.0, "softness must be positive");
    let cache = build_cache(mesh, camera)?;
    Ok(buffers_from_cache(&cache, softness))
}

/// Assembles [`RenderBuffers`] from a prebuilt cache.
pub fn buffers_from_cache(cache: &RasterCache, softness: f64) -> RenderBuffers {
    let (w, h) = (cache.width(), cache.height());
    let mut silhouette = Grid2::filled(w, h, 1, 0.0f64);
    if !cache.sil_edges.is_empty() {
        for y in 0..h {
            for x in 0..w {
                silhouette.set(x, y, 0, cache.soft_coverage(x, y, softness));
            }
        }
    }
    RenderBuffers {
        silhouette,
        depth: cache.depth.clone(),
        vertex_visible: vertex_visibility(cache, &cache.depth, &cache.depth_slope),
    }
}

/// Marks vertices whose depth is within tolerance of the depth buffer at
/// their projected pixel. The tolerance is ε = 1% of the scene depth range
/// plus a per-pixel slope allowance: the depth buffer is sampled at pixel
/// centers, so on a steep surface a vertex can legitimately sit up to
/// `0.71 px · |∇depth|` behind the sample. `scene_depth`/`scene_slope` may
/// come from a combined multi-mesh render so occluders suppress visibility.
pub fn vertex_visibility(
    cache: &RasterCache,
    scene_depth: &Grid2<f64>,
    scene_slope: &Grid2<f64>,
) -> Vec<bool> {
    let (w, h) = (scene_depth.width, scene_depth.height);
    let (mut z_min, mut z_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &cache.verts {
        z_min = z_min.min(v.z);
        z_max = z_max.max(v.z);
    }
    let eps = (0.01 * (z_max - z_min)).max(1e-9);
    cache
        .verts
        .iter()
        .zip(&cache.proj)
        .map(|(v, p)| {
            let x = p.x.floor();
            let y = p.y.floor();
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                return false;
            }
            let (xi, yi) = (x as usize, y as usize);
            let allowance = eps + 0.71 * scene_slope.get(xi, yi, 0);
            v.z <= scene_depth.get(xi, yi, 0) + allowance
        })
        .collect()
}

fn check_shape<T>(context: &str, buf: &Grid2<T>, camera: &Camera) -> Result<(), RenderError> {
    if buf.width != camera.width as usize || buf.height != camera.height as usize {
        return Err(RenderError::ShapeMismatch {
            context: context.into(),
            got_w: buf.width,
            got_h: buf.height,
            want_w: camera.width as usize,
            want_h: camera.height as usize,
        });
    }
    Ok(())
}

/// Squared silhouette error over a pixel region, with analytic gradients
/// with respect to every mesh vertex.
///
/// `loss = Σ_{p ∈ region} (soft_silhouette(p) − target(p))²`
pub fn grad_silhouette_loss(
    mesh: &TriMesh,
    camera: &Camera,
    softness: f64,
    target: &Grid2<f64>,
    region: &Mask,
) -> Result<(f64, Vec<Vec3>), RenderError> {
    check_shape("target_mask", target, camera)?;
    check_shape("region_mask", region, camera)?;
    let cache = build_cache(mesh, camera)?;
    Ok(grad_silhouette_loss_cached(&cache, camera, softness, target, region))
}

/// Same as [`grad_silhouette_loss`] but reuses a prebuilt cache.
pub fn grad_silhouette_loss_cached(
    cache: &RasterCache,
    camera: &Camera,
    softness: f64,
    target: &Grid2<f64>,
    region: &Mask,
) -> (f64, Vec<Vec3>) {
    let mut grads = vec![Vec3::zeros(); cache.verts.len()];
    let mut loss = 0.0;
    let (w, h) = (cache.width(), cache.height());
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y, 0) == 0 {
                continue;
            }
            let s = if cache.sil_edges.is_empty() { 0.0 } else { cache.soft_coverage(x, y, softness) };
            let r = s - target.get(x, y, 0);
            loss += r * r;
            if cache.sil_edges.is_empty() {
                continue;
            }
            let dl_ds = 2.0 * r;
            let ds_dd = s * (1.0 - s) / softness;
            if dl_ds * ds_dd == 0.0 {
                continue;
            }
            let d = cache.signed_dist.get(x, y, 0);
            let sign = if d >= 0.0 { 1.0 } else { -1.0 };
            let (v0, v1) = cache.sil_edges[cache.nearest_edge.get(x, y, 0)];
            let t = cache.nearest_t.get(x, y, 0);
            let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let a = cache.proj[v0];
            let b = cache.proj[v1];
            let q = a + t * (b - a);
            let dist = (p - q).norm();
            if dist < 1e-12 {
                continue; // direction undefined exactly on the edge
            }
            let n_hat = (p - q) / dist;
            // d(dist)/da = −(1−t)·n̂, d(dist)/db = −t·n̂; signed distance
            // multiplies by the coverage sign.
            let scale = dl_ds * ds_dd * sign;
            let ga2 = -scale * (1.0 - t) * n_hat;
            let gb2 = -scale * t * n_hat;
            // Chain 2D pixel gradients through the projection Jacobians.
            let ja = camera.project_jacobian(&cache.verts[v0]).expect("cached verts are in front");
            let jb = camera.project_jacobian(&cache.verts[v1]).expect("cached verts are in front");
            grads[v0] += ja.transpose() * ga2;
            grads[v1] += jb.transpose() * gb2;
        }
    }
    (loss, grads)
}

/// Forward-only variant of [`grad_silhouette_loss_cached`]; skips all
/// per-pixel chaining work, which matters on step-guard probe evaluations.
pub fn silhouette_loss_cached(
    cache: &RasterCache,
    softness: f64,
    target: &Grid2<f64>,
    region: &Mask,
) -> f64 {
    let mut loss = 0.0;
    for y in 0..cache.height() {
        for x in 0..cache.width() {
            if region.get(x, y, 0) == 0 {
                continue;
            }
            let s = if cache.sil_edges.is_empty() { 0.0 } else { cache.soft_coverage(x, y, softness) };
            let r = s - target.get(x, y, 0);
            loss += r * r;
        }
    }
    loss
}

/// Forward-only variant of [`grad_depth_loss_cached`]; degenerate regions
/// evaluate to zero exactly as the gradient variant does.
pub fn depth_loss_value_cached(
    cache: &RasterCache,
    predicted_depth: &Grid2<f64>,
    object_region: &Mask,
) -> f64 {
    let mut rvals = Vec::new();
    let mut pvals = Vec::new();
    for y in 0..cache.height() {
        for x in 0..cache.width() {
            if object_region.get(x, y, 0) != 0 && cache.depth.get(x, y, 0).is_finite() {
                rvals.push(cache.depth.get(x, y, 0));
                pvals.push(predicted_depth.get(x, y, 0));
            }
        }
    }
    let n = rvals.len();
    if n < MIN_DEPTH_REGION {
        return 0.0;
    }
    let stats = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        (mu, var.sqrt())
    };
    let (mu_r, sd_r) = stats(&rvals);
    let (mu_p, sd_p) = stats(&pvals);
    if sd_p < EPS_SIGMA {
        return 0.0;
    }
    let sd_r = sd_r.max(EPS_SIGMA);
    rvals
        .iter()
        .zip(&pvals)
        .map(|(r, p)| {
            let e = (r - mu_r) / sd_r - (p - mu_p) / sd_p;
            e * e
        })
        .sum()
}

/// Result of [`grad_depth_loss`]. When a flag is set the loss is zero and
/// the gradients are zero, by contract.
#[derive(Debug, Clone)]
pub struct DepthLoss {
    pub loss: f64,
    pub grads: Vec<Vec3>,
    /// Fewer than [`MIN_DEPTH_REGION`] usable pixels.
    pub region_too_small: bool,
    /// Predicted depth was constant over the region (std below guard).
    pub degenerate_depth: bool,
}

/// Depth alignment loss: both rendered and predicted depth are normalized
/// to zero mean / unit variance over the usable region (rendered pixels
/// inside `object_region`), then compared with squared error. Normalizing
/// both sides makes the loss exactly invariant to affine ambiguity in the
/// predicted depth.
pub fn grad_depth_loss(
    mesh: &TriMesh,
    camera: &Camera,
    predicted_depth: &Grid2<f64>,
    object_region: &Mask,
) -> Result<DepthLoss, RenderError> {
    check_shape("predicted_depth", predicted_depth, camera)?;
    check_shape("object_region", object_region, camera)?;
    let cache = build_cache(mesh, camera)?;
    Ok(grad_depth_loss_cached(&cache, camera, predicted_depth, object_region))
}

/// Same as [`grad_depth_loss`] but reuses a prebuilt cache.
pub fn grad_depth_loss_cached(
    cache: &RasterCache,
    camera: &Camera,
    predicted_depth: &Grid2<f64>,
    object_region: &Mask,
) -> DepthLoss {
    let zero = DepthLoss {
        loss: 0.0,
        grads: vec![Vec3::zeros(); cache.verts.len()],
        region_too_small: false,
        degenerate_depth: false,
    };

    // Usable pixels: inside the region and actually rendered (the
    // background sentinel must not pollute the statistics).
    let mut px: Vec<(usize, usize)> = Vec::new();
    for y in 0..cache.height() {
        for x in 0..cache.width() {
            if object_region.get(x, y, 0) != 0 && cache.depth.get(x, y, 0).is_finite() {
                px.push((x, y));
            }
        }
    }
    let n = px.len();
    if n < MIN_DEPTH_REGION {
        return DepthLoss { region_too_small: true, ..zero };
    }

    let rvals: Vec<f64> = px.iter().map(|&(x, y)| cache.depth.get(x, y, 0)).collect();
    let pvals: Vec<f64> = px.iter().map(|&(x, y)| predicted_depth.get(x, y, 0)).collect();
    let stats = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        (mu, var.sqrt())
    };
    let (mu_r, sd_r) = stats(&rvals);
    let (mu_p, sd_p) = stats(&pvals);
    if sd_p < EPS_SIGMA {
        return DepthLoss { degenerate_depth: true, ..zero };
    }
    let sd_r_guarded = sd_r.max(EPS_SIGMA);

    let rhat: Vec<f64> = rvals.iter().map(|v| (v - mu_r) / sd_r_guarded).collect();
    let phat: Vec<f64> = pvals.iter().map(|v| (v - mu_p) / sd_p).collect();
    let mut loss = 0.0;
    let g: Vec<f64> = rhat
        .iter()
        .zip(&phat)
        .map(|(r, p)| {
            let e = r - p;
            loss += e * e;
            2.0 * e
        })
        .collect();

    // Backprop through normalization:
    // dL/dR_q = (G_q − mean(G) − R̂_q · mean(G ∘ R̂)) / σ_R
    // (the last term vanishes when the σ guard is active).
    let mean_g = g.iter().sum::<f64>() / n as f64;
    let mean_gr = if sd_r > EPS_SIGMA {
        g.iter().zip(&rhat).map(|(a, b)| a * b).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut grads = vec![Vec3::zeros(); cache.verts.len()];
    for (i, &(x, y)) in px.iter().enumerate() {
        let dl_dr = (g[i] - mean_g - rhat[i] * mean_gr) / sd_r_guarded;
        if dl_dr == 0.0 {
            continue;
        }
        let fi = cache.face_id.get(x, y, 0);
        let f = depth_plane_grads(cache, camera, fi, x, y);
        for (vid, gv) in f {
            grads[vid] += dl_dr * gv;
        }
    }
    DepthLoss { loss, grads, region_too_small: false, degenerate_depth: false }
}

/// Chains per-pixel gradients on the rendered depth buffer (`dL/dD` at
/// pixels where the cache rendered something) back to mesh vertices through
/// the z-buffer's ray–plane depth.
pub fn chain_depth_grads(
    cache: &RasterCache,
    camera: &Camera,
    pixel_grads: &[(usize, usize, f64)],
) -> Vec<Vec3> {
    let mut grads = vec![Vec3::zeros(); cache.verts.len()];
    for &(x, y, dl_dd) in pixel_grads {
        if dl_dd == 0.0 {
            continue;
        }
        debug_assert!(cache.depth.get(x, y, 0).is_finite(), "pixel not rendered");
        let fi = cache.face_id.get(x, y, 0);
        for (vid, gv) in depth_plane_grads(cache, camera, fi, x, y) {
            grads[vid] += dl_dd * gv;
        }
    }
    grads
}

/// Gradients of the z-buffer depth at a pixel with respect to the three
/// vertices of the rasterized face. Depth is the ray-plane intersection
/// `t = (n·a) / (n·dir)` with `n = (b−a)×(c−a)`, so
/// `∂n/∂a = [c−b]ₓ`, `∂n/∂b = [a−c]ₓ`, `∂n/∂c = [b−a]ₓ`.
fn depth_plane_grads(
    cache: &RasterCache,
    camera: &Camera,
    face: usize,
    x: usize,
    y: usize,
) -> [(usize, Vec3); 3] {
    use crate::geometry::cross_matrix;
    let fids = cache.face_vertex_ids(face);
    let a = cache.verts[fids[0]];
    let b = cache.verts[fids[1]];
    let c = cache.verts[fids[2]];
    let n = (b - a).cross(&(c - a));
    let dir = camera.unproject_dir(x as f64 + 0.5, y as f64 + 0.5);
    let num = n.dot(&a);
    let den = n.dot(&dir);
    let t = num / den;

    let m_a = cross_matrix(&(c - b));
    let m_b = cross_matrix(&(a - c));
    let m_c = cross_matrix(&(b - a));
    // dt = (dnum·den − num·dden)/den²; for vertex a, dnum = Mᵀa·a + n.
    let ga = (m_a.transpose() * a + n - t * (m_a.transpose() * dir)) / den;
    let gb = (m_b.transpose() * a - t * (m_b.transpose() * dir)) / den;
    let gc = (m_c.transpose() * a - t * (m_c.transpose() * dir)) / den;
    [(fids[0], ga), (fids[1], gb), (fids[2], gc)]
}

impl RasterCache {
    /// Vertex ids of a face; the cache stores faces implicitly via the mesh
    /// used to build it.
    pub fn face_vertex_ids(&self, face: usize) -> [usize; 3] {
        self.faces[face]
    }
}
