//! Central-finite-difference verification of every analytic gradient the
//! optimizer consumes. This lives in the library (not behind `cfg(test)`)
//! so the CLI can run the identical suite that the test harness gates on.
//!
//! Each check draws a fixed number of seeded random configurations, compares
//! analytic gradients against central differences coordinate by coordinate,
//! and reports the worst relative error. Coordinates whose magnitude falls
//! below a per-check floor (a fraction of the dominant gradient magnitude)
//! are excluded from the relative comparison: below that floor the finite
//! difference itself is mostly truncation noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::init::random_rotation;
use super::losses::{
    loss_fingertip_proximity, loss_grasp_reference, loss_optical_flow, loss_penetration,
    loss_proj, loss_projection_anchor, loss_temporal_sequence, project_anchors, PosedObject,
};
use super::ObjectState;
use crate::geometry::{build_sdf, Camera, TriMesh, Vec3};
use crate::grid::Grid2;
use crate::hand::{generate_default_rig, pose_hand_with_jacobian, HandRig, HandState};
use crate::render::{
    build_cache, depth_loss_value_cached, grad_depth_loss_cached, grad_silhouette_loss_cached,
    point_segment, silhouette_loss_cached, RasterCache,
};

/// Relative tolerance every coordinate must meet.
pub const REL_TOL: f64 = 1e-3;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Random configurations per check.
pub const CONFIGS: usize = 12;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub configs: usize,
    /// Coordinates compared (including floor-skipped ones).
    pub compared: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<22} {}  configs={:<3} coords={:<5} max_rel_err={:.3e}",
            self.name,
            if self.passed { "ok  " } else { "FAIL" },
            self.configs,
            self.compared,
            self.max_rel_err
        )
    }
}

/// Runs the whole suite. Deterministic in `seed`.
pub fn run_all(seed: u64) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for (k, check) in CHECKS.iter().enumerate() {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        out.push((check.run)(rng, check.name));
    }
    out
}

pub fn all_passed(reports: &[GradCheckReport]) -> bool {
    !reports.is_empty() && reports.iter().all(|r| r.passed)
}

struct Check {
    name: &'static str,
    run: fn(ChaCha8Rng, &'static str) -> GradCheckReport,
}

const CHECKS: &[Check] = &[
    Check { name: "silhouette_pixel", run: check_silhouette_pixel },
    Check { name: "silhouette_pose", run: check_silhouette_pose },
    Check { name: "depth_pose", run: check_depth_pose },
    Check { name: "temporal", run: check_temporal },
    Check { name: "optical_flow", run: check_optical_flow },
    Check { name: "penetration", run: check_penetration },
    Check { name: "fingertip_proximity", run: check_fingertip_proximity },
    Check { name: "grasp_reference", run: check_grasp_reference },
    Check { name: "anchor_object", run: check_anchor_object },
    Check { name: "anchor_hand", run: check_anchor_hand },
    Check { name: "hand_skinning", run: check_hand_skinning },
];

/// Accumulates coordinate comparisons for one report.
struct Comparer {
    compared: usize,
    max_rel_err: f64,
}

impl Comparer {
    fn new() -> Self {
        Comparer { compared: 0, max_rel_err: 0.0 }
    }

    /// `floor` is the denominator floor: coordinates where both magnitudes
    /// sit below it are judged against the floor instead of themselves.
    fn check(&mut self, analytic: f64, fd: f64, floor: f64) {
        self.compared += 1;
        let denom = analytic.abs().max(fd.abs()).max(floor).max(1e-12);
        let rel = (analytic - fd).abs() / denom;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
        }
    }

    /// Floor for a gradient vector: `frac` of its largest coordinate.
    fn floor_of(grads: impl IntoIterator<Item = f64>, frac: f64) -> f64 {
        let gmax = grads.into_iter().fold(0.0f64, |m, g| m.max(g.abs()));
        frac * gmax + 1e-9
    }

    fn report(self, name: &'static str, configs: usize) -> GradCheckReport {
        GradCheckReport {
            name,
            configs,
            compared: self.compared,
            max_rel_err: self.max_rel_err,
            passed: self.max_rel_err <= REL_TOL,
        }
    }
}

fn camera64() -> Camera {
    Camera { fx: 80.0, fy: 80.0, cx: 32.0, cy: 32.0, width: 64, height: 64 }
}

fn box_mesh(hx: f64, hy: f64, hz: f64) -> TriMesh {
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
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriMesh { vertices: v, faces }
}

fn random_box(rng: &mut ChaCha8Rng) -> TriMesh {
    box_mesh(rng.gen_range(0.04..0.09), rng.gen_range(0.04..0.09), rng.gen_range(0.04..0.09))
}

fn random_object_state(rng: &mut ChaCha8Rng) -> ObjectState {
    ObjectState {
        rot: random_rotation(rng),
        trans: Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(0.55..0.8)),
    }
}

/// Per-pixel soft-coverage internals: gradients of a one-pixel squared
/// silhouette loss against mesh vertex positions.
fn check_silhouette_pixel(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let mesh = random_box(&mut rng);
        let state = random_object_state(&mut rng);
        let softness = rng.gen_range(0.7..1.6);
        let posed = PosedObject::new(&mesh, &state, 1.0).unwrap().to_mesh(&mesh);
        let cache = build_cache(&posed, &camera).unwrap();
        let pixels = stable_band_pixels(&cache, softness, 3);
        assert!(!pixels.is_empty(), "no usable band pixels; widen the pose sweep");
        for &(px, py) in &pixels {
            let mut region = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0u8);
            region.set(px, py, 0, 1);
            // Constant target gives unit d(loss)/d(coverage) at the base point.
            let target_val = cache.soft_coverage(px, py, softness) - 0.5;
            let mut target = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0.0f64);
            target.set(px, py, 0, target_val);
            let (_, grads) =
                grad_silhouette_loss_cached(&cache, &camera, softness, &target, &region);
            let floor = Comparer::floor_of(
                grads.iter().flat_map(|g| [g.x, g.y, g.z]),
                0.03,
            );
            let (e0, e1) = cache.sil_edges[cache.nearest_edge.get(px, py, 0)];
            let mut probes = vec![e0, e1];
            while probes.len() < 4 {
                let v = rng.gen_range(0..posed.vertices.len());
                if !probes.contains(&v) {
                    probes.push(v);
                }
            }
            for &v in &probes {
                for axis in 0..3 {
                    let fd = central_diff(FD_STEP, |h| {
                        let mut m = posed.clone();
                        m.vertices[v][axis] += h;
                        let c = build_cache(&m, &camera).unwrap();
                        silhouette_loss_cached(&c, softness, &target, &region)
                    });
                    cmp.check(grads[v][axis], fd, floor);
                }
            }
        }
    }
    cmp.report(name, CONFIGS)
}

/// Band pixels whose nearest-edge assignment is stable: well inside the
/// sigmoid's active band, away from edge endpoints, and with the runner-up
/// silhouette edge clearly farther than the winner.
fn stable_band_pixels(cache: &RasterCache, softness: f64, want: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 2..cache.height() - 2 {
        for x in 2..cache.width() - 2 {
            let d = cache.signed_dist.get(x, y, 0);
            if d.abs() < 0.1 * softness || d.abs() > 2.0 * softness {
                continue;
            }
            let t = cache.nearest_t.get(x, y, 0);
            if !(0.25..=0.75).contains(&t) {
                continue;
            }
            let p = crate::geometry::Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let winner = cache.nearest_edge.get(x, y, 0);
            let mut runner_up = f64::INFINITY;
            for (i, &(a, b)) in cache.sil_edges.iter().enumerate() {
                if i == winner {
                    continue;
                }
                let (dist, _) = point_segment(&p, &cache.proj[a], &cache.proj[b]);
                runner_up = runner_up.min(dist);
            }
            if runner_up < d.abs() + 0.2 {
                continue;
            }
            out.push((x, y));
            if out.len() == want {
                return out;
            }
        }
    }
    out
}

fn central_diff(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Applies a signed bump to one of the 8 object-pose coordinates
/// (raw quaternion, translation, scale).
fn bump_object(state: &ObjectState, scale: f64, coord: usize, h: f64) -> (ObjectState, f64) {
    let mut s = state.clone();
    let mut sc = scale;
    match coord {
        0 => s.rot.w += h,
        1 => s.rot.x += h,
        2 => s.rot.y += h,
        3 => s.rot.z += h,
        4 => s.trans.x += h,
        5 => s.trans.y += h,
        6 => s.trans.z += h,
        _ => sc += h,
    }
    (s, sc)
}

fn object_grad_coords(g: &super::losses::ObjectGrads) -> [f64; 8] {
    [g.rot[0], g.rot[1], g.rot[2], g.rot[3], g.trans.x, g.trans.y, g.trans.z, g.scale]
}

/// Full silhouette loss chained into the 8 object-pose parameters.
fn check_silhouette_pose(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let mesh = random_box(&mut rng);
        let state = random_object_state(&mut rng);
        let scale = rng.gen_range(0.8..1.25);
        let softness = rng.gen_range(0.8..1.5);
        // Target: hard mask of a nearby pose, so residuals are generic.
        let mut near = state.clone();
        near.trans += Vec3::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 0.0);
        let target_mesh = PosedObject::new(&mesh, &near, scale).unwrap().to_mesh(&mesh);
        let tc = build_cache(&target_mesh, &camera).unwrap();
        let mut object_mask = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0u8);
        for y in 0..tc.height() {
            for x in 0..tc.width() {
                if tc.signed_dist.get(x, y, 0) > 0.0 {
                    object_mask.set(x, y, 0, 1);
                }
            }
        }
        // A rectangular exclusion zone exercises the region gating.
        let mut exclusion = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0u8);
        let (ex, ey) = (rng.gen_range(0..48usize), rng.gen_range(0..48usize));
        for y in ey..ey + 16 {
            for x in ex..ex + 16 {
                exclusion.set(x, y, 0, 1);
            }
        }
        let (_, grads) =
            loss_proj(&mesh, &state, scale, &camera, softness, &object_mask, &exclusion).unwrap();
        let coords = object_grad_coords(&grads);
        let floor = Comparer::floor_of(coords, 0.03);
        // Whole-image silhouette sums switch nearest edges on many pixels at
        // once, so their finite differences converge slowly; probe tighter
        // than the default step (roundoff is still 5+ orders below).
        for (k, &g) in coords.iter().enumerate() {
            let fd = central_diff(1e-5, |h| {
                let (s, sc) = bump_object(&state, scale, k, h);
                loss_proj(&mesh, &s, sc, &camera, softness, &object_mask, &exclusion).unwrap().0
            });
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Normalized depth loss chained into the 8 object-pose parameters. The
/// scoring region is the rendered mask eroded 2 px so the pixel set cannot
/// change under the probe steps.
fn check_depth_pose(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let mesh = box_mesh(
            rng.gen_range(0.06..0.1),
            rng.gen_range(0.06..0.1),
            rng.gen_range(0.06..0.1),
        );
        let mut state = random_object_state(&mut rng);
        state.trans.z = rng.gen_range(0.5..0.65);
        let scale = rng.gen_range(0.9..1.15);
        let posed = PosedObject::new(&mesh, &state, scale).unwrap().to_mesh(&mesh);
        let cache = build_cache(&posed, &camera).unwrap();
        let mut rendered = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0u8);
        for y in 0..cache.height() {
            for x in 0..cache.width() {
                if cache.depth.get(x, y, 0).is_finite() {
                    rendered.set(x, y, 0, 1);
                }
            }
        }
        let region = rendered.eroded(2);
        assert!(region.count_ones() > 40, "depth region too small for a meaningful check");
        // Affine remap of the base render plus a smooth wobble: correlated
        // with the truth but not a trivial zero of the normalized loss.
        let (a, b) = (rng.gen_range(1.2..1.8), rng.gen_range(0.1..0.3));
        let mut predicted = Grid2::filled(camera.width as usize, camera.height as usize, 1, 0.0f64);
        for y in 0..cache.height() {
            for x in 0..cache.width() {
                let d = cache.depth.get(x, y, 0);
                if d.is_finite() {
                    let wobble = 0.004 * ((0.11 * x as f64).sin() + (0.13 * y as f64).cos());
                    predicted.set(x, y, 0, a * (d + wobble) + b);
                }
            }
        }
        let eval = grad_depth_loss_cached(&cache, &camera, &predicted, &region);
        assert!(!eval.region_too_small && !eval.degenerate_depth);
        let pobj = PosedObject::new(&mesh, &state, scale).unwrap();
        let coords = object_grad_coords(&pobj.chain(&eval.grads));
        let floor = Comparer::floor_of(coords, 0.03);
        // Rendered depth kinks wherever a true 3D edge sweeps a pixel center
        // under the probe; the affected-pixel count shrinks linearly with the
        // step, so probe tighter than the default.
        for (k, &g) in coords.iter().enumerate() {
            let fd = central_diff(3e-6, |h| {
                let (s, sc) = bump_object(&state, scale, k, h);
                let m = PosedObject::new(&mesh, &s, sc).unwrap().to_mesh(&mesh);
                let c = build_cache(&m, &camera).unwrap();
                depth_loss_value_cached(&c, &predicted, &region)
            });
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Windowed temporal smoothness over random parameter sequences.
fn check_temporal(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let frames = rng.gen_range(6..10usize);
        let dim = rng.gen_range(3..7usize);
        let seq: Vec<Vec<f64>> = (0..frames)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (_, grads) = loss_temporal_sequence(&seq);
        let floor = Comparer::floor_of(grads.iter().flatten().copied(), 1e-6);
        for _ in 0..12 {
            let (i, k) = (rng.gen_range(0..frames), rng.gen_range(0..dim));
            let fd = central_diff(FD_STEP, |h| {
                let mut s = seq.clone();
                s[i][k] += h;
                loss_temporal_sequence(&s).0
            });
            cmp.check(grads[i][k], fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Flow-consistency loss against an affine flow field (exactly reproduced
/// by bilinear sampling, so there are no interpolation-cell kinks anywhere).
fn check_optical_flow(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let (a, bx, by) = (rng.gen_range(-1.5..1.5), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
        let (c, dx, dy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
        let mut flow = Grid2::filled(w, h, 2, 0.0f32);
        for y in 0..h {
            for x in 0..w {
                flow.set(x, y, 0, (a + bx * x as f64 + by * y as f64) as f32);
                flow.set(x, y, 1, (c + dx * x as f64 + dy * y as f64) as f32);
            }
        }
        let n = 10;
        let mut prev = Vec::with_capacity(n);
        let mut cur = Vec::with_capacity(n);
        let mut visible = Vec::with_capacity(n);
        while prev.len() < n {
            let p = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(0.55..0.9));
            let q = p + Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
            let pq = camera.project(&q).unwrap();
            // Keep projections well inside the image so the bounds gate
            // cannot flip under the probe.
            if pq.x < 3.0 || pq.y < 3.0 || pq.x > w as f64 - 3.0 || pq.y > h as f64 - 3.0 {
                continue;
            }
            prev.push(p);
            cur.push(q);
            visible.push(rng.gen_range(0..10) != 0);
        }
        let eval = loss_optical_flow(&prev, &cur, &camera, &flow, &visible).unwrap();
        assert!(eval.used >= 6);
        let floor = Comparer::floor_of(
            eval.grad_prev.iter().chain(&eval.grad_cur).flat_map(|g| [g.x, g.y, g.z]),
            1e-4,
        );
        for i in 0..n {
            for axis in 0..3 {
                let fd_prev = central_diff(FD_STEP, |step| {
                    let mut p = prev.clone();
                    p[i][axis] += step;
                    loss_optical_flow(&p, &cur, &camera, &flow, &visible).unwrap().loss
                });
                cmp.check(eval.grad_prev[i][axis], fd_prev, floor);
                let fd_cur = central_diff(FD_STEP, |step| {
                    let mut q = cur.clone();
                    q[i][axis] += step;
                    loss_optical_flow(&prev, &q, &camera, &flow, &visible).unwrap().loss
                });
                cmp.check(eval.grad_cur[i][axis], fd_cur, floor);
            }
        }
    }
    cmp.report(name, CONFIGS)
}

/// Signed-distance penetration gradients on points probed strictly inside
/// interpolation cells (the trilinear field is linear per axis there, so
/// the central difference is exact).
fn check_penetration(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let half = Vec3::new(
            rng.gen_range(0.05..0.08),
            rng.gen_range(0.05..0.08),
            rng.gen_range(0.05..0.08),
        );
        let mesh = box_mesh(half.x, half.y, half.z);
        let sdf = build_sdf(&mesh, 32, 0.15).unwrap();
        let state = random_object_state(&mut rng);
        let scale = rng.gen_range(0.85..1.2);
        let pose = state.to_scaled_pose(scale).unwrap();
        let mut pts = Vec::new();
        while pts.len() < 7 {
            // Mostly interior points (negative distance), a couple outside.
            let outside = pts.len() >= 5;
            let span = if outside { 1.4 } else { 0.7 };
            let local = Vec3::new(
                rng.gen_range(-span..span) * half.x,
                rng.gen_range(-span..span) * half.y,
                rng.gen_range(-span..span) * half.z,
            );
            if !cell_interior(&sdf, &local) {
                continue;
            }
            let phi = sdf.query(&local);
            if outside && phi < 1e-3 {
                continue; // want the hinge comfortably inactive
            }
            if !outside && phi > -1e-3 {
                continue; // want it comfortably active
            }
            pts.push(pose.apply(&local));
        }
        let pen = loss_penetration(&pts, &sdf, &pose);
        let all = pen
            .grad_verts
            .iter()
            .flat_map(|g| [g.x, g.y, g.z])
            .chain(pen.grad_rot)
            .chain([pen.grad_trans.x, pen.grad_trans.y, pen.grad_trans.z, pen.grad_scale]);
        let floor = Comparer::floor_of(all, 1e-4);
        // Probes cross the trilinear field's cubic cross-terms (the object
        // sits rotated, so even axis-aligned world steps run diagonally
        // through cells); a tighter-than-default step keeps that truncation
        // term under the tolerance.
        for i in 0..pts.len() {
            for axis in 0..3 {
                let fd = central_diff(1e-5, |h| {
                    let mut p = pts.clone();
                    p[i][axis] += h;
                    loss_penetration(&p, &sdf, &pose).loss
                });
                cmp.check(pen.grad_verts[i][axis], fd, floor);
            }
        }
        // The same loss differentiated through the object pose.
        for k in 0..8 {
            let fd = central_diff(1e-5, |h| {
                let mut p = pose;
                match k {
                    0 => p.pose.rotation.w += h,
                    1 => p.pose.rotation.x += h,
                    2 => p.pose.rotation.y += h,
                    3 => p.pose.rotation.z += h,
                    4..=6 => p.pose.translation[k - 4] += h,
                    _ => p.scale += h,
                }
                loss_penetration(&pts, &sdf, &p).loss
            });
            let g = match k {
                0..=3 => pen.grad_rot[k],
                4..=6 => pen.grad_trans[k - 4],
                _ => pen.grad_scale,
            };
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Rejects query points whose probe neighborhood straddles a trilinear cell
/// boundary, where the interpolant's gradient is only piecewise-defined.
fn cell_interior(sdf: &crate::geometry::SdfGrid, local: &Vec3) -> bool {
    for axis in 0..3 {
        let coord = (local[axis] - sdf.origin[axis]) / sdf.cell;
        if (coord.fract() - 0.5).abs() > 0.3 {
            return false;
        }
    }
    true
}

/// Fingertip-to-nearest-vertex attraction, differentiated against both the
/// tips and the matched object vertices.
fn check_fingertip_proximity(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let object: Vec<Vec3> = (0..30)
            .map(|_| {
                Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(0.5..0.7))
            })
            .collect();
        let mut tips = Vec::new();
        while tips.len() < 5 {
            let t = Vec3::new(
                rng.gen_range(-0.12..0.12),
                rng.gen_range(-0.12..0.12),
                rng.gen_range(0.48..0.72),
            );
            let mut d: Vec<f64> = object.iter().map(|v| (t - v).norm_squared()).collect();
            d.sort_by(f64::total_cmp);
            // The nearest-neighbor assignment must not be contested, or the
            // loss is non-differentiable at the tie.
            if d[1] - d[0] > 1e-3 {
                tips.push(t);
            }
        }
        let eval = loss_fingertip_proximity(&tips, &object);
        let mut grad_obj = vec![Vec3::zeros(); object.len()];
        for &(i, g) in &eval.grad_obj {
            grad_obj[i] += g;
        }
        let floor = Comparer::floor_of(
            eval.grad_tips.iter().chain(&grad_obj).flat_map(|g| [g.x, g.y, g.z]),
            1e-6,
        );
        for i in 0..tips.len() {
            for axis in 0..3 {
                let fd = central_diff(FD_STEP, |h| {
                    let mut t = tips.clone();
                    t[i][axis] += h;
                    loss_fingertip_proximity(&t, &object).loss
                });
                cmp.check(eval.grad_tips[i][axis], fd, floor);
            }
        }
        for &(i, _) in &eval.grad_obj {
            for axis in 0..3 {
                let fd = central_diff(FD_STEP, |h| {
                    let mut o = object.clone();
                    o[i][axis] += h;
                    loss_fingertip_proximity(&tips, &o).loss
                });
                cmp.check(grad_obj[i][axis], fd, floor);
            }
        }
    }
    cmp.report(name, CONFIGS)
}

/// Articulation-reference pull while the proximity gate is active.
fn check_grasp_reference(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let dim = rng.gen_range(4..12usize);
        let artic: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let reference: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let threshold = 0.05;
        let dist = rng.gen_range(0.0..0.8) * threshold;
        let (_, grads) = loss_grasp_reference(&artic, &reference, dist, threshold).unwrap();
        let floor = Comparer::floor_of(grads.iter().copied(), 1e-6);
        for k in 0..dim {
            let fd = central_diff(FD_STEP, |h| {
                let mut a = artic.clone();
                a[k] += h;
                loss_grasp_reference(&a, &reference, dist, threshold).unwrap().0
            });
            cmp.check(grads[k], fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Image-plane anchoring chained into the 8 object-pose parameters.
fn check_anchor_object(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let mut cmp = Comparer::new();
    for _ in 0..CONFIGS {
        let mesh = random_box(&mut rng);
        let state = random_object_state(&mut rng);
        let scale = rng.gen_range(0.85..1.2);
        let mut anchor_state = state.clone();
        anchor_state.trans += Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.03..0.03));
        let anchors = project_anchors(
            &PosedObject::new(&mesh, &anchor_state, scale).unwrap().vertices,
            &camera,
        );
        let posed = PosedObject::new(&mesh, &state, scale).unwrap();
        let eval = loss_projection_anchor(&posed.vertices, &anchors, &camera).unwrap();
        assert_eq!(eval.skipped, 0);
        let coords = object_grad_coords(&posed.chain(&eval.grads));
        let floor = Comparer::floor_of(coords, 1e-4);
        for (k, &g) in coords.iter().enumerate() {
            let fd = central_diff(FD_STEP, |h| {
                let (s, sc) = bump_object(&state, scale, k, h);
                let p = PosedObject::new(&mesh, &s, sc).unwrap();
                loss_projection_anchor(&p.vertices, &anchors, &camera).unwrap().loss
            });
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

fn random_hand_state(rng: &mut ChaCha8Rng, dim: usize) -> HandState {
    HandState {
        rot: random_rotation(rng),
        trans: Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(0.5..0.7)),
        artic: (0..dim).map(|_| rng.gen_range(-0.8..0.8)).collect(),
    }
}

/// Applies a signed bump to one hand coordinate: 4 raw quaternion, 3
/// translation, then the articulation latent.
fn bump_hand(state: &HandState, coord: usize, h: f64) -> HandState {
    let mut s = state.clone();
    match coord {
        0 => s.rot.w += h,
        1 => s.rot.x += h,
        2 => s.rot.y += h,
        3 => s.rot.z += h,
        4 => s.trans.x += h,
        5 => s.trans.y += h,
        6 => s.trans.z += h,
        k => s.artic[k - 7] += h,
    }
    s
}

fn hand_grad_coords(ga: &[f64], gq: &[f64; 4], gt: &Vec3) -> Vec<f64> {
    let mut out = vec![gq[0], gq[1], gq[2], gq[3], gt.x, gt.y, gt.z];
    out.extend_from_slice(ga);
    out
}

/// Image-plane anchoring chained through the articulated hand.
fn check_anchor_hand(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let camera = camera64();
    let mut cmp = Comparer::new();
    for cfg in 0..CONFIGS {
        let dim = 4 + (cfg % 3);
        let rig = generate_default_rig(dim, 20 + cfg as u64);
        let state = random_hand_state(&mut rng, dim);
        let mut anchor_state = state.clone();
        for a in &mut anchor_state.artic {
            *a += rng.gen_range(-0.15..0.15);
        }
        anchor_state.trans += Vec3::new(rng.gen_range(-0.02..0.02), 0.0, rng.gen_range(-0.02..0.02));
        let anchors = project_anchors(
            &pose_hand_with_jacobian(&rig, &anchor_state).unwrap().vertices,
            &camera,
        );
        let posed = pose_hand_with_jacobian(&rig, &state).unwrap();
        let eval = loss_projection_anchor(&posed.vertices, &anchors, &camera).unwrap();
        assert_eq!(eval.skipped, 0);
        let (ga, gq, gt) = posed.chain(&eval.grads);
        let coords = hand_grad_coords(&ga, &gq, &gt);
        let floor = Comparer::floor_of(coords.iter().copied(), 1e-4);
        for (k, &g) in coords.iter().enumerate() {
            let fd = central_diff(FD_STEP, |h| {
                let s = bump_hand(&state, k, h);
                let p = pose_hand_with_jacobian(&rig, &s).unwrap();
                loss_projection_anchor(&p.vertices, &anchors, &camera).unwrap().loss
            });
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}

/// Skinning Jacobians probed directly: a fixed random linear functional of
/// the posed vertices, differentiated against every hand parameter.
fn check_hand_skinning(mut rng: ChaCha8Rng, name: &'static str) -> GradCheckReport {
    let mut cmp = Comparer::new();
    for cfg in 0..CONFIGS {
        let dim = 4 + (cfg % 4);
        let rig = generate_default_rig(dim, 100 + cfg as u64);
        let state = random_hand_state(&mut rng, dim);
        let weights: Vec<Vec3> = (0..rig.mesh.vertices.len())
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let probe = |rig: &HandRig, s: &HandState| -> f64 {
            let posed = pose_hand_with_jacobian(rig, s).unwrap();
            posed.vertices.iter().zip(&weights).map(|(v, w)| v.dot(w)).sum()
        };
        let posed = pose_hand_with_jacobian(&rig, &state).unwrap();
        let (ga, gq, gt) = posed.chain(&weights);
        let coords = hand_grad_coords(&ga, &gq, &gt);
        let floor = Comparer::floor_of(coords.iter().copied(), 1e-4);
        for (k, &g) in coords.iter().enumerate() {
            let fd = central_diff(FD_STEP, |h| probe(&rig, &bump_hand(&state, k, h)));
            cmp.check(g, fd, floor);
        }
    }
    cmp.report(name, CONFIGS)
}
