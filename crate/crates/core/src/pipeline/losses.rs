//! Loss terms of the optimization objective, each returning its scalar
//! value together with analytic gradients with respect to its inputs.
//! Gradients on 3D points are chained into state parameters by the caller
//! (see [`PosedObject::chain`] and `PosedHand::chain`).

use nalgebra::{Matrix2, Matrix3x4};

use super::{ObjectState, PipelineError};
use crate::geometry::{rotate_jacobian, Camera, ScaledPose, SdfGrid, TriMesh, Vec2, Vec3};
use crate::grid::{bilinear_sample_with_gradient, Grid2, Mask};
use crate::render::{grad_silhouette_loss_cached, build_cache, RenderError};

/// Hinge margin for the mutual-occlusion losses (meters).
pub const DEFAULT_OCC_MARGIN: f64 = 1e-3;

/// Exponential-decay window of the temporal smoothness term.
pub const TEMPORAL_WINDOW: usize = 4;

/// Gradients of a scalar with respect to one frame's object parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectGrads {
    /// With respect to the raw (unnormalized) quaternion, `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub trans: Vec3,
    pub scale: f64,
}

impl ObjectGrads {
    pub fn zero() -> Self {
        ObjectGrads { rot: [0.0; 4], trans: Vec3::zeros(), scale: 0.0 }
    }
}

/// World-space object vertices `R(q̂)(s·v₀) + T` with per-vertex Jacobians
/// against the raw pose parameters.
pub struct PosedObject {
    pub vertices: Vec<Vec3>,
    d_rot: Vec<Matrix3x4<f64>>,
    d_scale: Vec<Vec3>,
}

impl PosedObject {
    pub fn new(mesh: &TriMesh, state: &ObjectState, scale: f64) -> Result<Self, PipelineError> {
        let sp = state.to_scaled_pose(scale)?;
        let rot = sp.pose.rotation.normalized()?.to_matrix();
        let n = mesh.vertices.len();
        let mut vertices = Vec::with_capacity(n);
        let mut d_rot = Vec::with_capacity(n);
        let mut d_scale = Vec::with_capacity(n);
        for v0 in &mesh.vertices {
            vertices.push(sp.apply(v0));
            d_rot.push(rotate_jacobian(&state.rot, &(scale * v0))?);
            d_scale.push(rot * v0);
        }
        Ok(PosedObject { vertices, d_rot, d_scale })
    }

    pub fn to_mesh(&self, source: &TriMesh) -> TriMesh {
        TriMesh { vertices: self.vertices.clone(), faces: source.faces.clone() }
    }

    /// Accumulates per-vertex gradients into pose-parameter gradients.
    pub fn chain(&self, grad_verts: &[Vec3]) -> ObjectGrads {
        assert_eq!(grad_verts.len(), self.vertices.len());
        let mut out = ObjectGrads::zero();
        for ((jq, js), g) in self.d_rot.iter().zip(&self.d_scale).zip(grad_verts) {
            let gq = jq.transpose() * g;
            for k in 0..4 {
                out.rot[k] += gq[k];
            }
            out.trans += g;
            out.scale += js.dot(g);
        }
        out
    }
}

/// Object silhouette loss against an observed mask, scored only where the
/// hand mask does not claim the pixel.
pub fn loss_proj(
    mesh: &TriMesh,
    state: &ObjectState,
    scale: f64,
    camera: &Camera,
    softness: f64,
    object_mask: &Mask,
    hand_exclusion: &Mask,
) -> Result<(f64, ObjectGrads), PipelineError> {
    let posed = PosedObject::new(mesh, state, scale)?;
    let cache = build_cache(&posed.to_mesh(mesh), camera)?;
    let (loss, vgrads) = grad_silhouette_loss_cached(
        &cache,
        camera,
        softness,
        &object_mask.to_field(),
        &hand_exclusion.complement(),
    );
    Ok((loss, posed.chain(&vgrads)))
}

/// One frame's temporal smoothness term:
/// `Σ_{t=max(0,i−4)}^{i} 0.5^{i−t} ‖p_i − p_t‖²` (the `t = i` term is zero).
pub fn loss_temporal(seq: &[Vec<f64>], i: usize) -> f64 {
    assert!(i < seq.len());
    let lo = i.saturating_sub(TEMPORAL_WINDOW);
    let mut total = 0.0;
    for t in lo..=i {
        let decay = 0.5f64.powi((i - t) as i32);
        let d2: f64 = seq[i].iter().zip(&seq[t]).map(|(a, b)| (a - b) * (a - b)).sum();
        total += decay * d2;
    }
    total
}

/// Sum of [`loss_temporal`] over all frames, with gradients per frame.
pub fn loss_temporal_sequence(seq: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let dim = seq.first().map_or(0, |p| p.len());
    let mut grads = vec![vec![0.0; dim]; seq.len()];
    let mut total = 0.0;
    for i in 0..seq.len() {
        let lo = i.saturating_sub(TEMPORAL_WINDOW);
        for t in lo..i {
            let decay = 0.5f64.powi((i - t) as i32);
            for k in 0..dim {
                let d = seq[i][k] - seq[t][k];
                total += decay * d * d;
                grads[i][k] += 2.0 * decay * d;
                grads[t][k] -= 2.0 * decay * d;
            }
        }
    }
    (total, grads)
}

/// Optical-flow consistency between two frames of object vertices.
#[derive(Debug, Clone)]
pub struct FlowLoss {
    pub loss: f64,
    pub grad_prev: Vec<Vec3>,
    pub grad_cur: Vec<Vec3>,
    /// Vertices that actually contributed.
    pub used: usize,
}

/// `Σ_v 𝒱(v) ‖Π(vᵗ) − Π(vᵗ⁻¹) − F(Π(vᵗ))‖²` where `F` is the flow field
/// sampled bilinearly. Vertices marked invisible, projecting outside the
/// image, or behind the camera are skipped.
pub fn loss_optical_flow(
    prev: &[Vec3],
    cur: &[Vec3],
    camera: &Camera,
    flow: &Grid2<f32>,
    visible: &[bool],
) -> Result<FlowLoss, PipelineError> {
    if prev.len() != cur.len() || visible.len() != cur.len() {
        return Err(PipelineError::LengthMismatch {
            context: "flow loss vertex lists".into(),
            got: prev.len().min(visible.len()),
            want: cur.len(),
        });
    }
    if flow.width != camera.width as usize || flow.height != camera.height as usize || flow.channels != 2 {
        return Err(PipelineError::Render(RenderError::ShapeMismatch {
            context: "flow field".into(),
            got_w: flow.width,
            got_h: flow.height,
            want_w: camera.width as usize,
            want_h: camera.height as usize,
        }));
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut out = FlowLoss {
        loss: 0.0,
        grad_prev: vec![Vec3::zeros(); cur.len()],
        grad_cur: vec![Vec3::zeros(); cur.len()],
        used: 0,
    };
    for i in 0..cur.len() {
        if !visible[i] || cur[i].z <= 0.0 || prev[i].z <= 0.0 {
            continue;
        }
        let pc = camera.project(&cur[i]).expect("z checked");
        if pc.x < 0.0 || pc.y < 0.0 || pc.x >= w || pc.y >= h {
            continue;
        }
        let pp = camera.project(&prev[i]).expect("z checked");
        let (fu, dfu_dx, dfu_dy) = bilinear_sample_with_gradient(flow, pc.x, pc.y, 0);
        let (fv, dfv_dx, dfv_dy) = bilinear_sample_with_gradient(flow, pc.x, pc.y, 1);
        let r = pc - pp - Vec2::new(fu, fv);
        out.loss += r.norm_squared();
        out.used += 1;
        // d‖r‖²/dΠ(vᵗ) = 2 (I − ∇F)ᵀ r, the flow's own spatial gradient
        // included because it is sampled at the moving point.
        let grad_f = Matrix2::new(dfu_dx, dfu_dy, dfv_dx, dfv_dy);
        let d_pc = (Matrix2::identity() - grad_f).transpose() * (2.0 * r);
        let d_pp = -2.0 * r;
        let jc = camera.project_jacobian(&cur[i]).expect("z checked");
        let jp = camera.project_jacobian(&prev[i]).expect("z checked");
        out.grad_cur[i] += jc.transpose() * d_pc;
        out.grad_prev[i] += jp.transpose() * d_pp;
    }
    Ok(out)
}

/// Mutual-occlusion hinge losses, with per-pixel depth gradients for the
/// caller to chain through `render::chain_depth_grads`.
#[derive(Debug, Clone)]
pub struct OcclusionLoss {
    /// Hand rendered behind the object where the hand is observed visible.
    pub loss_h: f64,
    /// Object rendered behind the hand where the object is observed visible.
    pub loss_o: f64,
    /// `(x, y, g)` with `g = dL_h/dD_h`; by construction `dL_h/dD_o = −g`.
    pub pix_h: Vec<(usize, usize, f64)>,
    /// `(x, y, g)` with `g = dL_o/dD_o`; by construction `dL_o/dD_h = −g`.
    pub pix_o: Vec<(usize, usize, f64)>,
}

/// Penalizes depth orderings that contradict the observed visible masks:
/// where the object is observed visible but renders behind the hand (and
/// vice versa), a squared hinge `(ΔD + margin)²` fires.
pub fn loss_occlusion(
    depth_h: &Grid2<f64>,
    depth_o: &Grid2<f64>,
    vis_o: &Mask,
    vis_h: &Mask,
    margin: f64,
) -> Result<OcclusionLoss, PipelineError> {
    if !depth_h.same_shape(depth_o) || !depth_h.same_shape(vis_o) || !depth_h.same_shape(vis_h) {
        return Err(PipelineError::Render(RenderError::ShapeMismatch {
            context: "occlusion buffers".into(),
            got_w: depth_o.width,
            got_h: depth_o.height,
            want_w: depth_h.width,
            want_h: depth_h.height,
        }));
    }
    let mut out = OcclusionLoss { loss_h: 0.0, loss_o: 0.0, pix_h: Vec::new(), pix_o: Vec::new() };
    for y in 0..depth_h.height {
        for x in 0..depth_h.width {
            let dh = depth_h.get(x, y, 0);
            let dobj = depth_o.get(x, y, 0);
            if !(dh.is_finite() && dobj.is_finite()) {
                continue; // one of the meshes does not cover this pixel
            }
            if vis_o.get(x, y, 0) != 0 && dobj > dh {
                let v = dobj - dh + margin;
                out.loss_o += v * v;
                out.pix_o.push((x, y, 2.0 * v));
            }
            if vis_h.get(x, y, 0) != 0 && dh > dobj {
                let v = dh - dobj + margin;
                out.loss_h += v * v;
                out.pix_h.push((x, y, 2.0 * v));
            }
        }
    }
    Ok(out)
}

/// Hand-into-object penetration and its gradients on both bodies.
#[derive(Debug, Clone)]
pub struct PenetrationLoss {
    pub loss: f64,
    /// Per hand-vertex world-space gradients.
    pub grad_verts: Vec<Vec3>,
    /// Gradient on the raw object quaternion `[w, x, y, z]`.
    pub grad_rot: [f64; 4],
    pub grad_trans: Vec3,
    pub grad_scale: f64,
}

/// Hand-into-object penetration: `Σ_v max(0, −sdf_world(v))²`, with the SDF
/// queried in the object's local frame and rescaled to world units. The term
/// depends on the object pose as well (moving the object moves its SDF under
/// the hand), so gradients are returned for both sides.
pub fn loss_penetration(
    verts: &[Vec3],
    sdf: &SdfGrid,
    object_pose: &ScaledPose,
) -> PenetrationLoss {
    let mut out = PenetrationLoss {
        loss: 0.0,
        grad_verts: vec![Vec3::zeros(); verts.len()],
        grad_rot: [0.0; 4],
        grad_trans: Vec3::zeros(),
        grad_scale: 0.0,
    };
    let s = object_pose.scale;
    let q = object_pose.pose.rotation;
    let rot = match q.normalized() {
        Ok(u) => u.to_matrix(),
        Err(_) => return out,
    };
    for (i, v) in verts.iter().enumerate() {
        let local = object_pose.apply_inverse(v);
        let (phi, grad_local) = sdf.query_with_gradient(&local);
        let world_phi = s * phi;
        if world_phi < 0.0 {
            out.loss += world_phi * world_phi;
            // d(s·φ(R⁻¹(v−T)/s))/dv = R ∇φ: the scale factors cancel.
            let gv = 2.0 * world_phi * (rot * grad_local);
            out.grad_verts[i] = gv;
            // The loss sees only v − T, so the translation gradient is the
            // exact negative of the vertex gradient.
            out.grad_trans -= gv;
            // d(s·φ)/ds = φ + s ∇φᵀ du/ds with du/ds = −u/s.
            out.grad_scale += 2.0 * world_phi * (phi - grad_local.dot(&local));
            // u = R(q̂)ᵀ y / s = rotate(q*, y) / s; differentiate the
            // conjugate rotation through the raw quaternion. The norm check
            // above makes the Jacobian infallible here.
            let jc = rotate_jacobian(&q.conjugate(), &(v - object_pose.pose.translation))
                .expect("non-degenerate quaternion");
            let lhs = 2.0 * world_phi * grad_local;
            for k in 0..4 {
                let col = Vec3::new(jc[(0, k)], jc[(1, k)], jc[(2, k)]);
                let sign = if k == 0 { 1.0 } else { -1.0 };
                out.grad_rot[k] += sign * lhs.dot(&col);
            }
        }
    }
    out
}

/// Fingertip-to-object attraction.
#[derive(Debug, Clone)]
pub struct ProximityLoss {
    pub loss: f64,
    pub grad_tips: Vec<Vec3>,
    /// Index of each tip's nearest object vertex.
    pub nearest: Vec<usize>,
    /// Gradient contributions on the matched object vertices.
    pub grad_obj: Vec<(usize, Vec3)>,
}

/// `Σ_tips ‖tip − nearest object vertex‖²` (brute-force nearest neighbor;
/// vertex counts here never justify an index structure).
pub fn loss_fingertip_proximity(tips: &[Vec3], object_verts: &[Vec3]) -> ProximityLoss {
    assert!(!object_verts.is_empty(), "object mesh has no vertices");
    let mut out = ProximityLoss {
        loss: 0.0,
        grad_tips: Vec::with_capacity(tips.len()),
        nearest: Vec::with_capacity(tips.len()),
        grad_obj: Vec::with_capacity(tips.len()),
    };
    for tip in tips {
        let (best, _) = object_verts
            .iter()
            .enumerate()
            .map(|(i, v)| (i, (tip - v).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let d = tip - object_verts[best];
        out.loss += d.norm_squared();
        out.grad_tips.push(2.0 * d);
        out.nearest.push(best);
        out.grad_obj.push((best, -2.0 * d));
    }
    out
}

/// Articulation-reference loss, active only while the hand is within
/// `threshold` of the object: `‖A_h − A_ref‖²`.
pub fn loss_grasp_reference(
    artic: &[f64],
    reference: &[f64],
    hand_object_dist: f64,
    threshold: f64,
) -> Result<(f64, Vec<f64>), PipelineError> {
    if artic.len() != reference.len() {
        return Err(PipelineError::LengthMismatch {
            context: "grasp reference articulation".into(),
            got: reference.len(),
            want: artic.len(),
        });
    }
    if hand_object_dist >= threshold {
        return Ok((0.0, vec![0.0; artic.len()]));
    }
    let mut loss = 0.0;
    let grads = artic
        .iter()
        .zip(reference)
        .map(|(a, r)| {
            let d = a - r;
            loss += d * d;
            2.0 * d
        })
        .collect();
    Ok((loss, grads))
}

/// Image-plane anchoring to the initialization.
#[derive(Debug, Clone)]
pub struct AnchorLoss {
    pub loss: f64,
    pub grads: Vec<Vec3>,
    /// Vertices skipped because they (or their anchor) are behind the camera.
    pub skipped: usize,
}

/// Projects the anchor vertex set once; behind-camera anchors are `None`.
pub fn project_anchors(verts: &[Vec3], camera: &Camera) -> Vec<Option<Vec2>> {
    verts.iter().map(|v| camera.project(v).ok()).collect()
}

/// `Σ_v ‖Π(v) − Π(vⁱ)‖²` in pixel² against precomputed anchor projections.
pub fn loss_projection_anchor(
    current: &[Vec3],
    anchors: &[Option<Vec2>],
    camera: &Camera,
) -> Result<AnchorLoss, PipelineError> {
    if current.len() != anchors.len() {
        return Err(PipelineError::LengthMismatch {
            context: "projection anchors".into(),
            got: anchors.len(),
            want: current.len(),
        });
    }
    let mut out = AnchorLoss { loss: 0.0, grads: vec![Vec3::zeros(); current.len()], skipped: 0 };
    for (i, v) in current.iter().enumerate() {
        let (anchor, proj) = match (anchors[i], camera.project(v)) {
            (Some(a), Ok(p)) => (a, p),
            _ => {
                out.skipped += 1;
                continue;
            }
        };
        let r = proj - anchor;
        out.loss += r.norm_squared();
        let j = camera.project_jacobian(v).expect("projection succeeded");
        out.grads[i] += j.transpose() * (2.0 * r);
    }
    Ok(out)
}
