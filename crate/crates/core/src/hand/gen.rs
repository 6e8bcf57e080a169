//! Procedural generation of the default low-poly hand rig.
//!
//! Right hand in its local frame: fingers extend toward +y, the thumb
//! leaves the +x side, and the palm faces −z (so curling moves fingertips
//! toward −z and back over the palm). Units are meters, proportioned like
//! an adult hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HandRig, Joint, VertexWeight, JOINT_COUNT};
use crate::geometry::{TriMesh, Vec3};

/// Seed for the random part of the articulation basis.
pub const DEFAULT_RIG_SEED: u64 = 7177;
/// Default latent dimensionality.
pub const DEFAULT_LATENT_DIM: usize = 10;

struct FingerSpec {
    name: &'static str,
    /// Base of the finger (MCP joint) in hand-local coordinates.
    base: Vec3,
    /// Unit direction the straight finger points along.
    dir: Vec3,
    /// Segment lengths, proximal to distal.
    lengths: [f64; 3],
    /// Cross-section radius at the base; tapers toward the tip.
    radius: f64,
}

const PALM_HALF: Vec3 = Vec3::new(0.041, 0.047, 0.013);

fn finger_specs() -> [FingerSpec; 5] {
    let fwd = Vec3::new(0.0, 1.0, 0.0);
    [
        FingerSpec {
            name: "thumb",
            base: Vec3::new(0.043, -0.021, -0.004),
            dir: Vec3::new(0.74, 0.67, -0.05).normalize(),
            lengths: [0.031, 0.025, 0.021],
            radius: 0.0095,
        },
        FingerSpec {
            name: "index",
            base: Vec3::new(0.027, 0.046, 0.0),
            dir: fwd,
            lengths: [0.033, 0.022, 0.017],
            radius: 0.0080,
        },
        FingerSpec {
            name: "middle",
            base: Vec3::new(0.009, 0.047, 0.0),
            dir: fwd,
            lengths: [0.036, 0.025, 0.018],
            radius: 0.0082,
        },
        FingerSpec {
            name: "ring",
            base: Vec3::new(-0.009, 0.046, 0.0),
            dir: fwd,
            lengths: [0.033, 0.023, 0.017],
            radius: 0.0077,
        },
        FingerSpec {
            name: "pinky",
            base: Vec3::new(-0.027, 0.043, 0.0),
            dir: Vec3::new(-0.08, 1.0, 0.0).normalize(),
            lengths: [0.026, 0.017, 0.014],
            radius: 0.0065,
        },
    ]
}

/// Builds the committed rig: palm box, five prism fingers, skinning
/// weights, a curl-first orthonormal articulation basis, and fingertip
/// vertex indices.
pub fn generate_default_rig(latent_dim: usize, seed: u64) -> HandRig {
    assert!(latent_dim >= 1 && latent_dim <= 45, "latent dim must be in 1..=45");
    let specs = finger_specs();

    let mut joints = vec![Joint { name: "wrist".into(), parent: None, center: Vec3::new(0.0, -PALM_HALF.y, 0.0) }];
    for (fi, spec) in specs.iter().enumerate() {
        let parent_of_first = 0usize;
        let mut pos = spec.base;
        for (si, seg_name) in ["mcp", "pip", "dip"].iter().enumerate() {
            let parent = if si == 0 { parent_of_first } else { joints.len() - 1 };
            joints.push(Joint {
                name: format!("{}_{seg_name}", spec.name),
                parent: Some(parent),
                center: pos,
            });
            pos += spec.dir * spec.lengths[si];
            let _ = fi;
        }
    }
    assert_eq!(joints.len(), JOINT_COUNT);

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut weights: Vec<Vec<VertexWeight>> = Vec::new();
    let mut fingertips = [0usize; 5];

    build_palm(&mut vertices, &mut faces, &mut weights);
    for (fi, spec) in specs.iter().enumerate() {
        let tip = build_finger(spec, 1 + fi * 3, &mut vertices, &mut faces, &mut weights);
        fingertips[fi] = tip;
    }

    let mesh = TriMesh::new(vertices, faces).expect("generated mesh is valid");
    let basis = build_basis(&specs, latent_dim, seed);

    let rig = HandRig { mesh, joints, weights, basis, fingertips };
    rig.validate().expect("generated rig is valid");
    rig
}

/// Palm: a box with its top face subdivided, all vertices bound to the
/// wrist.
fn build_palm(vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>, weights: &mut Vec<Vec<VertexWeight>>) {
    let h = PALM_HALF;
    // 3x4 grid on each of the two large faces (z = ±h.z) for some density.
    let (nx, ny) = (4usize, 5usize);
    let base = vertices.len();
    let grid_index = |vertices: &mut Vec<Vec3>, z: f64| -> Vec<usize> {
        let mut ids = Vec::new();
        for iy in 0..=ny {
            for ix in 0..=nx {
                let x = -h.x + 2.0 * h.x * ix as f64 / nx as f64;
                let y = -h.y + 2.0 * h.y * iy as f64 / ny as f64;
                ids.push(vertices.len());
                vertices.push(Vec3::new(x, y, z));
            }
        }
        ids
    };
    let back = grid_index(vertices, h.z);
    let front = grid_index(vertices, -h.z);
    let at = |ids: &[usize], ix: usize, iy: usize| ids[iy * (nx + 1) + ix];
    for iy in 0..ny {
        for ix in 0..nx {
            // Back face (+z): outward normal +z.
            let (a, b, c, d) = (
                at(&back, ix, iy),
                at(&back, ix + 1, iy),
                at(&back, ix + 1, iy + 1),
                at(&back, ix, iy + 1),
            );
            faces.push([a, b, c]);
            faces.push([a, c, d]);
            // Front face (−z): reversed winding.
            let (a, b, c, d) = (
                at(&front, ix, iy),
                at(&front, ix + 1, iy),
                at(&front, ix + 1, iy + 1),
                at(&front, ix, iy + 1),
            );
            faces.push([a, c, b]);
            faces.push([a, d, c]);
        }
    }
    // Side walls stitching the two grids' borders.
    let mut wall = |b0: usize, b1: usize, f0: usize, f1: usize| {
        faces.push([b0, f0, b1]);
        faces.push([b1, f0, f1]);
    };
    for ix in 0..nx {
        wall(at(&back, ix, 0), at(&back, ix + 1, 0), at(&front, ix, 0), at(&front, ix + 1, 0));
        wall(at(&back, ix + 1, ny), at(&back, ix, ny), at(&front, ix + 1, ny), at(&front, ix, ny));
    }
    for iy in 0..ny {
        wall(at(&back, 0, iy + 1), at(&back, 0, iy), at(&front, 0, iy + 1), at(&front, 0, iy));
        wall(at(&back, nx, iy), at(&back, nx, iy + 1), at(&front, nx, iy), at(&front, nx, iy + 1));
    }
    for _ in base..vertices.len() {
        weights.push(vec![VertexWeight { joint: 0, weight: 1.0 }]);
    }
}

/// One finger: an octagonal prism with rings at and between the joints.
/// Returns the fingertip vertex index.
fn build_finger(
    spec: &FingerSpec,
    first_joint: usize,
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
    weights: &mut Vec<Vec<VertexWeight>>,
) -> usize {
    const SIDES: usize = 8;
    let (mcp, pip, dip) = (first_joint, first_joint + 1, first_joint + 2);
    let [l1, l2, l3] = spec.lengths;
    // Ring stations along the finger with their skinning weights.
    let stations: Vec<(f64, f64, Vec<VertexWeight>)> = vec![
        (0.0, 1.00, vec![VertexWeight { joint: mcp, weight: 1.0 }]),
        (l1 * 0.5, 0.97, vec![VertexWeight { joint: mcp, weight: 1.0 }]),
        (l1, 0.92, vec![
            VertexWeight { joint: mcp, weight: 0.5 },
            VertexWeight { joint: pip, weight: 0.5 },
        ]),
        (l1 + l2 * 0.5, 0.86, vec![VertexWeight { joint: pip, weight: 1.0 }]),
        (l1 + l2, 0.78, vec![
            VertexWeight { joint: pip, weight: 0.5 },
            VertexWeight { joint: dip, weight: 0.5 },
        ]),
        (l1 + l2 + l3 * 0.55, 0.70, vec![VertexWeight { joint: dip, weight: 1.0 }]),
        (l1 + l2 + l3, 0.52, vec![VertexWeight { joint: dip, weight: 1.0 }]),
    ];

    // Orthonormal cross-section frame around the finger direction.
    let up = if spec.dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = spec.dir.cross(&up).normalize();
    let w = spec.dir.cross(&u).normalize();

    let mut rings: Vec<Vec<usize>> = Vec::new();
    for (dist, taper, wts) in &stations {
        let center = spec.base + spec.dir * *dist;
        let r = spec.radius * taper;
        let mut ring = Vec::with_capacity(SIDES);
        for k in 0..SIDES {
            let a = 2.0 * std::f64::consts::PI * k as f64 / SIDES as f64;
            ring.push(vertices.len());
            vertices.push(center + u * (r * a.cos()) + w * (r * a.sin()));
            weights.push(wts.clone());
        }
        rings.push(ring);
    }
    // Walls between consecutive rings.
    for pair in rings.windows(2) {
        let (r0, r1) = (&pair[0], &pair[1]);
        for k in 0..SIDES {
            let k1 = (k + 1) % SIDES;
            faces.push([r0[k], r1[k], r1[k1]]);
            faces.push([r0[k], r1[k1], r0[k1]]);
        }
    }
    // Base cap.
    let base_center = vertices.len();
    vertices.push(spec.base);
    weights.push(vec![VertexWeight { joint: mcp, weight: 1.0 }]);
    for k in 0..SIDES {
        faces.push([base_center, rings[0][(k + 1) % SIDES], rings[0][k]]);
    }
    // Tip cap; the center vertex is the fingertip landmark.
    let tip_center = vertices.len();
    vertices.push(spec.base + spec.dir * (l1 + l2 + l3 + spec.radius * 0.35));
    weights.push(vec![VertexWeight { joint: dip, weight: 1.0 }]);
    let last = rings.last().unwrap();
    for k in 0..SIDES {
        faces.push([tip_center, last[k], last[(k + 1) % SIDES]]);
    }
    tip_center
}

/// Articulation basis: vector 0 is the normalized whole-hand curl (every
/// finger joint flexing toward the palm, distal joints slightly less), the
/// remaining vectors are seeded random directions orthonormalized against
/// everything before them. The wrist block is identically zero: global
/// orientation belongs to the hand pose, not the latent space.
fn build_basis(specs: &[FingerSpec; 5], latent_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = JOINT_COUNT * 3;
    let mut curl = vec![0.0f64; dim];
    let palm_normal = Vec3::z();
    for (fi, spec) in specs.iter().enumerate() {
        // Flexion axis: perpendicular to the finger and the palm normal,
        // oriented so positive coefficients curl toward the palm (−z).
        let axis = spec.dir.cross(&palm_normal).normalize();
        for (si, strength) in [1.0, 0.85, 0.6].into_iter().enumerate() {
            let j = 1 + fi * 3 + si;
            curl[j * 3] = axis.x * strength;
            curl[j * 3 + 1] = axis.y * strength;
            curl[j * 3 + 2] = axis.z * strength;
        }
    }
    normalize(&mut curl);

    let mut basis = vec![curl];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while basis.len() < latent_dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Wrist rows stay zero.
        for c in v.iter_mut().take(3) {
            *c = 0.0;
        }
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= d * bi;
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue; // astronomically unlikely; resample
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        basis.push(v);
    }
    basis
}

fn normalize(v: &mut [f64]) {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(n > 0.0);
    for x in v.iter_mut() {
        *x /= n;
    }
}
