//! Indexed triangle meshes and minimal OBJ I/O (positions + faces only).

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{GeometryError, Pose, ScaledPose, Vec3};

/// Indexed triangle mesh. Faces are counter-clockwise when viewed from
/// outside; loaders drop zero-area faces so downstream code can assume
/// every face has a well-defined normal.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices and removes degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(GeometryError::InvalidMesh {
                        reason: format!(
                            "face {fi} references vertex {v} but mesh has {}",
                            vertices.len()
                        ),
                    });
                }
            }
        }
        let mut mesh = TriMesh { vertices, faces };
        mesh.faces.retain(|f| {
            let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
            (b - a).cross(&(c - a)).norm() > 1e-14
        });
        Ok(mesh)
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// AABB diagonal length; the "object diameter" used by metrics.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.aabb();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len().max(1) as f64
    }

    /// Unique undirected edges with their adjacent faces (at most two are
    /// tracked; a third adjacency marks the mesh non-manifold but is
    /// tolerated).
    pub fn edges(&self) -> Vec<MeshEdge> {
        let mut map: HashMap<(usize, usize), MeshEdge> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let e = map.entry(key).or_insert(MeshEdge {
                    v0: key.0,
                    v1: key.1,
                    face_a: fi,
                    face_b: None,
                });
                if e.face_a != fi && e.face_b.is_none() {
                    e.face_b = Some(fi);
                }
            }
        }
        let mut edges: Vec<MeshEdge> = map.into_values().collect();
        edges.sort_by_key(|e| (e.v0, e.v1));
        edges
    }

    /// Every edge has exactly two adjacent faces.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        self.edges().iter().all(|e| e.face_b.is_some())
    }

    /// Vertices mapped through a rigid pose.
    pub fn transformed(&self, pose: &Pose) -> Vec<Vec3> {
        self.vertices.iter().map(|v| pose.apply(v)).collect()
    }

    /// Vertices mapped through a similarity transform.
    pub fn transformed_scaled(&self, sp: &ScaledPose) -> Vec<Vec3> {
        self.vertices.iter().map(|v| sp.apply(v)).collect()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn merge(&mut self, other: &TriMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
}

/// Undirected mesh edge with up to two adjacent faces.
#[derive(Debug, Clone, Copy)]
pub struct MeshEdge {
    pub v0: usize,
    pub v1: usize,
    pub face_a: usize,
    pub face_b: Option<usize>,
}

/// Reads a Wavefront OBJ file; see [`parse_obj`].
pub fn load_obj(path: &Path) -> Result<TriMesh, GeometryError> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// Parses OBJ text, keeping only `v` and `f` records. Polygonal faces are
/// fan-triangulated; negative (relative) indices are supported.
pub fn parse_obj(text: &str) -> Result<TriMesh, GeometryError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tok = trimmed.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    *c = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| GeometryError::MalformedObj {
                            line: line_no,
                            reason: "vertex needs three numeric coordinates".into(),
                        })?;
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx: Vec<usize> = Vec::new();
                for t in tok {
                    // "i", "i/t", "i/t/n", "i//n" all start with the vertex index.
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| GeometryError::MalformedObj {
                        line: line_no,
                        reason: format!("bad face index {t:?}"),
                    })?;
                    let resolved = if i > 0 {
                        (i - 1) as usize
                    } else if i < 0 {
                        let n = vertices.len() as i64 + i;
                        if n < 0 {
                            return Err(GeometryError::MalformedObj {
                                line: line_no,
                                reason: format!("relative index {i} out of range"),
                            });
                        }
                        n as usize
                    } else {
                        return Err(GeometryError::MalformedObj {
                            line: line_no,
                            reason: "face index 0 is invalid".into(),
                        });
                    };
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(GeometryError::MalformedObj {
                        line: line_no,
                        reason: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {} // normals, texcoords, groups, materials: ignored
        }
    }
    TriMesh::new(vertices, faces)
}

/// Writes positions and faces. Floats use the shortest round-trip decimal
/// form, so writing is deterministic.
pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<(), GeometryError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(obj_to_string(mesh).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// OBJ text for a mesh; the exact bytes [`save_obj`] writes.
pub fn obj_to_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    s
}
