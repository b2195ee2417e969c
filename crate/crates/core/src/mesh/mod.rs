//! Indexed triangle meshes and everything that touches them directly.

mod clean;
mod obj;
pub mod primitives;

pub use clean::{clean_mesh, DEFAULT_MERGE_EPSILON};
pub use obj::{load_mesh, parse_obj, save_mesh, write_obj};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Aabb, Point3};
use crate::par::{self, ExecPolicy};
use crate::{Error, Result};

/// Triangle mesh with counter-clockwise winding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking that every index is in range and every face
    /// references three distinct vertices.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Mesh { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} repeats a vertex")));
            }
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_centroid(&self, f: usize) -> Point3 {
        let [a, b, c] = self.triangle(f);
        geom::centroid(a, b, c)
    }

    pub fn face_centroids(&self) -> Vec<Point3> {
        (0..self.faces.len()).map(|f| self.face_centroid(f)).collect()
    }

    /// Triangle area.
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)))
    }

    pub fn face_normal(&self, f: usize) -> Option<Point3> {
        let [a, b, c] = self.triangle(f);
        geom::normalize(geom::cross(geom::sub(b, a), geom::sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Bounding box of the referenced vertices (all vertices if none are
    /// referenced).
    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Bounding box of the vertices of the given faces.
    pub fn faces_bbox(&self, faces: &[usize]) -> Aabb {
        let mut b = Aabb::empty();
        for &f in faces {
            for v in self.faces[f] {
                b.grow(self.vertices[v]);
            }
        }
        b
    }

    /// Extracts the given faces into a compact mesh. Vertex order follows
    /// first use.
    pub fn submesh(&self, faces: &[usize]) -> Mesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut out = Vec::with_capacity(faces.len());
        for &f in faces {
            let mut tri = [0; 3];
            for (k, &v) in self.faces[f].iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(self.vertices[v]);
                }
                tri[k] = remap[v];
            }
            out.push(tri);
        }
        Mesh {
            vertices,
            faces: out,
        }
    }

    /// Concatenates two meshes without welding.
    pub fn merged(&self, other: &Mesh) -> Mesh {
        let off = self.vertices.len();
        let mut m = self.clone();
        m.vertices.extend_from_slice(&other.vertices);
        m.faces
            .extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        m
    }

    pub fn transformed<F: Fn(Point3) -> Point3>(&self, f: F) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Maps original coordinates into the normalized frame:
/// `normalized = original * scale + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub scale: f64,
    pub translation: Point3,
}

impl NormalizeTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        geom::add(geom::scale(p, self.scale), self.translation)
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        geom::scale(geom::sub(p, self.translation), 1.0 / self.scale)
    }
}

/// Scales the mesh uniformly so its longest bbox axis spans exactly [0, 1];
/// the shorter axes are centred at 0.5.
pub fn normalize_mesh(mesh: &Mesh) -> Result<(Mesh, NormalizeTransform)> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let bbox = mesh.faces_bbox(&(0..mesh.faces.len()).collect::<Vec<_>>());
    let (axis, extent) = bbox.longest_axis();
    if !(extent > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero extent".into()));
    }
    let scale = 1.0 / extent;
    let center = bbox.center();
    let translation = [
        0.5 - center[0] * scale,
        0.5 - center[1] * scale,
        0.5 - center[2] * scale,
    ];
    let t = NormalizeTransform { scale, translation };
    let mut out = mesh.transformed(|p| t.apply(p));
    // Pin the longest axis onto [0, 1] exactly.
    let (lo, hi) = (bbox.min[axis], bbox.max[axis]);
    for v in out.vertices.iter_mut().zip(mesh.vertices.iter()) {
        if v.1[axis] == lo {
            v.0[axis] = 0.0;
        } else if v.1[axis] == hi {
            v.0[axis] = 1.0;
        }
    }
    Ok((out, t))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Unions keeping the smaller index as root.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups faces connected through shared vertices. Components are ordered by
/// their smallest face index and each component's faces are ascending.
pub fn connected_components(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(mesh.vertices.len());
    for f in &mesh.faces {
        uf.union(f[0], f[1]);
        uf.union(f[1], f[2]);
    }
    let mut slot = vec![usize::MAX; mesh.vertices.len()];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for (i, f) in mesh.faces.iter().enumerate() {
        let r = uf.find(f[0]);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[slot[r]].push(i);
    }
    comps
}

/// Points sampled uniformly over a mesh surface, each carrying the unit normal
/// of the face it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSamples {
    pub points: Vec<Point3>,
    pub normals: Vec<Point3>,
    pub seed: u64,
    pub count: usize,
}

impl SurfaceSamples {
    pub fn from_points(points: Vec<Point3>, normals: Vec<Point3>) -> Self {
        let count = points.len();
        SurfaceSamples {
            points,
            normals,
            seed: 0,
            count,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> SurfaceSamples {
        SurfaceSamples {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
            seed: self.seed,
            count: idx.len(),
        }
    }
}

const SAMPLE_CHUNK: usize = 4096;

/// Area-weighted uniform surface sampling.
///
/// Samples are drawn in fixed-size chunks, each from its own ChaCha stream,
/// so the output depends only on `(mesh, count, seed)` and not on the
/// execution policy.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    sample_surface_with(mesh, count, seed, ExecPolicy::default())
}

pub fn sample_surface_with(
    mesh: &Mesh,
    count: usize,
    seed: u64,
    policy: ExecPolicy,
) -> Result<SurfaceSamples> {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::ZeroArea);
    }
    let normals: Vec<Point3> = (0..mesh.faces.len())
        .map(|f| mesh.face_normal(f).unwrap_or([0.0, 0.0, 1.0]))
        .collect();
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    let parts = par::map_range(policy, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let n = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
        let mut pts = Vec::with_capacity(n);
        let mut nrm = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen::<f64>() * acc;
            let f = cdf.partition_point(|&x| x <= r).min(cdf.len() - 1);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let [a, b, c] = mesh.triangle(f);
            let p = geom::add(
                a,
                geom::add(geom::scale(geom::sub(b, a), u), geom::scale(geom::sub(c, a), v)),
            );
            pts.push(p);
            nrm.push(normals[f]);
        }
        (pts, nrm)
    });
    let mut points = Vec::with_capacity(count);
    let mut out_normals = Vec::with_capacity(count);
    for (p, n) in parts {
        points.extend(p);
        out_normals.extend(n);
    }
    Ok(SurfaceSamples {
        points,
        normals: out_normals,
        seed,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::primitives;
    use super::*;

    #[test]
    fn normalize_unit_cube_is_identity() {
        let cube = primitives::cube([0.0; 3], 1.0);
        let (n, t) = normalize_mesh(&cube).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.translation, [0.0; 3]);
        assert_eq!(n, cube);
    }

    #[test]
    fn normalize_symmetric_box() {
        let cube = primitives::cube([-1.0; 3], 2.0);
        let (n, t) = normalize_mesh(&cube).unwrap();
        assert_eq!(t.scale, 0.5);
        assert_eq!(t.translation, [0.5; 3]);
        let b = n.bbox();
        assert_eq!(b.min, [0.0; 3]);
        assert_eq!(b.max, [1.0; 3]);
    }

    #[test]
    fn normalize_flat_mesh_centres_z() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 3.0], [2.0, 0.0, 3.0], [0.0, 1.0, 3.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (n, _) = normalize_mesh(&m).unwrap();
        assert!(n.vertices.iter().all(|v| (v[2] - 0.5).abs() < 1e-12));
        let b = n.bbox();
        assert_eq!((b.min[0], b.max[0]), (0.0, 1.0));
        assert!((b.min[1] - 0.25).abs() < 1e-12 && (b.max[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normalize_empty_errors() {
        assert!(matches!(normalize_mesh(&Mesh::default()), Err(Error::EmptyMesh)));
    }

    #[test]
    fn components_cases() {
        let tet = primitives::tetrahedron([0.0; 3], 1.0);
        assert_eq!(connected_components(&tet).len(), 1);
        let two = tet.merged(&primitives::tetrahedron([5.0, 0.0, 0.0], 1.0));
        let comps = connected_components(&two);
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.len() == 4));
        // bow-tie: two triangles sharing one vertex
        let bow = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, -1.0, 0.0],
            ],
            vec![[0, 1, 2], [0, 3, 4]],
        )
        .unwrap();
        assert_eq!(connected_components(&bow), vec![vec![0, 1]]);
    }

    #[test]
    fn sample_single_triangle() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = sample_surface(&m, 100, 7).unwrap();
        assert_eq!(s.points.len(), 100);
        for (p, n) in s.points.iter().zip(&s.normals) {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12 && p[2] == 0.0);
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn sample_is_deterministic_and_policy_independent() {
        let m = primitives::uv_sphere([0.5; 3], 0.5, 12, 8);
        let a = sample_surface_with(&m, 10_000, 3, ExecPolicy::Parallel).unwrap();
        let b = sample_surface_with(&m, 10_000, 3, ExecPolicy::Sequential).unwrap();
        assert_eq!(a, b);
        let c = sample_surface(&m, 10_000, 4).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn sample_two_equal_triangles_is_binomial() {
        // unit square as two equal-area triangles
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let n = 100_000;
        let s = sample_surface(&m, n, 11).unwrap();
        // face 0 is the half below the diagonal y < x
        let below = s.points.iter().filter(|p| p[1] < p[0]).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((below - n as f64 / 2.0).abs() < 3.0 * sigma, "{below}");
    }

    #[test]
    fn sample_zero_area_errors() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(sample_surface(&m, 10, 0), Err(Error::ZeroArea)));
    }

    #[test]
    fn normals_are_unit() {
        let m = primitives::torus([0.5; 3], 0.3, 0.1, 16, 8);
        let s = sample_surface(&m, 2000, 1).unwrap();
        assert!(s
            .normals
            .iter()
            .all(|n| (geom::norm(*n) - 1.0).abs() < 1e-6));
    }
}
