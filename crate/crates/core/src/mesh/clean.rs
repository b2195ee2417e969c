use std::collections::{HashMap, HashSet};

use super::{Mesh, UnionFind};
use crate::geom::{self, Point3};

/// Vertex merge distance in normalized (unit bbox) coordinates.
pub const DEFAULT_MERGE_EPSILON: f64 = 1e-6;

/// Relative area floor: a face is degenerate when twice its area is below
/// this fraction of its longest squared edge.
const DEGENERATE_RATIO: f64 = 1e-12;

/// Repairs a triangle soup into a mesh satisfying the cleaning invariants.
///
/// Steps, in order: merge vertices closer than `merge_epsilon` (transitively,
/// keeping the lowest-index position), drop faces that collapse or have zero
/// area, drop repeated faces (same unordered triple, first kept), drop faces
/// that would give an edge a third incident face (input order decides), and
/// finally compact away unreferenced vertices.
///
/// Vertex-level non-manifoldness (bow-ties) is left alone.
pub fn clean_mesh(mesh: &Mesh, merge_epsilon: f64) -> Mesh {
    let rep = merge_vertices(&mesh.vertices, merge_epsilon.max(0.0));

    let mut seen_faces = HashSet::new();
    let mut edge_use: HashMap<(usize, usize), u8> = HashMap::new();
    let mut kept = Vec::with_capacity(mesh.faces.len());
    for f in &mesh.faces {
        let t = [rep[f[0]], rep[f[1]], rep[f[2]]];
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        if is_degenerate(&mesh.vertices, t) {
            continue;
        }
        let mut key = t;
        key.sort_unstable();
        if !seen_faces.insert(key) {
            continue;
        }
        let edges = [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].map(|(a, b)| (a.min(b), a.max(b)));
        if edges
            .iter()
            .any(|e| edge_use.get(e).copied().unwrap_or(0) >= 2)
        {
            continue;
        }
        for e in edges {
            *edge_use.entry(e).or_insert(0) += 1;
        }
        kept.push(t);
    }

    let mut remap = vec![usize::MAX; mesh.vertices.len()];
    let mut used: Vec<usize> = kept.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let mut vertices = Vec::with_capacity(used.len());
    for v in used {
        remap[v] = vertices.len();
        vertices.push(mesh.vertices[v]);
    }
    let faces = kept
        .into_iter()
        .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
        .collect();
    Mesh { vertices, faces }
}

fn is_degenerate(vertices: &[Point3], t: [usize; 3]) -> bool {
    let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    let twice_area = geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)));
    let longest = geom::dist2(a, b).max(geom::dist2(b, c)).max(geom::dist2(c, a));
    !(twice_area > DEGENERATE_RATIO * longest)
}

/// Returns, for each vertex, the index of the lowest-index vertex in its
/// merge cluster.
fn merge_vertices(vertices: &[Point3], eps: f64) -> Vec<usize> {
    let n = vertices.len();
    let mut uf = UnionFind::new(n);
    if eps == 0.0 {
        let mut first: HashMap<[u64; 3], usize> = HashMap::new();
        for (i, p) in vertices.iter().enumerate() {
            // +0.0 and -0.0 must land in the same bucket
            let key = p.map(|c| (c + 0.0).to_bits());
            match first.get(&key) {
                Some(&j) => uf.union(i, j),
                None => {
                    first.insert(key, i);
                }
            }
        }
    } else {
        let cell = |p: &Point3| p.map(|c| (c / eps).floor() as i64);
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in vertices.iter().enumerate() {
            grid.entry(cell(p)).or_default().push(i);
        }
        let eps2 = eps * eps;
        for (i, p) in vertices.iter().enumerate() {
            let c = cell(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in bucket {
                                if j < i && geom::dist2(*p, vertices[j]) <= eps2 {
                                    uf.union(i, j);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (0..n).map(|i| uf.find(i)).collect()
}
