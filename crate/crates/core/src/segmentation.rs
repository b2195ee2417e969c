//! Partitioning a mesh into ordered patches.
//!
//! Three sources produce a [`Segmentation`]: farthest-point centers with a
//! nearest-center (Voronoi) face assignment, connected components, and an
//! external per-face label list. All are passed through
//! [`order_patches_bfs`], which fixes the generation order.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Aabb, Point3};
use crate::mesh::{connected_components, Mesh};
use crate::par::{self, ExecPolicy};
use crate::quantizer::PatchFrame;
use crate::{Error, Result};

/// Faces per patch at `lambda = 1`.
pub const FACES_PER_PATCH: f64 = 2000.0;
pub const LAMBDA_RANGE: (f64, f64) = (0.5, 2.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    X,
    #[default]
    Y,
    Z,
}

impl UpAxis {
    pub fn index(self) -> usize {
        match self {
            UpAxis::X => 0,
            UpAxis::Y => 1,
            UpAxis::Z => 2,
        }
    }
}

impl std::str::FromStr for UpAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(UpAxis::X),
            "y" | "Y" => Ok(UpAxis::Y),
            "z" | "Z" => Ok(UpAxis::Z),
            _ => Err(Error::InvalidArgument(format!("unknown axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationSource {
    RandomFps,
    ConnectedComponents,
    ExternalLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: usize,
    /// Ascending face indices into the segmented mesh.
    pub face_indices: Vec<usize>,
    /// Mean of member-face centroids.
    pub centroid: Point3,
    pub bbox: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub source: SegmentationSource,
    pub up_axis: UpAxis,
    /// Indexed by patch id.
    pub patches: Vec<Patch>,
    /// Generation order, a permutation of patch ids.
    pub order: Vec<usize>,
    /// Unordered pairs `(a, b)` with `a < b` of patches sharing a mesh edge.
    pub adjacency: Vec<(usize, usize)>,
    /// Per-patch quantization frames, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<PatchFrame>>,
}

impl Segmentation {
    /// Builds patches from face groups (each non-empty) with identity order.
    pub fn from_groups(
        mesh: &Mesh,
        groups: Vec<Vec<usize>>,
        source: SegmentationSource,
        up_axis: UpAxis,
    ) -> Segmentation {
        let patches: Vec<Patch> = groups
            .into_iter()
            .enumerate()
            .map(|(id, mut faces)| {
                faces.sort_unstable();
                let mut c = [0.0; 3];
                for &f in &faces {
                    c = geom::add(c, mesh.face_centroid(f));
                }
                Patch {
                    id,
                    centroid: geom::scale(c, 1.0 / faces.len() as f64),
                    bbox: mesh.faces_bbox(&faces),
                    face_indices: faces,
                }
            })
            .collect();
        let adjacency = patch_adjacency(mesh, &patches);
        Segmentation {
            source,
            up_axis,
            order: (0..patches.len()).collect(),
            patches,
            adjacency,
            frames: None,
        }
    }

    /// Patch id for every face.
    pub fn face_labels(&self, n_faces: usize) -> Vec<usize> {
        let mut labels = vec![usize::MAX; n_faces];
        for p in &self.patches {
            for &f in &p.face_indices {
                labels[f] = p.id;
            }
        }
        labels
    }

    /// Checks the partition and permutation invariants against `mesh`.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let mut seen = vec![false; mesh.faces.len()];
        for (i, p) in self.patches.iter().enumerate() {
            if p.id != i {
                return Err(Error::InvalidArgument(format!("patch {i} has id {}", p.id)));
            }
            if p.face_indices.is_empty() {
                return Err(Error::InvalidArgument(format!("patch {i} is empty")));
            }
            for &f in &p.face_indices {
                if f >= seen.len() || seen[f] {
                    return Err(Error::InvalidArgument(format!("face {f} repeated or invalid")));
                }
                seen[f] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("faces missing from segmentation".into()));
        }
        let mut o = self.order.clone();
        o.sort_unstable();
        if o != (0..self.patches.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("order is not a permutation".into()));
        }
        if self
            .adjacency
            .iter()
            .any(|&(a, b)| a >= b || b >= self.patches.len())
        {
            return Err(Error::InvalidArgument("bad adjacency pair".into()));
        }
        Ok(())
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn patch_adjacency(mesh: &Mesh, patches: &[Patch]) -> Vec<(usize, usize)> {
    let mut label = vec![usize::MAX; mesh.faces.len()];
    for p in patches {
        for &f in &p.face_indices {
            label[f] = p.id;
        }
    }
    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs = BTreeSet::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if label[fi] == usize::MAX {
            continue;
        }
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let e = (a.min(b), a.max(b));
            match edge_owner.get(&e) {
                Some(&other) if other != label[fi] => {
                    let (x, y) = (other.min(label[fi]), other.max(label[fi]));
                    pairs.insert((x, y));
                }
                Some(_) => {}
                None => {
                    edge_owner.insert(e, label[fi]);
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Number of patches for a mesh of `n_faces`:
/// `max(1, round(n_faces / 2000 * lambda))`, rounding half away from zero.
pub fn patch_count(n_faces: usize, lambda: f64) -> Result<usize> {
    if n_faces == 0 {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    if !(LAMBDA_RANGE.0..=LAMBDA_RANGE.1).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda {lambda} outside [{}, {}]",
            LAMBDA_RANGE.0, LAMBDA_RANGE.1
        )));
    }
    Ok(((n_faces as f64 / FACES_PER_PATCH * lambda).round() as usize).max(1))
}

/// Farthest point sampling with a seeded uniformly random start.
pub fn farthest_point_sample(points: &[Point3], k: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to sample".into()));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..points.len());
    farthest_point_sample_from(points, k, start)
}

/// Farthest point sampling from a fixed start index. Each step picks the point
/// maximizing the distance to the selected set; ties go to the lowest index.
pub fn farthest_point_sample_from(points: &[Point3], k: usize, start: usize) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {k} of {} points",
            points.len()
        )));
    }
    if start >= points.len() {
        return Err(Error::InvalidArgument(format!("start {start} out of range")));
    }
    let mut picked = vec![start];
    let mut mind: Vec<f64> = points.iter().map(|p| geom::dist2(*p, points[start])).collect();
    while picked.len() < k {
        let mut best = 0;
        for i in 1..points.len() {
            if mind[i] > mind[best] {
                best = i;
            }
        }
        picked.push(best);
        let c = points[best];
        for (m, p) in mind.iter_mut().zip(points) {
            let d = geom::dist2(*p, c);
            if d < *m {
                *m = d;
            }
        }
    }
    Ok(picked)
}

/// Index of the nearest center (lowest index on ties).
fn nearest_center(p: Point3, centers: &[Point3]) -> usize {
    let mut best = 0;
    let mut bd = geom::dist2(p, centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = geom::dist2(p, *c);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Assigns every face to its nearest center by face centroid. Centers that
/// receive no face are dropped; patch ids follow center order.
pub fn voronoi_partition(mesh: &Mesh, centers: &[Point3]) -> Result<Segmentation> {
    voronoi_partition_with(mesh, centers, UpAxis::default(), ExecPolicy::default())
}

pub fn voronoi_partition_with(
    mesh: &Mesh,
    centers: &[Point3],
    up_axis: UpAxis,
    policy: ExecPolicy,
) -> Result<Segmentation> {
    if centers.is_empty() {
        return Err(Error::InvalidArgument("need at least one center".into()));
    }
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let assign = par::map_range(policy, mesh.faces.len(), |f| {
        nearest_center(mesh.face_centroid(f), centers)
    });
    let mut groups = vec![Vec::new(); centers.len()];
    for (f, c) in assign.into_iter().enumerate() {
        groups[c].push(f);
    }
    groups.retain(|g| !g.is_empty());
    Ok(Segmentation::from_groups(
        mesh,
        groups,
        SegmentationSource::RandomFps,
        up_axis,
    ))
}

/// Breadth-first generation order starting from the patch lowest along
/// `up_axis`. Neighbours are enqueued nearest-centroid first; disconnected
/// parts restart from their lowest unvisited patch.
pub fn order_patches_bfs(mut seg: Segmentation, up_axis: UpAxis) -> Segmentation {
    let n = seg.patches.len();
    let ax = up_axis.index();
    let mut nbrs = vec![Vec::new(); n];
    for &(a, b) in &seg.adjacency {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| {
        seg.patches[a].centroid[ax]
            .total_cmp(&seg.patches[b].centroid[ax])
            .then(a.cmp(&b))
    });
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for &root in &by_height {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(cur) = queue.pop_front() {
            order.push(cur);
            let c = seg.patches[cur].centroid;
            let mut next: Vec<(f64, usize)> = nbrs[cur]
                .iter()
                .filter(|&&q| !visited[q])
                .map(|&q| (geom::dist2(c, seg.patches[q].centroid), q))
                .collect();
            next.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, q) in next {
                visited[q] = true;
                queue.push_back(q);
            }
        }
    }
    seg.order = order;
    seg.up_axis = up_axis;
    seg
}

/// Farthest-point centers over mesh vertices, Voronoi assignment, BFS order.
pub fn segment_random_fps(
    mesh: &Mesh,
    n_patches: usize,
    seed: u64,
    up_axis: UpAxis,
) -> Result<Segmentation> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let k = n_patches.clamp(1, mesh.vertices.len());
    let idx = farthest_point_sample(&mesh.vertices, k, seed)?;
    let centers: Vec<Point3> = idx.iter().map(|&i| mesh.vertices[i]).collect();
    let seg = voronoi_partition_with(mesh, &centers, up_axis, ExecPolicy::default())?;
    Ok(order_patches_bfs(seg, up_axis))
}

/// Draws `lambda` uniformly from [0.5, 2.5] for training-time segmentation.
pub fn random_lambda(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a3b_da00);
    rng.gen_range(LAMBDA_RANGE.0..=LAMBDA_RANGE.1)
}

/// One patch per connected component, BFS ordered.
pub fn components_as_segmentation(mesh: &Mesh, up_axis: UpAxis) -> Result<Segmentation> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let seg = Segmentation::from_groups(
        mesh,
        connected_components(mesh),
        SegmentationSource::ConnectedComponents,
        up_axis,
    );
    Ok(order_patches_bfs(seg, up_axis))
}

/// One patch per distinct label (ascending label value), BFS ordered.
pub fn labels_as_segmentation(mesh: &Mesh, labels: &[i64], up_axis: UpAxis) -> Result<Segmentation> {
    if labels.len() != mesh.faces.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} faces",
            labels.len(),
            mesh.faces.len()
        )));
    }
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (f, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(f);
    }
    let seg = Segmentation::from_groups(
        mesh,
        classes.into_values().collect(),
        SegmentationSource::ExternalLabels,
        up_axis,
    );
    Ok(order_patches_bfs(seg, up_axis))
}

/// Reads a label file: one integer per line, line `i` labels face `i`.
/// Blank lines are ignored.
pub fn read_label_file<P: AsRef<Path>>(path: P) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        out.push(s.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad label {s:?}"),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn patch_count_examples() {
        assert_eq!(patch_count(8000, 1.0).unwrap(), 4);
        assert_eq!(patch_count(2000, 0.5).unwrap(), 1);
        assert_eq!(patch_count(30000, 2.5).unwrap(), 38);
        assert_eq!(patch_count(10, 0.5).unwrap(), 1);
        assert!(patch_count(8000, 0.49).is_err());
        assert!(patch_count(8000, 2.51).is_err());
        assert!(patch_count(0, 1.0).is_err());
    }

    #[test]
    fn fps_collinear() {
        let pts: Vec<Point3> = (0..=10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sample_from(&pts, 3, 0).unwrap(), vec![0, 10, 5]);
        assert_eq!(farthest_point_sample_from(&pts, 1, 4).unwrap(), vec![4]);
        let mut all = farthest_point_sample(&pts, 11, 9).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..=10).collect::<Vec<_>>());
        assert!(farthest_point_sample(&pts, 12, 0).is_err());
        let s = farthest_point_sample(&pts, 1, 42).unwrap();
        assert_eq!(s, farthest_point_sample(&pts, 1, 42).unwrap());
    }

    /// Brute force: recompute min distance to the selected set from scratch
    /// for every candidate at every step.
    #[test]
    fn fps_matches_brute_force() {
        let mesh = primitives::uv_sphere([0.0; 3], 1.0, 10, 7);
        let pts = &mesh.vertices;
        let fast = farthest_point_sample_from(pts, 12, 3).unwrap();
        let mut sel = vec![3usize];
        while sel.len() < 12 {
            let score = |i: usize| {
                sel.iter()
                    .map(|&s| geom::dist2(pts[i], pts[s]))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut best = 0;
            for i in 1..pts.len() {
                if score(i) > score(best) {
                    best = i;
                }
            }
            sel.push(best);
        }
        assert_eq!(fast, sel);
    }

    #[test]
    fn voronoi_single_center() {
        let m = primitives::uv_sphere([0.0; 3], 1.0, 8, 6);
        let seg = voronoi_partition(&m, &[[0.0; 3]]).unwrap();
        assert_eq!(seg.patches.len(), 1);
        assert_eq!(seg.patches[0].face_indices.len(), m.faces.len());
    }

    #[test]
    fn voronoi_mirrored_centers_split_evenly() {
        let m = primitives::grid_box([-1.0; 3], [2.0; 3], 4);
        let seg = voronoi_partition(&m, &[[-0.5, 0.13, 0.07], [0.5, 0.13, 0.07]]).unwrap();
        assert_eq!(seg.patches.len(), 2);
        assert_eq!(seg.patches[0].face_indices.len(), seg.patches[1].face_indices.len());
        assert_eq!(seg.adjacency, vec![(0, 1)]);
    }

    #[test]
    fn voronoi_drops_empty_centers() {
        let m = primitives::cube([0.0; 3], 1.0);
        let seg = voronoi_partition(&m, &[[0.5, 0.5, -0.1], [100.0, 0.0, 0.0]]).unwrap();
        assert_eq!(seg.patches.len(), 1);
        seg.validate(&m).unwrap();
    }

    fn chain_segmentation() -> Segmentation {
        // three patches in a row along y, A lowest
        let mk = |id: usize, y: f64| Patch {
            id,
            face_indices: vec![id],
            centroid: [0.0, y, 0.0],
            bbox: Aabb::empty(),
        };
        Segmentation {
            source: SegmentationSource::ExternalLabels,
            up_axis: UpAxis::Y,
            patches: vec![mk(0, 1.0), mk(1, 0.0), mk(2, 2.0)],
            order: vec![0, 1, 2],
            adjacency: vec![(0, 1), (0, 2)],
            frames: None,
        }
    }

    #[test]
    fn bfs_chain() {
        let seg = order_patches_bfs(chain_segmentation(), UpAxis::Y);
        assert_eq!(seg.order, vec![1, 0, 2]);
    }

    #[test]
    fn bfs_single_and_disconnected() {
        let mut s = chain_segmentation();
        s.patches.truncate(1);
        s.adjacency.clear();
        assert_eq!(order_patches_bfs(s, UpAxis::Y).order, vec![0]);

        // two clusters: {0,1} low, {2,3} high, no edges between them
        let mk = |id: usize, y: f64| Patch {
            id,
            face_indices: vec![id],
            centroid: [id as f64, y, 0.0],
            bbox: Aabb::empty(),
        };
        let s = Segmentation {
            source: SegmentationSource::ExternalLabels,
            up_axis: UpAxis::Y,
            patches: vec![mk(0, 5.0), mk(1, 0.0), mk(2, 10.0), mk(3, 6.0)],
            order: vec![0, 1, 2, 3],
            adjacency: vec![(0, 1), (2, 3)],
            frames: None,
        };
        let o = order_patches_bfs(s.clone(), UpAxis::Y).order;
        assert_eq!(o, vec![1, 0, 3, 2]);
        // brute-force oracle: every prefix of the order is closed under
        // adjacency within the first component before the second starts
        let comp = |p: usize| if p < 2 { 0 } else { 1 };
        let first = comp(o[0]);
        let split = o.iter().position(|&p| comp(p) != first).unwrap();
        assert!(o[..split].iter().all(|&p| comp(p) == first));
        assert!(o[split..].iter().all(|&p| comp(p) != first));
    }

    #[test]
    fn components_segmentation_orders_stack() {
        let m = primitives::cube([0.0, 4.0, 0.0], 1.0)
            .merged(&primitives::cube([0.0, 0.0, 0.0], 1.0))
            .merged(&primitives::cube([0.0, 2.0, 0.0], 1.0));
        let seg = components_as_segmentation(&m, UpAxis::Y).unwrap();
        seg.validate(&m).unwrap();
        assert_eq!(seg.patches.len(), 3);
        let ys: Vec<f64> = seg.order.iter().map(|&p| seg.patches[p].centroid[1]).collect();
        assert_eq!(ys, vec![0.5, 2.5, 4.5]);
        let tets = primitives::tetrahedron([0.0; 3], 1.0)
            .merged(&primitives::tetrahedron([3.0, 0.0, 0.0], 1.0));
        assert_eq!(components_as_segmentation(&tets, UpAxis::Y).unwrap().patches.len(), 2);
        let single = primitives::torus([0.0; 3], 1.0, 0.2, 8, 5);
        assert_eq!(components_as_segmentation(&single, UpAxis::Y).unwrap().patches.len(), 1);
    }

    #[test]
    fn labels_segmentation() {
        let m = primitives::grid_box([0.0; 3], [1.0; 3], 2);
        let n = m.faces.len();
        let s = labels_as_segmentation(&m, &vec![0; n], UpAxis::Y).unwrap();
        assert_eq!(s.patches.len(), 1);
        let distinct: Vec<i64> = (0..n as i64).collect();
        assert_eq!(labels_as_segmentation(&m, &distinct, UpAxis::Y).unwrap().patches.len(), n);
        assert!(labels_as_segmentation(&m, &[0, 1], UpAxis::Y).is_err());
        // class-partition oracle
        let labels: Vec<i64> = (0..n).map(|f| [7, -2, 40][f % 3]).collect();
        let s = labels_as_segmentation(&m, &labels, UpAxis::Y).unwrap();
        s.validate(&m).unwrap();
        assert_eq!(s.patches.len(), 3);
        for p in &s.patches {
            let l = labels[p.face_indices[0]];
            let expect: Vec<usize> = (0..n).filter(|&f| labels[f] == l).collect();
            assert_eq!(p.face_indices, expect);
        }
    }

    #[test]
    fn label_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        std::fs::write(&p, "0\n1\n\n-3\n").unwrap();
        assert_eq!(read_label_file(&p).unwrap(), vec![0, 1, -3]);
        std::fs::write(&p, "0\nx\n").unwrap();
        assert!(matches!(read_label_file(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn manifest_roundtrip() {
        let m = primitives::torus([0.5; 3], 0.3, 0.1, 24, 12);
        let seg = segment_random_fps(&m, 5, 3, UpAxis::Y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seg.json");
        seg.save_json(&p).unwrap();
        assert_eq!(Segmentation::load_json(&p).unwrap(), seg);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["source"], "random_fps");
        assert_eq!(v["up_axis"], "y");
        assert!(v["patches"][0]["face_indices"].is_array());
    }
}
