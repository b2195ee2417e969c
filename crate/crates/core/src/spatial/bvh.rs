use crate::geom::{self, Aabb, Point3};
use crate::mesh::Mesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bbox: Aabb,
    // leaf: children == None, triangles = order[start..end]
    children: Option<(usize, usize)>,
    start: usize,
    end: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles for exact
/// point-to-surface distance queries.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Point3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(mesh: &Mesh) -> Self {
        let tris: Vec<[Point3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut bvh = TriangleBvh {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Point3> = bvh
                .tris
                .iter()
                .map(|t| geom::centroid(t[0], t[1], t[2]))
                .collect();
            bvh.build(0, bvh.tris.len(), &centroids);
        }
        bvh
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Point3]) -> usize {
        let mut bbox = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.tris[t] {
                bbox.grow(p);
            }
            cbox.grow(centroids[t]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bbox,
            children: None,
            start,
            end,
        });
        let (axis, spread) = cbox.longest_axis();
        if end - start <= LEAF_SIZE || spread == 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        let l = self.build(start, mid, centroids);
        let r = self.build(mid, end, centroids);
        self.nodes[id].children = Some((l, r));
        id
    }

    /// Squared distance from `q` to the closest point of the surface.
    pub fn distance2(&self, q: Point3) -> f64 {
        let mut best = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.query(0, q, &mut best);
        }
        best
    }

    fn query(&self, node: usize, q: Point3, best: &mut f64) {
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &t in &self.order[n.start..n.end] {
                    let [a, b, c] = self.tris[t];
                    let d = geom::dist2(q, closest_point_on_triangle(q, a, b, c));
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Some((l, r)) => {
                let dl = self.nodes[l].bbox.dist2(q);
                let dr = self.nodes[r].bbox.dist2(q);
                let (first, fd, second, sd) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
                if fd < *best {
                    self.query(first, q, best);
                }
                if sd < *best {
                    self.query(second, q, best);
                }
            }
        }
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region method).
pub fn closest_point_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    use geom::{add, dot, scale, sub};
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    if !denom.is_finite() {
        // degenerate triangle: fall back to the closest vertex
        return [a, b, c]
            .into_iter()
            .min_by(|x, y| geom::dist2(p, *x).total_cmp(&geom::dist2(p, *y)))
            .unwrap();
    }
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(geom::dist(closest_point_on_triangle([0.2, 0.2, 5.0], a, b, c), [0.2, 0.2, 0.0]) < 1e-15);
        assert_eq!(closest_point_on_triangle([-1.0, -1.0, 0.0], a, b, c), a);
        assert_eq!(closest_point_on_triangle([0.5, -2.0, 0.0], a, b, c), [0.5, 0.0, 0.0]);
        let p = closest_point_on_triangle([1.0, 1.0, 0.0], a, b, c);
        assert!(geom::dist(p, [0.5, 0.5, 0.0]) < 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let m = primitives::torus([0.5; 3], 0.3, 0.1, 20, 10);
        let bvh = TriangleBvh::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let brute = (0..m.faces.len())
                .map(|f| {
                    let [a, b, c] = m.triangle(f);
                    geom::dist2(q, closest_point_on_triangle(q, a, b, c))
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(bvh.distance2(q), brute);
        }
    }
}
