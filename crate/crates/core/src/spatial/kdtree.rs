use crate::geom::{self, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree over a point set.
///
/// Nearest queries return the exact minimum squared distance as computed by
/// [`geom::dist2`], with ties broken towards the lowest point index; the result
/// is therefore identical to a brute-force scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = geom::dist2(q, self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // left holds coordinates <= value, right holds >= value
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// All point indices with squared distance `<= r2`, ascending.
    pub fn within(&self, q: Point3, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, q, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    /// Early-exit form of [`within`](Self::within): true if any point other
    /// than `skip` within `r2` satisfies `pred`.
    pub fn any_within<F: Fn(usize) -> bool>(&self, q: Point3, r2: f64, skip: usize, pred: F) -> bool {
        !self.points.is_empty() && self.any_rec(0, q, r2, skip, &pred)
    }

    fn within_rec(&self, node: usize, q: Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if geom::dist2(q, self.points[i]) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, q, r2, out);
                }
            }
        }
    }

    fn any_rec<F: Fn(usize) -> bool>(&self, node: usize, q: Point3, r2: f64, skip: usize, pred: &F) -> bool {
        match self.nodes[node] {
            Node::Leaf { start, end } => self.order[start..end]
                .iter()
                .any(|&i| i != skip && geom::dist2(q, self.points[i]) <= r2 && pred(i)),
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                ((diff <= 0.0 || diff * diff <= r2) && self.any_rec(left, q, r2, skip, pred))
                    || ((diff >= 0.0 || diff * diff <= r2) && self.any_rec(right, q, r2, skip, pred))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(points: &[Point3], q: Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = geom::dist2(q, *p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn lattice_point() -> impl Strategy<Value = Point3> {
        // small lattice forces duplicate points and exact ties
        proptest::array::uniform3((0i32..5).prop_map(|v| v as f64 * 0.25))
    }

    proptest! {
        #[test]
        fn nearest_matches_brute_force(
            points in proptest::collection::vec(lattice_point(), 1..200),
            queries in proptest::collection::vec(lattice_point(), 1..40),
        ) {
            let tree = KdTree::new(&points);
            for q in queries {
                prop_assert_eq!(tree.nearest(q).unwrap(), brute_nearest(&points, q));
            }
        }

        #[test]
        fn within_matches_brute_force(
            points in proptest::collection::vec(proptest::array::uniform3(0.0f64..1.0), 1..300),
            q in proptest::array::uniform3(0.0f64..1.0),
            r in 0.0f64..0.5,
        ) {
            let tree = KdTree::new(&points);
            let expect: Vec<usize> = (0..points.len())
                .filter(|&i| geom::dist2(q, points[i]) <= r * r)
                .collect();
            prop_assert_eq!(tree.within(q, r * r), expect);
        }
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::new(&[]);
        assert_eq!(t.nearest([0.0; 3]), None);
        assert!(t.within([0.0; 3], 1.0).is_empty());
    }
}
