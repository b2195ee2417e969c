//! Procedural closed meshes used as fixtures and as a synthetic corpus.
//! All outputs are outward-facing with counter-clockwise winding.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::Mesh;
use crate::geom::Point3;

pub fn cube(origin: Point3, size: f64) -> Mesh {
    cuboid(origin, [size; 3])
}

pub fn cuboid(origin: Point3, size: Point3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            [
                origin[0] + size[0] * (i & 1) as f64,
                origin[1] + size[1] * ((i >> 1) & 1) as f64,
                origin[2] + size[2] * ((i >> 2) & 1) as f64,
            ]
        })
        .collect();
    let quads: [[usize; 4]; 6] = [
        [0, 2, 3, 1], // z = 0
        [4, 5, 7, 6], // z = 1
        [0, 1, 5, 4], // y = 0
        [2, 6, 7, 3], // y = 1
        [0, 4, 6, 2], // x = 0
        [1, 3, 7, 5], // x = 1
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh { vertices, faces }
}

/// Box whose six sides are each split into an `n x n` grid of quads
/// (`12 n^2` triangles).
pub fn grid_box(origin: Point3, size: Point3, n: usize) -> Mesh {
    let n = n.max(1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |l: [usize; 3], vertices: &mut Vec<Point3>| -> usize {
        *index.entry(l).or_insert_with(|| {
            vertices.push([
                origin[0] + size[0] * l[0] as f64 / n as f64,
                origin[1] + size[1] * l[1] as f64 / n as f64,
                origin[2] + size[2] * l[2] as f64 / n as f64,
            ]);
            vertices.len() - 1
        })
    };
    // (normal axis, side, u axis, v axis) chosen so u x v points outward
    let sides = [
        (2, 0, 1, 0),
        (2, n, 0, 1),
        (1, 0, 0, 2),
        (1, n, 2, 0),
        (0, 0, 2, 1),
        (0, n, 1, 2),
    ];
    for &(axis, level, u, v) in &sides {
        for i in 0..n {
            for j in 0..n {
                let mut corner = |di: usize, dj: usize| {
                    let mut l = [0; 3];
                    l[axis] = level;
                    l[u] = i + di;
                    l[v] = j + dj;
                    vid(l, &mut vertices)
                };
                let a = corner(0, 0);
                let b = corner(1, 0);
                let c = corner(1, 1);
                let d = corner(0, 1);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    Mesh { vertices, faces }
}

pub fn tetrahedron(origin: Point3, size: f64) -> Mesh {
    let o = origin;
    let vertices = vec![
        o,
        [o[0] + size, o[1], o[2]],
        [o[0], o[1] + size, o[2]],
        [o[0], o[1], o[2] + size],
    ];
    let faces = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    Mesh { vertices, faces }
}

/// Latitude/longitude sphere: `2 * segments * (rings - 1)` triangles.
pub fn uv_sphere(center: Point3, radius: f64, segments: usize, rings: usize) -> Mesh {
    let (segments, rings) = (segments.max(3), rings.max(2));
    let mut vertices = vec![[center[0], center[1] - radius, center[2]]];
    for r in 1..rings {
        let phi = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = 2.0 * PI * s as f64 / segments as f64;
            vertices.push([
                center[0] + radius * phi.sin() * theta.cos(),
                center[1] - radius * phi.cos(),
                center[2] - radius * phi.sin() * theta.sin(),
            ]);
        }
    }
    vertices.push([center[0], center[1] + radius, center[2]]);
    let top = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s + 1), ring(r + 1, s));
            faces.push([a, c, d]);
            faces.push([a, b, c]);
        }
    }
    for s in 0..segments {
        faces.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    Mesh { vertices, faces }
}

/// Torus around the y axis: `2 * major * minor` triangles.
pub fn torus(center: Point3, major_r: f64, minor_r: f64, major: usize, minor: usize) -> Mesh {
    let (major, minor) = (major.max(3), minor.max(3));
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = 2.0 * PI * i as f64 / major as f64;
        for j in 0..minor {
            let v = 2.0 * PI * j as f64 / minor as f64;
            let r = major_r + minor_r * v.cos();
            vertices.push([
                center[0] + r * u.cos(),
                center[1] + minor_r * v.sin(),
                center[2] + r * u.sin(),
            ]);
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + j % minor;
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, c, b]);
            faces.push([a, d, c]);
        }
    }
    Mesh { vertices, faces }
}

/// Closed cylinder along the x axis from `start` with the given length.
pub fn cylinder_x(start: Point3, radius: f64, length: f64, segments: usize, stacks: usize) -> Mesh {
    let (segments, stacks) = (segments.max(3), stacks.max(1));
    let mut vertices = Vec::new();
    for k in 0..=stacks {
        let x = start[0] + length * k as f64 / stacks as f64;
        for s in 0..segments {
            let t = 2.0 * PI * s as f64 / segments as f64;
            vertices.push([x, start[1] + radius * t.cos(), start[2] + radius * t.sin()]);
        }
    }
    let c0 = vertices.len();
    vertices.push(start);
    let c1 = vertices.len();
    vertices.push([start[0] + length, start[1], start[2]]);
    let id = |k: usize, s: usize| k * segments + s % segments;
    let mut faces = Vec::new();
    for k in 0..stacks {
        for s in 0..segments {
            let (a, b, c, d) = (id(k, s), id(k, s + 1), id(k + 1, s + 1), id(k + 1, s));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for s in 0..segments {
        faces.push([c0, id(0, s + 1), id(0, s)]);
        faces.push([c1, id(stacks, s), id(stacks, s + 1)]);
    }
    Mesh { vertices, faces }
}

/// A low-poly toy airplane (fuselage, wing, tail fin, stabilizer) of 212
/// triangles, around `[0, 1]^3`.
pub fn toy_airplane() -> Mesh {
    let fuselage = cylinder_x([0.0, 0.5, 0.5], 0.08, 1.0, 10, 6);
    let wing = grid_box([0.4, 0.49, 0.0], [0.22, 0.02, 1.0], 2);
    let fin = cuboid([0.02, 0.55, 0.49], [0.14, 0.25, 0.02]);
    let stab = cuboid([0.0, 0.5, 0.3], [0.12, 0.015, 0.4]);
    fuselage.merged(&wing).merged(&fin).merged(&stab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;

    fn signed_volume(m: &Mesh) -> f64 {
        m.faces
            .iter()
            .map(|f| {
                let [a, b, c] = [m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]];
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn primitives_are_closed_and_outward() {
        let cases = [
            ("cube", cube([0.3; 3], 2.0), 8.0),
            ("grid", grid_box([0.0; 3], [1.0, 2.0, 3.0], 3), 6.0),
            ("tet", tetrahedron([1.0; 3], 1.0), 1.0 / 6.0),
        ];
        for (name, m, vol) in cases {
            m.validate().unwrap();
            assert!((signed_volume(&m) - vol).abs() < 1e-9, "{name}");
        }
        for m in [
            uv_sphere([0.2; 3], 1.0, 16, 10),
            torus([0.0; 3], 1.0, 0.3, 12, 8),
            cylinder_x([0.0; 3], 0.5, 2.0, 9, 3),
        ] {
            m.validate().unwrap();
            assert!(signed_volume(&m) > 0.0);
            // every edge shared by exactly two faces
            let mut edges = HashMap::new();
            for f in &m.faces {
                for k in 0..3 {
                    *edges.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
                }
            }
            for (&(a, b), &n) in &edges {
                assert_eq!(n, 1);
                assert_eq!(edges.get(&(b, a)), Some(&1));
            }
        }
        assert_eq!(grid_box([0.0; 3], [1.0; 3], 4).faces.len(), 12 * 16);
        assert_eq!(grid_box([0.0; 3], [1.0; 3], 4).vertices.len(), 6 * 16 + 2);
        assert_eq!(toy_airplane().faces.len(), 212);
    }
}
