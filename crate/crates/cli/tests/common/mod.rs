//! Procedural test corpus shared by the integration and acceptance tests.
#![allow(dead_code)]

use patchgen::mesh::{primitives, Mesh};
use patchgen::preprocess::{filter_mesh, FilterParams};

fn radial(m: Mesh, center: [f64; 3], f: impl Fn([f64; 3]) -> f64) -> Mesh {
    m.transformed(|p| {
        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        let s = f(d);
        [center[0] + d[0] * s, center[1] + d[1] * s, center[2] + d[2] * s]
    })
}

fn merge(parts: &[Mesh]) -> Mesh {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out = out.merged(p);
    }
    out
}

/// At least twenty closed meshes between 500 and 32000 faces, some with
/// several components.
pub fn corpus() -> Vec<(String, Mesh)> {
    let o = [0.0; 3];
    let mut v: Vec<(String, Mesh)> = vec![
        ("sphere_960".into(), primitives::uv_sphere(o, 1.0, 30, 17)),
        ("sphere_4096".into(), primitives::uv_sphere(o, 1.0, 64, 33)),
        ("sphere_30000".into(), primitives::uv_sphere(o, 1.0, 150, 101)),
        ("torus_1280".into(), primitives::torus(o, 1.0, 0.35, 40, 16)),
        ("torus_4800".into(), primitives::torus(o, 1.0, 0.2, 80, 30)),
        ("torus_14400".into(), primitives::torus(o, 2.0, 0.5, 120, 60)),
        ("box_588".into(), primitives::grid_box(o, [1.0, 1.0, 1.0], 7)),
        ("box_4800".into(), primitives::grid_box(o, [2.0, 1.0, 0.5], 20)),
        ("slab_19200".into(), primitives::grid_box(o, [3.0, 0.2, 1.0], 40)),
        ("rod".into(), primitives::cylinder_x(o, 0.1, 2.0, 24, 30)),
        ("drum".into(), primitives::cylinder_x(o, 1.0, 0.5, 64, 6)),
    ];
    v.push((
        "sphere_torus".into(),
        merge(&[primitives::uv_sphere(o, 0.5, 30, 17), primitives::torus([0.0, -1.0, 0.0], 1.2, 0.2, 40, 16)]),
    ));
    v.push((
        "airplane_sphere".into(),
        merge(&[primitives::toy_airplane(), primitives::uv_sphere([0.5, -1.0, 0.5], 0.4, 30, 17)]),
    ));
    v.push((
        "three_boxes".into(),
        merge(&[
            primitives::grid_box(o, [1.0, 1.0, 1.0], 5),
            primitives::grid_box([1.5, 0.2, 0.0], [0.5, 0.5, 0.5], 5),
            primitives::grid_box([0.0, 1.5, 0.3], [0.7, 0.3, 0.4], 5),
        ]),
    ));
    v.push((
        "bumpy_sphere".into(),
        radial(primitives::uv_sphere(o, 1.0, 48, 25), o, |d| 1.0 + 0.08 * (7.0 * d[0]).sin() * (5.0 * d[1]).cos()),
    ));
    v.push((
        "ellipsoid".into(),
        primitives::uv_sphere(o, 1.0, 56, 29).transformed(|p| [2.0 * p[0], 0.6 * p[1], p[2]]),
    ));
    v.push((
        "twisted_torus".into(),
        primitives::torus(o, 1.0, 0.3, 96, 24).transformed(|p| {
            let a = 0.6 * p[1] + 0.3 * p[0];
            [p[0] * a.cos() - p[2] * a.sin(), p[1] + 0.2 * p[0].sin(), p[0] * a.sin() + p[2] * a.cos()]
        }),
    ));
    v.push((
        "sheared_box".into(),
        primitives::grid_box(o, [1.0, 1.0, 1.0], 12).transformed(|p| [p[0] + 0.4 * p[1], p[1], p[2] + 0.2 * p[0]]),
    ));
    v.push((
        "sphere_cluster".into(),
        merge(&[
            primitives::uv_sphere(o, 0.5, 20, 11),
            primitives::uv_sphere([1.2, 0.0, 0.0], 0.5, 20, 11),
            primitives::uv_sphere([0.0, 1.2, 0.0], 0.5, 20, 11),
            primitives::uv_sphere([0.0, 0.0, 1.2], 0.5, 20, 11),
        ]),
    ));
    v.push((
        "rod_and_boxes".into(),
        merge(&[
            primitives::cylinder_x([-1.0, 0.0, 0.0], 0.15, 2.0, 32, 20),
            primitives::grid_box([-1.4, -0.4, -0.4], [0.4, 0.8, 0.8], 6),
            primitives::grid_box([1.0, -0.4, -0.4], [0.4, 0.8, 0.8], 6),
        ]),
    ));
    v.push((
        "wavy_box".into(),
        primitives::grid_box(o, [2.0, 1.0, 1.0], 16).transformed(|p| [p[0], p[1] + 0.1 * (4.0 * p[0]).sin(), p[2]]),
    ));
    v.push((
        "bumpy_torus".into(),
        radial(primitives::torus(o, 1.0, 0.4, 72, 36), o, |d| 1.0 + 0.03 * (9.0 * d[2]).sin()),
    ));
    v
}

/// Corpus members accepted by the default dataset filter.
pub fn admissible_corpus() -> Vec<(String, Mesh)> {
    corpus()
        .into_iter()
        .filter(|(_, m)| filter_mesh(m, &FilterParams::default()).accepted)
        .collect()
}

/// A label per face: the octant of its centroid around the bbox center.
pub fn octant_labels(m: &Mesh) -> Vec<i64> {
    let bb = m.bbox();
    let c = [(bb.min[0] + bb.max[0]) / 2.0, (bb.min[1] + bb.max[1]) / 2.0, (bb.min[2] + bb.max[2]) / 2.0];
    (0..m.face_count())
        .map(|f| {
            let p = m.face_centroid(f);
            (0..3).map(|k| ((p[k] > c[k]) as i64) << k).sum()
        })
        .collect()
}
