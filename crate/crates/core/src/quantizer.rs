//! Per-patch normalization, integer quantization and the token stream codec.
//!
//! Vocabulary for resolution `Q`: ids `0..Q` are coordinate values, `Q` is the
//! terminator, `Q + 1` begins a patch body and `Q + 2` pads. With the default
//! `Q = 512` that gives a 515-entry vocabulary.
//!
//! A patch body is `BOS, (x y z) x 3 per face, TERM`. Faces are written in
//! canonical order: each face rotated so its smallest vertex under the
//! `(z, y, x)` ordering comes first, faces sorted by those keys.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Point3};
use crate::mesh::Mesh;
use crate::{Error, Result};

pub const DEFAULT_RESOLUTION: u32 = 512;
/// Allowed slack, in object-space units, for positions on the frame border.
pub const FRAME_TOLERANCE: f64 = 1e-9;
const MIN_EXTENT: f64 = 1e-9;

pub type Token = u32;
/// Integer grid coordinate of one vertex.
pub type QVertex = [u32; 3];
pub type QFace = [QVertex; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub resolution: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl Vocab {
    pub fn new(resolution: u32) -> Self {
        Vocab { resolution }
    }
    pub fn term(&self) -> Token {
        self.resolution
    }
    pub fn bos(&self) -> Token {
        self.resolution + 1
    }
    pub fn pad(&self) -> Token {
        self.resolution + 2
    }
    pub fn size(&self) -> usize {
        self.resolution as usize + 3
    }
    pub fn is_coord(&self, t: Token) -> bool {
        t < self.resolution
    }
}

/// Uniform-scale frame mapping a patch's bounding cube onto `[0, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFrame {
    pub origin: Point3,
    pub extent: f64,
    pub resolution: u32,
}

impl PatchFrame {
    pub fn new(origin: Point3, extent: f64, resolution: u32) -> Result<Self> {
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::InvalidArgument(format!("frame extent {extent} must be > 0")));
        }
        if resolution < 2 {
            return Err(Error::InvalidArgument("resolution must be at least 2".into()));
        }
        Ok(PatchFrame {
            origin,
            extent,
            resolution,
        })
    }

    /// Frame covering a bounding box: origin at its min corner, extent its
    /// longest side.
    pub fn from_bbox(bbox: &Aabb, resolution: u32) -> Result<Self> {
        if bbox.is_empty() {
            return Err(Error::InvalidArgument("empty patch".into()));
        }
        let (_, longest) = bbox.longest_axis();
        PatchFrame::new(bbox.min, longest.max(MIN_EXTENT), resolution)
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.resolution)
    }

    /// Side length of one quantization cell.
    pub fn cell(&self) -> f64 {
        self.extent / (self.resolution - 1) as f64
    }

    /// Maps a position into frame-normalized `[0, 1]^3` coordinates.
    pub fn to_unit(&self, p: Point3) -> Point3 {
        [
            (p[0] - self.origin[0]) / self.extent,
            (p[1] - self.origin[1]) / self.extent,
            (p[2] - self.origin[2]) / self.extent,
        ]
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|k| {
            p[k] >= self.origin[k] - FRAME_TOLERANCE
                && p[k] <= self.origin[k] + self.extent + FRAME_TOLERANCE
        })
    }
}

/// Frame for a patch given as faces of `mesh`, widened by `extra_faces` (the
/// boundary condition) so their coordinates quantize in range too.
pub fn compute_frame(
    mesh: &Mesh,
    patch_faces: &[usize],
    extra_faces: &[usize],
    resolution: u32,
) -> Result<PatchFrame> {
    if patch_faces.is_empty() {
        return Err(Error::InvalidArgument("empty patch".into()));
    }
    let bbox = mesh.faces_bbox(patch_faces).union(&mesh.faces_bbox(extra_faces));
    PatchFrame::from_bbox(&bbox, resolution)
}

/// Frame over explicit point sets, used when the patch and its boundary
/// faces live in different meshes.
pub fn compute_frame_from_points<'a, I>(points: I, resolution: u32) -> Result<PatchFrame>
where
    I: IntoIterator<Item = &'a Point3>,
{
    PatchFrame::from_bbox(&Aabb::from_points(points), resolution)
}

pub fn quantize_position(p: Point3, frame: &PatchFrame) -> Result<QVertex> {
    if !frame.contains(p) {
        return Err(Error::OutOfFrame { position: p });
    }
    let top = (frame.resolution - 1) as f64;
    let u = frame.to_unit(p);
    Ok(u.map(|c| (c * top).round().clamp(0.0, top) as u32))
}

pub fn quantize_positions(positions: &[Point3], frame: &PatchFrame) -> Result<Vec<QVertex>> {
    positions.iter().map(|&p| quantize_position(p, frame)).collect()
}

pub fn dequantize_index(q: QVertex, frame: &PatchFrame) -> Result<Point3> {
    let top = frame.resolution - 1;
    if q.iter().any(|&c| c > top) {
        return Err(Error::InvalidArgument(format!(
            "grid index {q:?} outside 0..={top}"
        )));
    }
    let top = top as f64;
    Ok([
        frame.origin[0] + (q[0] as f64 / top) * frame.extent,
        frame.origin[1] + (q[1] as f64 / top) * frame.extent,
        frame.origin[2] + (q[2] as f64 / top) * frame.extent,
    ])
}

pub fn dequantize_indices(indices: &[QVertex], frame: &PatchFrame) -> Result<Vec<Point3>> {
    indices.iter().map(|&q| dequantize_index(q, frame)).collect()
}

#[inline]
fn zyx(v: QVertex) -> [u32; 3] {
    [v[2], v[1], v[0]]
}

fn face_key(f: &QFace) -> [u32; 9] {
    let (a, b, c) = (zyx(f[0]), zyx(f[1]), zyx(f[2]));
    [a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2]]
}

/// Rotates a face cyclically (winding preserved) so its `(z, y, x)`-smallest
/// vertex leads.
pub fn canonical_face(f: QFace) -> QFace {
    let mut lead = 0;
    for k in 1..3 {
        if zyx(f[k]) < zyx(f[lead]) {
            lead = k;
        }
    }
    [f[lead], f[(lead + 1) % 3], f[(lead + 2) % 3]]
}

pub fn canonicalize_faces(faces: &[QFace]) -> Vec<QFace> {
    let mut out: Vec<QFace> = faces.iter().map(|&f| canonical_face(f)).collect();
    out.sort_by_key(face_key);
    out.dedup();
    out
}

/// A patch's faces on the integer grid of its frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedPatch {
    pub frame: PatchFrame,
    pub faces: Vec<QFace>,
}

impl QuantizedPatch {
    /// Quantizes (and canonicalizes) faces of `mesh` in `frame`.
    pub fn from_mesh_faces(mesh: &Mesh, faces: &[usize], frame: PatchFrame) -> Result<Self> {
        let mut q = Vec::with_capacity(faces.len());
        for &f in faces {
            let [a, b, c] = mesh.triangle(f);
            q.push([
                quantize_position(a, &frame)?,
                quantize_position(b, &frame)?,
                quantize_position(c, &frame)?,
            ]);
        }
        Ok(QuantizedPatch {
            frame,
            faces: canonicalize_faces(&q),
        })
    }

    /// Welds exactly equal grid vertices into shared indices. Vertices are
    /// numbered by first appearance.
    pub fn to_indexed(&self) -> (Vec<QVertex>, Vec<[usize; 3]>) {
        let mut ids: HashMap<QVertex, usize> = HashMap::new();
        let mut verts = Vec::new();
        let faces = self
            .faces
            .iter()
            .map(|f| {
                f.map(|v| {
                    *ids.entry(v).or_insert_with(|| {
                        verts.push(v);
                        verts.len() - 1
                    })
                })
            })
            .collect();
        (verts, faces)
    }

    /// Dequantized positions and welded faces. Faces that collapsed to a
    /// repeated vertex on the grid are dropped.
    pub fn to_positions(&self) -> (Vec<Point3>, Vec<[usize; 3]>) {
        let (verts, faces) = self.to_indexed();
        let positions = verts
            .iter()
            .map(|&v| dequantize_index(v, &self.frame).expect("grid vertex in range"))
            .collect();
        let faces = faces
            .into_iter()
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        (positions, faces)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSequence { tokens }
    }
    pub fn len(&self) -> usize {
        self.tokens.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn push_face_tokens(out: &mut Vec<Token>, f: &QFace) {
    for v in f {
        out.extend_from_slice(v);
    }
}

/// `[BOS] ++ 9 coordinate tokens per face ++ [TERM]`.
pub fn tokenize_patch(qp: &QuantizedPatch) -> TokenSequence {
    let vocab = qp.frame.vocab();
    let mut t = Vec::with_capacity(2 + 9 * qp.faces.len());
    t.push(vocab.bos());
    for f in &qp.faces {
        push_face_tokens(&mut t, f);
    }
    t.push(vocab.term());
    TokenSequence::new(t)
}

/// Prefix form used for boundary conditions: no BOS, just faces and TERM.
pub fn tokenize_faces_prefix(faces: &[QFace], vocab: Vocab) -> TokenSequence {
    let mut t = Vec::with_capacity(1 + 9 * faces.len());
    for f in faces {
        push_face_tokens(&mut t, f);
    }
    t.push(vocab.term());
    TokenSequence::new(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Tokens that did not end up in a face.
    pub discarded_tokens: usize,
    pub faces_parsed: usize,
    /// Whether a TERM token ended the body.
    pub terminated: bool,
}

/// Parses a (possibly malformed) patch body.
///
/// An optional leading BOS is skipped; coordinates are grouped greedily in
/// nines until TERM or end of input. Stray control or out-of-vocabulary tokens
/// discard the group in progress. Never fails.
pub fn detokenize_patch(ts: &TokenSequence, frame: PatchFrame) -> (QuantizedPatch, ParseDiagnostics) {
    let vocab = frame.vocab();
    let mut diag = ParseDiagnostics::default();
    let mut faces = Vec::new();
    let mut group: Vec<u32> = Vec::with_capacity(9);
    let body = match ts.tokens.first() {
        Some(&t) if t == vocab.bos() => &ts.tokens[1..],
        _ => &ts.tokens[..],
    };
    for &t in body {
        if t == vocab.term() {
            diag.terminated = true;
            break;
        }
        if vocab.is_coord(t) {
            group.push(t);
            if group.len() == 9 {
                let g = &group;
                faces.push([[g[0], g[1], g[2]], [g[3], g[4], g[5]], [g[6], g[7], g[8]]]);
                group.clear();
            }
        } else {
            diag.discarded_tokens += group.len() + 1;
            group.clear();
        }
    }
    diag.discarded_tokens += group.len();
    if diag.discarded_tokens > 0 {
        log::debug!("detokenize: discarded {} tokens", diag.discarded_tokens);
    }
    diag.faces_parsed = faces.len();
    (
        QuantizedPatch {
            frame,
            faces: canonicalize_faces(&faces),
        },
        diag,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_frame() -> PatchFrame {
        PatchFrame::new([0.0; 3], 1.0, 512).unwrap()
    }

    #[test]
    fn frame_from_patch_and_extras() {
        let m = Mesh {
            vertices: vec![
                [0.2, 0.2, 0.2],
                [0.7, 0.2, 0.2],
                [0.2, 0.7, 0.7],
                [0.9, 0.5, 0.5],
            ],
            faces: vec![[0, 1, 2], [1, 3, 2]],
        };
        let f = compute_frame(&m, &[0], &[], 512).unwrap();
        assert_eq!(f.origin, [0.2; 3]);
        assert!((f.extent - 0.5).abs() < 1e-15);
        let f = compute_frame(&m, &[0], &[1], 512).unwrap();
        assert!((f.extent - 0.7).abs() < 1e-15);
        assert!(compute_frame(&m, &[], &[1], 512).is_err());
        let cube = crate::mesh::primitives::cube([0.0; 3], 1.0);
        let f = compute_frame(&cube, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], &[], 512).unwrap();
        assert_eq!((f.origin, f.extent), ([0.0; 3], 1.0));
    }

    #[test]
    fn quantize_endpoints_and_midpoint() {
        let f = PatchFrame::new([0.2, -1.0, 3.0], 0.5, 512).unwrap();
        assert_eq!(quantize_position(f.origin, &f).unwrap(), [0, 0, 0]);
        let far = [0.7, -0.5, 3.5];
        assert_eq!(quantize_position(far, &f).unwrap(), [511, 511, 511]);
        let u = unit_frame();
        assert_eq!(quantize_position([0.5, 0.5, 0.5], &u).unwrap(), [256; 3]);
    }

    #[test]
    fn out_of_frame_rejected() {
        let u = unit_frame();
        assert!(quantize_position([1.0 + 5e-10, 0.0, 0.0], &u).is_ok());
        assert!(matches!(
            quantize_position([1.0 + 1e-6, 0.0, 0.0], &u),
            Err(Error::OutOfFrame { .. })
        ));
        assert!(dequantize_index([512, 0, 0], &u).is_err());
    }

    #[test]
    fn dequantize_endpoints_exact() {
        let f = PatchFrame::new([0.25, 0.5, -2.0], 0.3, 512).unwrap();
        assert_eq!(dequantize_index([0, 0, 0], &f).unwrap(), f.origin);
        assert_eq!(
            dequantize_index([511, 511, 511], &f).unwrap(),
            [0.25 + 0.3, 0.5 + 0.3, -2.0 + 0.3]
        );
    }

    #[test]
    fn grid_fixed_points_exhaustive() {
        for frame in [unit_frame(), PatchFrame::new([0.123, -7.5, 1e3], 0.0371, 512).unwrap()] {
            for i in 0..512u32 {
                let q = [i, 511 - i, (i * 7) % 512];
                let p = dequantize_index(q, &frame).unwrap();
                assert_eq!(quantize_position(p, &frame).unwrap(), q);
            }
        }
    }

    #[test]
    fn canonical_rotation() {
        let f = [[5, 5, 5], [0, 0, 0], [1, 1, 1]];
        assert_eq!(canonical_face(f), [[0, 0, 0], [1, 1, 1], [5, 5, 5]]);
        // (z, y, x) order: z dominates
        let f = [[0, 0, 9], [9, 9, 0], [1, 0, 5]];
        assert_eq!(canonical_face(f)[0], [9, 9, 0]);
    }

    #[test]
    fn canonicalize_dedups_cyclic_duplicates() {
        let a = [[1, 2, 3], [4, 5, 6], [7, 8, 9]];
        let b = [a[1], a[2], a[0]];
        let c = [a[0], a[2], a[1]]; // reversed winding is a different face
        let out = canonicalize_faces(&[a, b, c]);
        assert_eq!(out.len(), 2);
        // brute-force cyclic equivalence oracle
        let rots = |f: QFace| [f, [f[1], f[2], f[0]], [f[2], f[0], f[1]]];
        for i in 0..out.len() {
            for j in 0..out.len() {
                if i != j {
                    assert!(!rots(out[i]).contains(&out[j]));
                }
            }
        }
    }

    #[test]
    fn tokenize_examples() {
        let u = unit_frame();
        let empty = QuantizedPatch { frame: u, faces: vec![] };
        assert_eq!(tokenize_patch(&empty).tokens, vec![513, 512]);
        let one = QuantizedPatch {
            frame: u,
            faces: vec![[[0, 0, 0], [0, 0, 1], [0, 1, 0]]],
        };
        assert_eq!(
            tokenize_patch(&one).tokens,
            vec![513, 0, 0, 0, 0, 0, 1, 0, 1, 0, 512]
        );
        let many = QuantizedPatch {
            frame: u,
            faces: (0..2000u32).map(|i| [[i % 512, 0, i / 512], [0, 1, 0], [1, 1, 1]]).collect(),
        };
        assert_eq!(tokenize_patch(&many).len(), 18002);
    }

    #[test]
    fn detokenize_trailing_group_and_welding() {
        let u = unit_frame();
        let mut t = vec![513, 3, 4, 5, 0, 0, 0, 0, 0, 1, 3, 4, 5, 9, 9, 9, 0, 0, 1];
        t.extend([1, 2, 3, 4, 5, 6, 7]);
        let (qp, d) = detokenize_patch(&TokenSequence::new(t), u);
        assert_eq!(d.faces_parsed, 2);
        assert_eq!(d.discarded_tokens, 7);
        assert!(!d.terminated);
        let (verts, faces) = qp.to_indexed();
        assert_eq!(verts.iter().filter(|v| **v == [3, 4, 5]).count(), 1);
        assert_eq!(verts.len(), 4);
        let shared = verts.iter().position(|v| *v == [3, 4, 5]).unwrap();
        assert!(faces.iter().all(|f| f.contains(&shared)));
    }

    #[test]
    fn detokenize_stops_at_term() {
        let u = unit_frame();
        let t = vec![513, 1, 1, 1, 2, 2, 2, 3, 3, 3, 512, 7, 7, 7];
        let (qp, d) = detokenize_patch(&TokenSequence::new(t), u);
        assert_eq!(qp.faces.len(), 1);
        assert!(d.terminated);
        assert_eq!(d.discarded_tokens, 0);
    }

    fn qpatch_strategy() -> impl Strategy<Value = QuantizedPatch> {
        proptest::collection::vec(
            proptest::array::uniform3(proptest::array::uniform3(0u32..512)),
            0..60,
        )
        .prop_map(|faces| QuantizedPatch {
            frame: PatchFrame::new([0.0; 3], 1.0, 512).unwrap(),
            faces: canonicalize_faces(&faces),
        })
    }

    proptest! {
        #[test]
        fn tokenize_roundtrip(qp in qpatch_strategy()) {
            let ts = tokenize_patch(&qp);
            prop_assert_eq!(ts.len(), 2 + 9 * qp.faces.len());
            let (back, d) = detokenize_patch(&ts, qp.frame);
            prop_assert_eq!(d.discarded_tokens, 0);
            prop_assert_eq!(back, qp);
        }

        #[test]
        fn canonicalize_idempotent_and_winding_preserving(
            faces in proptest::collection::vec(proptest::array::uniform3(proptest::array::uniform3(0u32..8)), 0..40)
        ) {
            let once = canonicalize_faces(&faces);
            prop_assert_eq!(canonicalize_faces(&once), once.clone());
            for f in &faces {
                let c = canonical_face(*f);
                let n = |g: QFace| {
                    let p = g.map(|v| v.map(|x| x as f64));
                    crate::geom::cross(crate::geom::sub(p[1], p[0]), crate::geom::sub(p[2], p[0]))
                };
                prop_assert_eq!(n(*f), n(c));
                prop_assert!(once.contains(&c));
            }
        }

        #[test]
        fn half_cell_error_bound(p in proptest::array::uniform3(0.0f64..1.0), ext in 0.01f64..10.0) {
            let frame = PatchFrame::new([-0.3, 0.1, 2.0], ext, 512).unwrap();
            let x = [-0.3 + p[0] * ext, 0.1 + p[1] * ext, 2.0 + p[2] * ext];
            let back = dequantize_index(quantize_position(x, &frame).unwrap(), &frame).unwrap();
            for k in 0..3 {
                prop_assert!((back[k] - x[k]).abs() <= ext / (2.0 * 511.0) * (1.0 + 1e-9));
            }
        }
    }
}
