//! Boundary conditions: the already-assembled triangles nearest to the patch
//! about to be generated, encoded as a token prefix in that patch's frame.

use serde::{Deserialize, Serialize};

use crate::geom::{self, Point3};
use crate::mesh::Mesh;
use crate::par::{self, ExecPolicy};
use crate::quantizer::{
    canonicalize_faces, quantize_position, tokenize_faces_prefix, PatchFrame, TokenSequence, Vocab,
};
use crate::spatial::KdTree;
use crate::Result;

pub const DEFAULT_BOUNDARY_FACES: usize = 512;
pub const DEFAULT_PLACEHOLDER_LEN: usize = 9;

/// Assembled geometry plus, per face, the id of the patch that produced it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembledMesh {
    pub mesh: Mesh,
    pub provenance: Vec<usize>,
}

impl AssembledMesh {
    pub fn face_count(&self) -> usize {
        self.mesh.faces.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    /// `(patch_id, face index into the assembled mesh)`, nearest first.
    pub source_faces: Vec<(usize, usize)>,
    /// Assembled-space vertex positions of each source face.
    pub positions: Vec<[Point3; 3]>,
    pub tokens: TokenSequence,
    pub is_placeholder: bool,
}

impl BoundaryCondition {
    pub fn placeholder(vocab: Vocab, len: usize) -> Self {
        BoundaryCondition {
            source_faces: Vec::new(),
            positions: Vec::new(),
            tokens: TokenSequence::new(vec![vocab.term(); len]),
            is_placeholder: true,
        }
    }
}

/// The `k` assembled faces closest to the current patch, nearest first.
///
/// A face's distance is from its centroid to the nearest centroid among the
/// current patch's faces; ties go to the lower face index.
pub fn select_boundary_faces(
    assembled: &AssembledMesh,
    patch_centroids: &[Point3],
    k: usize,
) -> Vec<usize> {
    select_boundary_faces_with(assembled, patch_centroids, k, ExecPolicy::default())
}

pub fn select_boundary_faces_with(
    assembled: &AssembledMesh,
    patch_centroids: &[Point3],
    k: usize,
    policy: ExecPolicy,
) -> Vec<usize> {
    if assembled.mesh.faces.is_empty() || patch_centroids.is_empty() || k == 0 {
        return Vec::new();
    }
    let tree = KdTree::new(patch_centroids);
    let mesh = &assembled.mesh;
    let mut ranked: Vec<(f64, usize)> = par::map_range(policy, mesh.faces.len(), |f| {
        let (_, d) = tree.nearest(mesh.face_centroid(f)).expect("non-empty tree");
        (d, f)
    });
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, cmp);
        ranked.truncate(k);
    }
    ranked.sort_by(cmp);
    ranked.into_iter().map(|(_, f)| f).collect()
}

/// Gathers source ids and positions for selected faces.
pub fn gather_boundary(assembled: &AssembledMesh, selected: &[usize]) -> (Vec<(usize, usize)>, Vec<[Point3; 3]>) {
    let src = selected
        .iter()
        .map(|&f| (assembled.provenance[f], f))
        .collect();
    let pos = selected.iter().map(|&f| assembled.mesh.triangle(f)).collect();
    (src, pos)
}

/// Quantizes boundary faces in the current frame and encodes them as
/// `9 * n` coordinate tokens followed by TERM. An empty selection yields a
/// placeholder of `placeholder_len` TERM tokens.
pub fn encode_boundary_tokens(
    source_faces: Vec<(usize, usize)>,
    positions: Vec<[Point3; 3]>,
    frame: &PatchFrame,
    placeholder_len: usize,
) -> Result<BoundaryCondition> {
    let vocab = frame.vocab();
    if positions.is_empty() {
        return Ok(BoundaryCondition::placeholder(vocab, placeholder_len));
    }
    let mut q = Vec::with_capacity(positions.len());
    for tri in &positions {
        q.push([
            quantize_position(tri[0], frame)?,
            quantize_position(tri[1], frame)?,
            quantize_position(tri[2], frame)?,
        ]);
    }
    let tokens = tokenize_faces_prefix(&canonicalize_faces(&q), vocab);
    Ok(BoundaryCondition {
        source_faces,
        positions,
        tokens,
        is_placeholder: false,
    })
}

/// Unique boundary vertex positions (exact bit equality).
pub fn boundary_vertices(bc: &BoundaryCondition) -> Vec<Point3> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for tri in &bc.positions {
        for p in tri {
            if seen.insert(p.map(|c| (c + 0.0).to_bits())) {
                out.push(*p);
            }
        }
    }
    out
}

/// Debug dump: an OBJ of the selected faces plus JSON listing their sources.
pub fn dump_boundary<P: AsRef<std::path::Path>>(bc: &BoundaryCondition, stem: P) -> Result<()> {
    let stem = stem.as_ref();
    let mut m = Mesh::default();
    for tri in &bc.positions {
        let o = m.vertices.len();
        m.vertices.extend_from_slice(tri);
        m.faces.push([o, o + 1, o + 2]);
    }
    crate::mesh::save_mesh(&m, stem.with_extension("obj"))?;
    let json = serde_json::json!({
        "source_faces": bc.source_faces,
        "is_placeholder": bc.is_placeholder,
        "token_count": bc.tokens.len(),
    });
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

/// Reference ranking by full `O(n * m)` scan, used by tests and the
/// acceptance suite.
pub fn select_boundary_faces_brute(
    assembled: &AssembledMesh,
    patch_centroids: &[Point3],
    k: usize,
) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = (0..assembled.mesh.faces.len())
        .map(|f| {
            let c = assembled.mesh.face_centroid(f);
            let d = patch_centroids
                .iter()
                .map(|p| geom::dist2(c, *p))
                .fold(f64::INFINITY, f64::min);
            (d, f)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(_, f)| f).collect()
}
