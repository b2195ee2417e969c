//! Gluing generated patches into one mesh.
//!
//! Each patch is dequantized in its own frame, translated by the mean offset
//! between its boundary-condition vertices as the current frame reproduces
//! them and their assembled originals, then welded onto the assembled mesh.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::boundary::{
    boundary_vertices, encode_boundary_tokens, gather_boundary, select_boundary_faces,
    AssembledMesh, BoundaryCondition,
};
use crate::geom::{self, Point3};
use crate::mesh::{clean_mesh, Mesh, DEFAULT_MERGE_EPSILON};
use crate::quantizer::{
    compute_frame_from_points, dequantize_index, detokenize_patch, quantize_position,
    ParseDiagnostics, PatchFrame, TokenSequence,
};
use crate::spatial::KdTree;
use crate::{Error, Result};

/// Weld tolerance in quantization cells of the current frame.
pub const WELD_CELLS: f64 = 1.5;
/// Seam gaps are capped at this many weld tolerances.
pub const SEAM_BAND_WELDS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeldParams {
    /// Snap distance.
    pub tol: f64,
    /// Cap applied to each pre-weld seam gap, so vertices facing patches not
    /// yet generated do not dominate the statistics.
    pub seam_band: f64,
}

impl WeldParams {
    pub fn for_frame(frame: &PatchFrame) -> Self {
        let tol = WELD_CELLS * frame.cell();
        WeldParams {
            tol,
            seam_band: SEAM_BAND_WELDS * tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeamStats {
    pub patch_id: usize,
    /// Mean capped distance from the patch's open-boundary vertices to the
    /// nearest assembled vertex, after translation and before welding.
    pub mean_gap: f64,
    pub max_gap: f64,
    pub seam_vertices: usize,
    pub welded_vertices: usize,
    /// Seam vertices whose pre-weld gap was within the weld tolerance.
    pub matched_seam_vertices: usize,
    /// Largest distance from a matched seam vertex, after welding, to the
    /// nearest previously assembled vertex.
    pub post_weld_max_gap: f64,
    /// Largest capped gap left on seam vertices that did not weld.
    pub residual_max_gap: f64,
    pub echo_faces_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTransform {
    pub patch_id: usize,
    pub translation: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchDiagnostic {
    pub patch_id: usize,
    pub parse: ParseDiagnostics,
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyState {
    pub assembled: AssembledMesh,
    pub patch_transforms: Vec<PatchTransform>,
    pub seam_report: Vec<SeamStats>,
    pub diagnostics: Vec<PatchDiagnostic>,
}

/// Translation `mean(p - dequantize(quantize(p)))` over the unique boundary
/// vertices `p`; zero for a placeholder.
pub fn compute_glue_translation(boundary: &BoundaryCondition, frame: &PatchFrame) -> Result<Point3> {
    if boundary.is_placeholder {
        return Ok([0.0; 3]);
    }
    let verts = boundary_vertices(boundary);
    if verts.is_empty() {
        return Ok([0.0; 3]);
    }
    let mut acc = [0.0; 3];
    for p in &verts {
        let back = dequantize_index(quantize_position(*p, frame)?, frame)?;
        acc = geom::add(acc, geom::sub(*p, back));
    }
    Ok(geom::scale(acc, 1.0 / verts.len() as f64))
}

fn open_boundary_vertices(n_vertices: usize, faces: &[[usize; 3]]) -> Vec<usize> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut on = vec![false; n_vertices];
    for (&(a, b), &c) in &count {
        if c == 1 {
            on[a] = true;
            on[b] = true;
        }
    }
    (0..n_vertices).filter(|&v| on[v]).collect()
}

/// Translates a patch, snaps its vertices onto assembled vertices within
/// `params.tol`, drops faces that exactly repeat a boundary source face, and
/// appends the rest.
pub fn weld_seam(
    state: &mut AssemblyState,
    patch_id: usize,
    positions: &[Point3],
    faces: &[[usize; 3]],
    translation: Point3,
    params: WeldParams,
    boundary: &BoundaryCondition,
) -> SeamStats {
    let moved: Vec<Point3> = positions.iter().map(|&p| geom::add(p, translation)).collect();
    let asm = &mut state.assembled;
    let tree = KdTree::new(&asm.mesh.vertices);
    let mut stats = SeamStats {
        patch_id,
        ..Default::default()
    };

    let mut seam_gaps: Vec<(usize, f64)> = Vec::new();
    if !asm.mesh.vertices.is_empty() {
        let seam = open_boundary_vertices(moved.len(), faces);
        let mut sum = 0.0;
        for &v in &seam {
            let (_, d2) = tree.nearest(moved[v]).unwrap();
            let g = d2.sqrt().min(params.seam_band);
            sum += g;
            stats.max_gap = stats.max_gap.max(g);
            seam_gaps.push((v, g));
        }
        stats.seam_vertices = seam.len();
        if !seam.is_empty() {
            stats.mean_gap = sum / seam.len() as f64;
        }
    }
    let n_before = asm.mesh.vertices.len();

    let tol2 = params.tol * params.tol;
    let mut map = Vec::with_capacity(moved.len());
    for p in &moved {
        match tree.nearest(*p) {
            Some((i, d2)) if d2 <= tol2 => {
                stats.welded_vertices += 1;
                map.push(i);
            }
            _ => {
                map.push(asm.mesh.vertices.len());
                asm.mesh.vertices.push(*p);
            }
        }
    }

    for &(v, g) in &seam_gaps {
        if g <= params.tol {
            stats.matched_seam_vertices += 1;
            let (_, d2) = tree.nearest(asm.mesh.vertices[map[v]]).unwrap();
            stats.post_weld_max_gap = stats.post_weld_max_gap.max(d2.sqrt());
        } else if map[v] >= n_before {
            stats.residual_max_gap = stats.residual_max_gap.max(g);
        }
    }

    let echoes: HashSet<[usize; 3]> = boundary
        .source_faces
        .iter()
        .filter(|&&(_, f)| f < asm.mesh.faces.len())
        .map(|&(_, f)| {
            let mut t = asm.mesh.faces[f];
            t.sort_unstable();
            t
        })
        .collect();
    for f in faces {
        let t = [map[f[0]], map[f[1]], map[f[2]]];
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let mut key = t;
        key.sort_unstable();
        if echoes.contains(&key) {
            stats.echo_faces_dropped += 1;
            continue;
        }
        asm.mesh.faces.push(t);
        asm.provenance.push(patch_id);
    }
    state.patch_transforms.push(PatchTransform {
        patch_id,
        translation,
    });
    state.seam_report.push(stats.clone());
    stats
}

/// Boundary-selection settings for incremental assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryParams {
    pub k: usize,
    pub placeholder_len: usize,
    pub resolution: u32,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        BoundaryParams {
            k: crate::boundary::DEFAULT_BOUNDARY_FACES,
            placeholder_len: crate::boundary::DEFAULT_PLACEHOLDER_LEN,
            resolution: crate::quantizer::DEFAULT_RESOLUTION,
        }
    }
}

/// Sequential assembler: ask it for the next patch's frame and boundary,
/// then hand it that patch's token sequence.
#[derive(Debug, Clone, Default)]
pub struct Assembler {
    pub state: AssemblyState,
    /// Weld parameters override; defaults to [`WeldParams::for_frame`].
    pub weld: Option<WeldParams>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Selects the boundary for a patch whose (input-space) faces are given by
    /// their vertex positions, and computes the frame covering both.
    pub fn prepare(
        &self,
        patch_triangles: &[[Point3; 3]],
        params: BoundaryParams,
    ) -> Result<(PatchFrame, BoundaryCondition)> {
        let centroids: Vec<Point3> = patch_triangles
            .iter()
            .map(|t| geom::centroid(t[0], t[1], t[2]))
            .collect();
        let selected = select_boundary_faces(&self.state.assembled, &centroids, params.k);
        let (src, pos) = gather_boundary(&self.state.assembled, &selected);
        let frame = compute_frame_from_points(
            patch_triangles.iter().flatten().chain(pos.iter().flatten()),
            params.resolution,
        )?;
        let bc = encode_boundary_tokens(src, pos, &frame, params.placeholder_len)?;
        Ok((frame, bc))
    }

    /// Validates that `boundary` only references faces already assembled by
    /// the patches it names.
    pub fn check_boundary(&self, boundary: &BoundaryCondition) -> Result<()> {
        let asm = &self.state.assembled;
        for &(pid, f) in &boundary.source_faces {
            if f >= asm.face_count() || asm.provenance[f] != pid {
                return Err(Error::OrderMismatch(format!(
                    "boundary references face {f} of patch {pid}, which is not assembled yet"
                )));
            }
        }
        Ok(())
    }

    /// Detokenizes, glues and welds one patch. A patch that parses to zero
    /// faces is skipped and recorded in the diagnostics.
    pub fn push(
        &mut self,
        patch_id: usize,
        tokens: &TokenSequence,
        frame: &PatchFrame,
        boundary: &BoundaryCondition,
    ) -> Result<Option<SeamStats>> {
        self.check_boundary(boundary)?;
        let (qp, parse) = detokenize_patch(tokens, *frame);
        let (positions, faces) = qp.to_positions();
        let skipped = faces.is_empty();
        self.state.diagnostics.push(PatchDiagnostic {
            patch_id,
            parse,
            skipped,
        });
        if skipped {
            log::warn!("patch {patch_id}: no faces decoded, skipping");
            return Ok(None);
        }
        let t = compute_glue_translation(boundary, frame)?;
        let params = self.weld.unwrap_or_else(|| WeldParams::for_frame(frame));
        Ok(Some(weld_seam(
            &mut self.state,
            patch_id,
            &positions,
            &faces,
            t,
            params,
            boundary,
        )))
    }

    /// Final mesh after cleaning.
    pub fn finish(&self) -> Mesh {
        clean_mesh(&self.state.assembled.mesh, DEFAULT_MERGE_EPSILON)
    }
}

/// One patch's precomputed assembly inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub patch_id: usize,
    pub frame: PatchFrame,
    pub boundary: BoundaryCondition,
}

/// Assembles a full sequence of patches in the given order.
pub fn assemble(plans: &[PatchPlan], tokens: &[TokenSequence]) -> Result<(Mesh, AssemblyState)> {
    if plans.len() != tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "{} plans but {} token sequences",
            plans.len(),
            tokens.len()
        )));
    }
    let mut asm = Assembler::new();
    for (plan, ts) in plans.iter().zip(tokens) {
        asm.push(plan.patch_id, ts, &plan.frame, &plan.boundary)?;
    }
    Ok((asm.finish(), asm.state))
}

/// Quantized ground-truth tokenization of a patch in the given frame.
pub fn ground_truth_tokens(mesh: &Mesh, faces: &[usize], frame: PatchFrame) -> Result<TokenSequence> {
    let qp = crate::quantizer::QuantizedPatch::from_mesh_faces(mesh, faces, frame)?;
    Ok(crate::quantizer::tokenize_patch(&qp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use crate::quantizer::{tokenize_patch, QuantizedPatch};

    fn bc_from(positions: Vec<[Point3; 3]>, frame: &PatchFrame) -> BoundaryCondition {
        let src = (0..positions.len()).map(|i| (0, i)).collect();
        encode_boundary_tokens(src, positions, frame, 9).unwrap()
    }

    #[test]
    fn glue_zero_when_on_grid() {
        let frame = PatchFrame::new([0.0; 3], 1.0, 512).unwrap();
        let c = 1.0 / 511.0;
        let bc = bc_from(vec![[[0.0; 3], [c, 0.0, 0.0], [0.0, 2.0 * c, c]]], &frame);
        assert_eq!(compute_glue_translation(&bc, &frame).unwrap(), [0.0; 3]);
        let ph = BoundaryCondition::placeholder(frame.vocab(), 9);
        assert_eq!(compute_glue_translation(&ph, &frame).unwrap(), [0.0; 3]);
    }

    #[test]
    fn glue_recovers_uniform_offset() {
        let frame = PatchFrame::new([0.0; 3], 1.0, 512).unwrap();
        let c = 1.0 / 511.0;
        let off = 0.3 * c;
        let tri = |i: f64| {
            [
                [10.0 * i * c + off, 5.0 * c, 7.0 * c],
                [11.0 * i * c + off, 9.0 * c, 7.0 * c],
                [10.0 * i * c + off, 9.0 * c, 8.0 * c],
            ]
        };
        let bc = bc_from(vec![tri(1.0), tri(2.0)], &frame);
        let t = compute_glue_translation(&bc, &frame).unwrap();
        assert!((t[0] - off).abs() < 1e-15 && t[1].abs() < 1e-15 && t[2].abs() < 1e-15);
    }

    #[test]
    fn glue_is_mean_of_mixed_offsets() {
        let frame = PatchFrame::new([0.0; 3], 1.0, 512).unwrap();
        let c = 1.0 / 511.0;
        let pts = [
            [100.0 * c + 0.1 * c, 3.0 * c, 3.0 * c - 0.2 * c],
            [101.0 * c - 0.3 * c, 5.0 * c + 0.25 * c, 3.0 * c],
            [100.0 * c, 5.0 * c, 4.0 * c + 0.45 * c],
        ];
        let bc = bc_from(vec![pts], &frame);
        let t = compute_glue_translation(&bc, &frame).unwrap();
        // brute-force mean oracle with hand-rounded grid points
        let grid = [
            [100.0 * c, 3.0 * c, 3.0 * c],
            [101.0 * c, 5.0 * c, 3.0 * c],
            [100.0 * c, 5.0 * c, 4.0 * c],
        ];
        for k in 0..3 {
            let mean: f64 = (0..3).map(|i| pts[i][k] - grid[i][k]).sum::<f64>() / 3.0;
            assert!((t[k] - mean).abs() < 1e-15, "{k}");
        }
    }

    fn square(z: f64, x0: f64) -> (Vec<Point3>, Vec<[usize; 3]>) {
        (
            vec![
                [x0, 0.0, z],
                [x0 + 1.0, 0.0, z],
                [x0 + 1.0, 1.0, z],
                [x0, 1.0, z],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn weld_snaps_shared_vertices() {
        let mut state = AssemblyState::default();
        let ph = BoundaryCondition::placeholder(Default::default(), 9);
        let p = WeldParams { tol: 1e-3, seam_band: 4e-3 };
        let (v, f) = square(0.0, 0.0);
        weld_seam(&mut state, 0, &v, &f, [0.0; 3], p, &ph);
        // second square shares the x = 1 edge, jittered
        let (mut v2, f2) = square(0.0, 1.0);
        for q in v2.iter_mut() {
            q[1] += 2e-4;
        }
        let triple: Vec<[Point3; 3]> = (0..2).map(|i| state.assembled.mesh.triangle(i)).collect();
        let bc = BoundaryCondition {
            source_faces: vec![(0, 0), (0, 1)],
            positions: triple,
            tokens: TokenSequence::default(),
            is_placeholder: false,
        };
        let s = weld_seam(&mut state, 1, &v2, &f2, [0.0; 3], p, &bc);
        assert_eq!(s.welded_vertices, 2);
        assert_eq!(s.seam_vertices, 4);
        assert_eq!(state.assembled.mesh.vertices.len(), 6);
        // the two far vertices are capped at the seam band
        assert!((s.max_gap - 4e-3).abs() < 1e-15);
        assert!((s.mean_gap - (2.0 * 2e-4 + 2.0 * 4e-3) / 4.0).abs() < 1e-12);
        assert_eq!(s.matched_seam_vertices, 2);
        assert_eq!(s.post_weld_max_gap, 0.0);
        assert!((s.residual_max_gap - 4e-3).abs() < 1e-15);
        let shared: Vec<_> = state.assembled.mesh.faces[2..].iter().flatten().filter(|&&i| i < 4).collect();
        assert!(!shared.is_empty());
    }

    #[test]
    fn four_vertex_weld_and_echo_drop() {
        let mut state = AssemblyState::default();
        let ph = BoundaryCondition::placeholder(Default::default(), 9);
        let p = WeldParams { tol: 1e-6, seam_band: 1e-5 };
        let (v, f) = square(0.0, 0.0);
        weld_seam(&mut state, 0, &v, &f, [0.0; 3], p, &ph);
        let bc = BoundaryCondition {
            source_faces: vec![(0, 0), (0, 1)],
            positions: vec![state.assembled.mesh.triangle(0), state.assembled.mesh.triangle(1)],
            tokens: TokenSequence::default(),
            is_placeholder: false,
        };
        // same four vertices re-emitted plus one new face; face 0 is an echo
        let mut v2 = v.clone();
        v2.push([0.5, 0.5, 1.0]);
        let f2 = vec![[0, 1, 2], [0, 1, 4]];
        let s = weld_seam(&mut state, 1, &v2, &f2, [0.0; 3], p, &bc);
        assert_eq!(s.welded_vertices, 4);
        assert_eq!(s.echo_faces_dropped, 1);
        assert_eq!(state.assembled.mesh.faces.len(), 3);
        assert_eq!(state.assembled.provenance, vec![0, 0, 1]);
    }

    #[test]
    fn zero_tolerance_welds_only_exact() {
        let mut state = AssemblyState::default();
        let ph = BoundaryCondition::placeholder(Default::default(), 9);
        let p = WeldParams { tol: 0.0, seam_band: 0.0 };
        let (v, f) = square(0.0, 0.0);
        weld_seam(&mut state, 0, &v, &f, [0.0; 3], p, &ph);
        let (mut v2, f2) = square(0.0, 1.0);
        v2[0][1] += 1e-15; // (1,0,0) no longer bit-equal
        let s = weld_seam(&mut state, 1, &v2, &f2, [0.0; 3], p, &ph);
        assert_eq!(s.welded_vertices, 1); // (1,1,0)
    }

    #[test]
    fn single_patch_assembly() {
        let cube = primitives::grid_box([0.1; 3], [0.5; 3], 2);
        let faces: Vec<usize> = (0..cube.faces.len()).collect();
        let asm = Assembler::new();
        let tris: Vec<[Point3; 3]> = faces.iter().map(|&f| cube.triangle(f)).collect();
        let (frame, bc) = asm.prepare(&tris, BoundaryParams::default()).unwrap();
        assert!(bc.is_placeholder);
        let ts = ground_truth_tokens(&cube, &faces, frame).unwrap();
        let (mesh, state) = assemble(
            &[PatchPlan { patch_id: 0, frame, boundary: bc }],
            &[ts],
        )
        .unwrap();
        assert_eq!(state.patch_transforms[0].translation, [0.0; 3]);
        assert_eq!(mesh.faces.len(), cube.faces.len());
        assert_eq!(mesh.vertices.len(), cube.vertices.len());
    }

    #[test]
    fn permuted_order_is_rejected() {
        let cube = primitives::grid_box([0.0; 3], [1.0; 3], 2);
        let half = cube.faces.len() / 2;
        let groups = [(0..half).collect::<Vec<_>>(), (half..cube.faces.len()).collect()];
        let mut asm = Assembler::new();
        let mut plans = Vec::new();
        let mut tokens = Vec::new();
        for (pid, g) in groups.iter().enumerate() {
            let tris: Vec<[Point3; 3]> = g.iter().map(|&f| cube.triangle(f)).collect();
            let (frame, bc) = asm.prepare(&tris, BoundaryParams::default()).unwrap();
            let ts = ground_truth_tokens(&cube, g, frame).unwrap();
            asm.push(pid, &ts, &frame, &bc).unwrap();
            plans.push(PatchPlan { patch_id: pid, frame, boundary: bc });
            tokens.push(ts);
        }
        assert!(assemble(&plans, &tokens).is_ok());
        plans.reverse();
        tokens.reverse();
        assert!(matches!(assemble(&plans, &tokens), Err(Error::OrderMismatch(_))));
    }

    #[test]
    fn empty_patch_is_skipped() {
        let frame = PatchFrame::new([0.0; 3], 1.0, 512).unwrap();
        let ph = BoundaryCondition::placeholder(frame.vocab(), 9);
        let empty = tokenize_patch(&QuantizedPatch { frame, faces: vec![] });
        let (mesh, state) = assemble(
            &[PatchPlan { patch_id: 0, frame, boundary: ph }],
            &[empty],
        )
        .unwrap();
        assert!(mesh.faces.is_empty());
        assert!(state.diagnostics[0].skipped);
    }
}
