use patchgen::mesh::{normalize_mesh, parse_obj, primitives, write_obj, Mesh};
use patchgen::metrics::{evaluate, MetricsConfig};
use patchgen::par::ExecPolicy;
use patchgen::pipeline::{run_pipeline, segment, GroundTruthSource, PipelineSettings, SegmentationMode};
use patchgen::quantizer::{detokenize_patch, tokenize_patch, PatchFrame, QuantizedPatch, Vocab};
use patchgen::tokenfile::{decode_tokens, encode_tokens, read_token_file, write_token_file};
use patchgen::TokenSequence;
use proptest::prelude::*;
use std::path::Path;

fn two_spheres() -> Mesh {
    let a = primitives::uv_sphere([0.0, 0.0, 0.0], 1.0, 24, 12);
    let b = primitives::uv_sphere([3.0, 0.5, 0.0], 0.7, 20, 10);
    a.merged(&b)
}

fn settings(n: usize, seed: u64) -> PipelineSettings {
    let mut s = PipelineSettings::default();
    s.segmentation.n_patches = Some(n);
    s.segmentation.seed = seed;
    s
}

#[test]
fn ground_truth_round_trip_is_faithful() {
    let mesh = two_spheres();
    let out = run_pipeline(&mesh, &settings(4, 3), &mut GroundTruthSource, true).unwrap();
    assert_eq!(out.mesh.face_count(), mesh.face_count());
    let m = out.metrics.clone().unwrap();
    let ext = out.max_patch_extent();
    assert!(m.cd_l1_surface <= ext / 1022.0 + 1.5 * ext / 511.0, "{}", m.cd_l1_surface);
    assert!(out.state.seam_report.iter().all(|s| s.post_weld_max_gap == 0.0));
    assert!(out.state.seam_report.iter().any(|s| s.matched_seam_vertices > 0));
}

#[test]
fn pipeline_is_deterministic() {
    let mesh = primitives::torus([0.0; 3], 1.0, 0.3, 32, 16);
    let a = run_pipeline(&mesh, &settings(3, 9), &mut GroundTruthSource, false).unwrap();
    let b = run_pipeline(&mesh, &settings(3, 9), &mut GroundTruthSource, false).unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.mesh, b.mesh);
}

#[test]
fn sequential_metrics_match_parallel() {
    let a = primitives::uv_sphere([0.0; 3], 1.0, 16, 8);
    let b = primitives::grid_box([-0.8; 3], [1.6; 3], 6);
    let par = evaluate(&a, &b, &MetricsConfig { policy: ExecPolicy::Parallel, ..Default::default() }).unwrap();
    let seq = evaluate(&a, &b, &MetricsConfig { policy: ExecPolicy::Sequential, ..Default::default() }).unwrap();
    assert_eq!(par, seq);
}

#[test]
fn components_mode_yields_one_patch_per_component() {
    let (mesh, _) = normalize_mesh(&two_spheres()).unwrap();
    let mut s = PipelineSettings::default().segmentation;
    s.mode = SegmentationMode::Components;
    let seg = segment(&mesh, &s).unwrap();
    assert_eq!(seg.patches.len(), 2);
    assert!(seg.adjacency.is_empty());
    seg.validate(&mesh).unwrap();
}

#[test]
fn obj_text_round_trip() {
    let mesh = primitives::toy_airplane();
    let back = parse_obj(&write_obj(&mesh), Path::new("mem.obj")).unwrap();
    assert_eq!(back.faces, mesh.faces);
    for (p, q) in mesh.vertices.iter().zip(&back.vertices) {
        assert_eq!(p, q);
    }
}

#[test]
fn token_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::new(512);
    let ts = TokenSequence::new(vec![v.bos(), 0, 511, 17, v.term(), v.pad()]);
    let path = dir.path().join("t.mmtk");
    write_token_file(&path, &ts, v.size()).unwrap();
    assert_eq!(read_token_file(&path).unwrap(), (ts, v.size()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn token_bytes_round_trip(toks in proptest::collection::vec(0u32..515, 0..300)) {
        let ts = TokenSequence::new(toks);
        let bytes = encode_tokens(&ts, 515).unwrap();
        prop_assert_eq!(decode_tokens(&bytes).unwrap(), (ts, 515));
    }

    #[test]
    fn patches_round_trip(
        faces in proptest::collection::vec(proptest::array::uniform3(proptest::array::uniform3(0u32..512)), 0..60),
        extent in 0.01f64..5.0,
    ) {
        let frame = PatchFrame::new([0.1, -0.2, 0.3], extent, 512).unwrap();
        let qp = QuantizedPatch { frame, faces: patchgen::quantizer::canonicalize_faces(&faces) };
        let (back, d) = detokenize_patch(&tokenize_patch(&qp), frame);
        prop_assert!(d.terminated);
        prop_assert_eq!(back, qp);
    }

    #[test]
    fn random_segmentations_round_trip(n in 1usize..6, seed in 0u64..1000) {
        let mesh = primitives::grid_box([0.0; 3], [1.0, 0.6, 0.3], 5);
        let out = run_pipeline(&mesh, &settings(n, seed), &mut GroundTruthSource, false).unwrap();
        prop_assert_eq!(out.mesh.face_count(), mesh.face_count());
        prop_assert!(out.state.seam_report.iter().all(|s| s.post_weld_max_gap == 0.0));
    }
}
