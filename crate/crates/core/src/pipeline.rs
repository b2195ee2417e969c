//! End-to-end patch pipeline: normalize, segment, then for each patch in
//! order select its boundary, fix its frame, obtain tokens from a
//! [`PatchSource`], and glue the result; finally clean and score.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{ground_truth_tokens, Assembler, AssemblyState, BoundaryParams, PatchPlan};
use crate::boundary::{BoundaryCondition, DEFAULT_BOUNDARY_FACES, DEFAULT_PLACEHOLDER_LEN};
use crate::mesh::{normalize_mesh, save_mesh, Mesh, NormalizeTransform};
use crate::metrics::{evaluate, MetricsConfig, MetricsReport};
use crate::quantizer::{PatchFrame, TokenSequence, DEFAULT_RESOLUTION};
use crate::segmentation::{
    components_as_segmentation, labels_as_segmentation, patch_count, random_lambda, read_label_file,
    segment_random_fps, Segmentation, UpAxis,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationMode {
    #[default]
    RandomFps,
    Components,
    Labels,
}

impl std::str::FromStr for SegmentationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_fps" => Ok(SegmentationMode::RandomFps),
            "components" => Ok(SegmentationMode::Components),
            "labels" => Ok(SegmentationMode::Labels),
            _ => Err(Error::InvalidArgument(format!("unknown segmentation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub mode: SegmentationMode,
    /// Patch-count multiplier; drawn from the seed when absent.
    pub lambda: Option<f64>,
    /// Explicit patch count, overriding `lambda`.
    pub n_patches: Option<usize>,
    pub seed: u64,
    pub up_axis: UpAxis,
    /// Per-face label file for `labels` mode.
    pub labels: Option<PathBuf>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            mode: SegmentationMode::RandomFps,
            lambda: None,
            n_patches: None,
            seed: 0,
            up_axis: UpAxis::Y,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizationConfig {
    pub resolution: u32,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        QuantizationConfig {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryConfig {
    pub k: usize,
    pub placeholder_len: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            k: DEFAULT_BOUNDARY_FACES,
            placeholder_len: DEFAULT_PLACEHOLDER_LEN,
        }
    }
}

/// Geometric settings shared by every pipeline-driven command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub segmentation: SegmentationConfig,
    pub quantization: QuantizationConfig,
    pub boundary: BoundaryConfig,
    pub metrics: MetricsConfig,
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.quantization.resolution < 2 {
            return Err(Error::InvalidArgument("resolution must be at least 2".into()));
        }
        if self.boundary.k == 0 {
            return Err(Error::InvalidArgument("boundary k must be at least 1".into()));
        }
        if let Some(l) = self.segmentation.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda must be positive, got {l}")));
            }
        }
        if self.segmentation.mode == SegmentationMode::Labels && self.segmentation.labels.is_none() {
            return Err(Error::InvalidArgument("labels mode needs a label file".into()));
        }
        Ok(())
    }

    pub fn boundary_params(&self) -> BoundaryParams {
        BoundaryParams {
            k: self.boundary.k,
            placeholder_len: self.boundary.placeholder_len,
            resolution: self.quantization.resolution,
        }
    }
}

/// Segments an already normalized mesh according to `cfg`.
pub fn segment(mesh: &Mesh, cfg: &SegmentationConfig) -> Result<Segmentation> {
    match cfg.mode {
        SegmentationMode::RandomFps => {
            let n = match cfg.n_patches {
                Some(n) => n.max(1),
                None => {
                    let lambda = cfg.lambda.unwrap_or_else(|| random_lambda(cfg.seed));
                    patch_count(mesh.face_count(), lambda)?
                }
            };
            segment_random_fps(mesh, n, cfg.seed, cfg.up_axis)
        }
        SegmentationMode::Components => components_as_segmentation(mesh, cfg.up_axis),
        SegmentationMode::Labels => {
            let path = cfg
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("labels mode needs a label file".into()))?;
            labels_as_segmentation(mesh, &read_label_file(path)?, cfg.up_axis)
        }
    }
}

/// What a token source sees for one patch.
pub struct PatchContext<'a> {
    pub patch_id: usize,
    /// Position of the patch in the generation order.
    pub step: usize,
    /// Normalized input mesh.
    pub mesh: &'a Mesh,
    pub patch_faces: &'a [usize],
    pub frame: PatchFrame,
    pub boundary: &'a BoundaryCondition,
}

/// Produces a token sequence for each patch in turn.
pub trait PatchSource {
    fn tokens(&mut self, ctx: &PatchContext<'_>) -> Result<TokenSequence>;
}

/// Tokenizes the input patch itself (model-free round trip).
pub struct GroundTruthSource;

impl PatchSource for GroundTruthSource {
    fn tokens(&mut self, ctx: &PatchContext<'_>) -> Result<TokenSequence> {
        ground_truth_tokens(ctx.mesh, ctx.patch_faces, ctx.frame)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Input after normalization; the output mesh lives in the same frame.
    pub input: Mesh,
    pub transform: NormalizeTransform,
    pub segmentation: Segmentation,
    pub plans: Vec<PatchPlan>,
    pub tokens: Vec<TokenSequence>,
    pub state: AssemblyState,
    pub mesh: Mesh,
    pub metrics: Option<MetricsReport>,
}

impl PipelineOutput {
    /// Largest frame extent over all patches.
    pub fn max_patch_extent(&self) -> f64 {
        self.plans.iter().map(|p| p.frame.extent).fold(0.0, f64::max)
    }

    /// Writes `mesh.obj`, `segmentation.json`, `assembly.json` and (when
    /// computed) `metrics.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_mesh(&self.mesh, dir.join("mesh.obj"))?;
        self.segmentation.save_json(dir.join("segmentation.json"))?;
        let report = serde_json::json!({
            "patches": self.plans.iter().map(|p| serde_json::json!({
                "patch_id": p.patch_id,
                "frame": p.frame,
                "boundary_faces": p.boundary.source_faces.len(),
            })).collect::<Vec<_>>(),
            "patch_transforms": self.state.patch_transforms,
            "seam_report": self.state.seam_report,
            "diagnostics": self.state.diagnostics,
            "face_count": self.mesh.face_count(),
            "vertex_count": self.mesh.vertex_count(),
        });
        std::fs::write(dir.join("assembly.json"), serde_json::to_string_pretty(&report)?)?;
        if let Some(m) = &self.metrics {
            std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(m)?)?;
        }
        Ok(())
    }
}

/// Normalizes and segments `input`, then runs [`run_on_segmentation`].
pub fn run_pipeline(
    input: &Mesh,
    settings: &PipelineSettings,
    source: &mut dyn PatchSource,
    evaluate_output: bool,
) -> Result<PipelineOutput> {
    settings.validate()?;
    let (mesh, transform) = normalize_mesh(input)?;
    let seg = segment(&mesh, &settings.segmentation)?;
    run_on_segmentation(mesh, transform, seg, settings, source, evaluate_output)
}

/// Generates, glues and optionally scores every patch of a segmented,
/// normalized mesh.
pub fn run_on_segmentation(
    mesh: Mesh,
    transform: NormalizeTransform,
    mut seg: Segmentation,
    settings: &PipelineSettings,
    source: &mut dyn PatchSource,
    evaluate_output: bool,
) -> Result<PipelineOutput> {
    seg.validate(&mesh)?;
    let params = settings.boundary_params();
    let mut asm = Assembler::new();
    let mut plans = Vec::with_capacity(seg.order.len());
    let mut tokens = Vec::with_capacity(seg.order.len());
    let mut frames = vec![None; seg.patches.len()];
    for (step, &pid) in seg.order.iter().enumerate() {
        let faces = &seg.patches[pid].face_indices;
        let tris: Vec<_> = faces.iter().map(|&f| mesh.triangle(f)).collect();
        let (frame, boundary) = asm.prepare(&tris, params)?;
        let ctx = PatchContext {
            patch_id: pid,
            step,
            mesh: &mesh,
            patch_faces: faces,
            frame,
            boundary: &boundary,
        };
        let ts = source.tokens(&ctx)?;
        asm.push(pid, &ts, &frame, &boundary)?;
        log::debug!("patch {pid}: {} tokens, {} boundary faces", ts.len(), boundary.source_faces.len());
        frames[pid] = Some(frame);
        plans.push(PatchPlan {
            patch_id: pid,
            frame,
            boundary,
        });
        tokens.push(ts);
    }
    seg.frames = Some(frames.into_iter().map(|f| f.expect("every patch ordered")).collect());
    let out_mesh = asm.finish();
    let metrics = if evaluate_output && !out_mesh.is_empty() {
        Some(evaluate(&out_mesh, &mesh, &settings.metrics)?)
    } else {
        None
    };
    Ok(PipelineOutput {
        input: mesh,
        transform,
        segmentation: seg,
        plans,
        tokens,
        state: asm.state,
        mesh: out_mesh,
        metrics,
    })
}
