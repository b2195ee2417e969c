//! Training on a handful of meshes with per-epoch re-segmentation, and a
//! [`PatchSource`] that samples patches from a trained model.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use patchgen::assembly::{ground_truth_tokens, Assembler, BoundaryParams};
use patchgen::mesh::{normalize_mesh, sample_surface};
use patchgen::pipeline::{segment, PatchContext, PatchSource, SegmentationConfig, SegmentationMode};
use patchgen::{Mesh, TokenSequence};

use crate::config::ModelConfig;
use crate::generate::{generate, GenerationConfig};
use crate::model::{Model, TrainingExample};
use crate::params::seeded_rng;
use crate::train::{write_log_line, OptimConfig, StepStats, Trainer};
use crate::{ModelError, Result};

/// Sampling seed of the whole-shape cloud.
pub const GLOBAL_CLOUD_SEED: u64 = 0x610b;

/// Sampling seed of a patch cloud; fixed per segmentation seed and patch.
pub fn local_cloud_seed(seg_seed: u64, patch_id: usize) -> u64 {
    seg_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(patch_id as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub global_samples: usize,
    pub local_samples: usize,
    /// Base segmentation; its seed is replaced per epoch.
    pub segmentation: SegmentationConfig,
    /// Number of distinct segmentation seeds cycled through; 0 draws a
    /// fresh seed every epoch.
    pub seg_seed_pool: usize,
    pub boundary: BoundaryParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            global_samples: 16384,
            local_samples: 16384,
            segmentation: SegmentationConfig {
                mode: SegmentationMode::RandomFps,
                ..Default::default()
            },
            seg_seed_pool: 0,
            boundary: BoundaryParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            epochs: 100,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// A normalized mesh with its encoded whole-shape cloud.
pub struct PreparedMesh {
    pub mesh: Mesh,
    pub global_feature: Vec<f64>,
}

pub fn prepare_mesh(model: &Model, mesh: &Mesh, data: &DataConfig) -> Result<PreparedMesh> {
    let (mesh, _) = normalize_mesh(mesh)?;
    let pts = sample_surface(&mesh, data.global_samples, GLOBAL_CLOUD_SEED)?;
    let global_feature = model.encode_point_cloud(&pts)?;
    Ok(PreparedMesh { mesh, global_feature })
}

/// Teacher-forced examples for one segmentation: every patch in order,
/// conditioned on the ground-truth patches before it.
pub fn build_examples(model: &Model, pm: &PreparedMesh, data: &DataConfig, seg_seed: u64) -> Result<Vec<TrainingExample>> {
    let mut sc = data.segmentation.clone();
    sc.seed = seg_seed;
    let seg = segment(&pm.mesh, &sc)?;
    let mut asm = Assembler::new();
    let mut out = Vec::with_capacity(seg.order.len());
    for &pid in &seg.order {
        let faces = &seg.patches[pid].face_indices;
        let tris: Vec<_> = faces.iter().map(|&f| pm.mesh.triangle(f)).collect();
        let (frame, boundary) = asm.prepare(&tris, data.boundary)?;
        let target = ground_truth_tokens(&pm.mesh, faces, frame)?;
        let local = sample_surface(&pm.mesh.submesh(faces), data.local_samples, local_cloud_seed(seg_seed, pid))?;
        out.push(TrainingExample {
            global_feature: pm.global_feature.clone(),
            local_feature: model.encode_point_cloud(&local)?,
            boundary_tokens: boundary.tokens.clone(),
            target_tokens: target.clone(),
            frame,
        });
        asm.push(pid, &target, &frame, &boundary)?;
    }
    Ok(out)
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<StepStats>,
    /// Segmentation seed used for each mesh in the final epoch.
    pub last_seg_seeds: Vec<u64>,
}

fn draw_seg_seed(rng: &mut impl Rng, base: u64, pool: usize) -> u64 {
    if pool == 0 {
        rng.gen()
    } else {
        base.wrapping_add(rng.gen_range(0..pool as u64))
    }
}

/// Trains a fresh model, re-segmenting every mesh each epoch. The cosine
/// schedule spans all steps of the run.
pub fn train_on_meshes(meshes: &[Mesh], cfg: &ToyTrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    if meshes.is_empty() || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ModelError::Config("need meshes, epochs > 0 and batch_size > 0".into()));
    }
    let model = Model::new(cfg.model.clone())?;
    let prepared: Vec<PreparedMesh> = meshes
        .iter()
        .map(|m| prepare_mesh(&model, m, &cfg.data))
        .collect::<Result<_>>()?;
    let mut rng = seeded_rng(cfg.seed, 5);
    let mut cache: HashMap<(usize, u64), Vec<TrainingExample>> = HashMap::new();
    let mut plan = Vec::with_capacity(cfg.epochs);
    let mut total_steps = 0;
    for _ in 0..cfg.epochs {
        let seeds: Vec<u64> = (0..meshes.len())
            .map(|_| draw_seg_seed(&mut rng, cfg.data.segmentation.seed, cfg.data.seg_seed_pool))
            .collect();
        for (i, &s) in seeds.iter().enumerate() {
            if !cache.contains_key(&(i, s)) {
                cache.insert((i, s), build_examples(&model, &prepared[i], &cfg.data, s)?);
            }
        }
        let n: usize = seeds.iter().enumerate().map(|(i, &s)| cache[&(i, s)].len()).sum();
        total_steps += n.div_ceil(cfg.batch_size);
        plan.push(seeds);
    }
    let mut optim = cfg.optim;
    optim.total_steps = total_steps;
    let mut trainer = Trainer::new(model, optim)?;
    let mut history = Vec::with_capacity(total_steps);
    for (epoch, seeds) in plan.iter().enumerate() {
        let mut batch_pool: Vec<&TrainingExample> = seeds
            .iter()
            .enumerate()
            .flat_map(|(i, &s)| cache[&(i, s)].iter())
            .collect();
        batch_pool.shuffle(&mut rng);
        for chunk in batch_pool.chunks(cfg.batch_size) {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&e| e.clone()).collect();
            let stats = trainer.train_step(&batch)?;
            if let Some(w) = log.as_deref_mut() {
                write_log_line(w, &stats)?;
            }
            history.push(stats);
        }
        log::debug!("epoch {epoch}: loss {:.4}", history.last().map_or(f64::NAN, |s| s.loss));
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
        last_seg_seeds: plan.last().cloned().unwrap_or_default(),
    })
}

/// Per-patch record kept by [`ModelSource`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub patch_id: usize,
    pub tokens: usize,
    pub truncated: bool,
}

/// Samples each patch from a model conditioned on the input patch's
/// cloud and the boundary handed over by the assembler.
pub struct ModelSource<'a> {
    pub model: &'a Model,
    pub global_feature: Vec<f64>,
    pub local_samples: usize,
    /// Segmentation seed, used to derive patch cloud seeds.
    pub seg_seed: u64,
    pub generation: GenerationConfig,
    pub records: Vec<GenerationRecord>,
}

impl<'a> ModelSource<'a> {
    /// `mesh` must already be normalized.
    pub fn new(model: &'a Model, mesh: &Mesh, data: &DataConfig, seg_seed: u64, generation: GenerationConfig) -> Result<Self> {
        let pts = sample_surface(mesh, data.global_samples, GLOBAL_CLOUD_SEED)?;
        Ok(ModelSource {
            global_feature: model.encode_point_cloud(&pts)?,
            model,
            local_samples: data.local_samples,
            seg_seed,
            generation,
            records: Vec::new(),
        })
    }

    fn sample(&mut self, ctx: &PatchContext<'_>) -> Result<TokenSequence> {
        let local = sample_surface(
            &ctx.mesh.submesh(ctx.patch_faces),
            self.local_samples,
            local_cloud_seed(self.seg_seed, ctx.patch_id),
        )?;
        let bundle = self.model.condition(
            self.global_feature.clone(),
            self.model.encode_point_cloud(&local)?,
            ctx.boundary.tokens.clone(),
        )?;
        let mut g = self.generation;
        g.seed = g.seed.wrapping_add(ctx.step as u64);
        let out = generate(self.model, &bundle, &g)?;
        self.records.push(GenerationRecord {
            patch_id: ctx.patch_id,
            tokens: out.tokens.len(),
            truncated: out.truncated,
        });
        Ok(out.tokens)
    }
}

impl PatchSource for ModelSource<'_> {
    fn tokens(&mut self, ctx: &PatchContext<'_>) -> patchgen::Result<TokenSequence> {
        self.sample(ctx).map_err(|e| patchgen::Error::Source(e.to_string()))
    }
}
