//! Resolved run configuration: defaults, then the `--config` file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use patchgen::metrics::MetricsConfig;
use patchgen::pipeline::{BoundaryConfig, PipelineSettings, QuantizationConfig, SegmentationConfig, SegmentationMode};
use patchgen::preprocess::PreprocessOptions;
use patchgen::segmentation::UpAxis;
use patchgen_model::single_mesh::DataConfig;
use patchgen_model::{GenerationConfig, ModelConfig, OptimConfig};

pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Distinct segmentation seeds cycled in `--single-mesh` runs; 0 draws
    /// a new one every epoch.
    pub seg_seed_pool: usize,
    pub global_samples: usize,
    pub local_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = DataConfig::default();
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            optim: OptimConfig::default(),
            seg_seed_pool: 0,
            global_samples: d.global_samples,
            local_samples: d.local_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub quantization: QuantizationConfig,
    pub boundary: BoundaryConfig,
    pub metrics: MetricsConfig,
    pub preprocess: PreprocessOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
}

/// Segmentation, quantization, boundary and metric flags shared by the
/// geometric commands.
#[derive(Debug, Clone, Default, Args)]
pub struct GeomFlags {
    /// random_fps, components or labels.
    #[arg(long)]
    pub mode: Option<SegmentationMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Explicit patch count (overrides --lambda).
    #[arg(long)]
    pub n_patches: Option<usize>,
    #[arg(long)]
    pub up_axis: Option<UpAxis>,
    /// Per-face label file for labels mode.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Boundary faces per patch.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub placeholder_len: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sample_count: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// `--seed` reseeds every stochastic stage.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.segmentation.seed = s;
            self.preprocess.seed = s;
            self.model.seed = s;
            self.generation.seed = s;
        }
    }

    pub fn apply_geom(&mut self, f: &GeomFlags) {
        let s = &mut self.segmentation;
        if let Some(m) = f.mode {
            s.mode = m;
        }
        if f.lambda.is_some() {
            s.lambda = f.lambda;
        }
        if f.n_patches.is_some() {
            s.n_patches = f.n_patches;
        }
        if let Some(a) = f.up_axis {
            s.up_axis = a;
        }
        if f.labels.is_some() {
            s.labels = f.labels.clone();
        }
        if let Some(r) = f.resolution {
            self.quantization.resolution = r;
        }
        if let Some(k) = f.k {
            self.boundary.k = k;
        }
        if let Some(p) = f.placeholder_len {
            self.boundary.placeholder_len = p;
        }
        if let Some(t) = f.tau {
            self.metrics.tau = t;
        }
        if let Some(n) = f.sample_count {
            self.metrics.sample_count = n;
        }
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            segmentation: self.segmentation.clone(),
            quantization: self.quantization,
            boundary: self.boundary,
            metrics: self.metrics,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.settings().validate()?;
        if let Some(l) = &self.segmentation.labels {
            if self.segmentation.mode == SegmentationMode::Labels && !l.exists() {
                bail!("label file {} does not exist", l.display());
            }
        }
        Ok(())
    }

    /// Checks that a model's vocabulary matches the quantization resolution.
    pub fn check_model(&self, model: &ModelConfig) -> anyhow::Result<()> {
        let want = self.quantization.resolution as usize + 3;
        if model.vocab_size != want {
            bail!(
                "model vocabulary {} does not match resolution {} (expected {want})",
                model.vocab_size,
                self.quantization.resolution
            );
        }
        Ok(())
    }

    pub fn data(&self) -> DataConfig {
        DataConfig {
            global_samples: self.train.global_samples,
            local_samples: self.train.local_samples,
            segmentation: self.segmentation.clone(),
            seg_seed_pool: self.train.seg_seed_pool,
            boundary: self.settings().boundary_params(),
        }
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
