//! Desk-scale boundary-conditioned patch generator.
//!
//! A small causal transformer decodes one patch's token sequence after a
//! three-slot condition prefix (whole-shape cloud, patch cloud, GRU summary
//! of the boundary tokens), optionally attending to the boundary tokens
//! themselves. Forward and backward passes are written out by hand in f64.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod generate;
pub mod gradcheck;
pub mod gru;
pub mod model;
pub mod ops;
pub mod params;
pub mod single_mesh;
pub mod train;
pub mod transformer;

pub use config::{Ablation, ModelConfig};
pub use error::{ModelError, Result};
pub use generate::{generate, GenerationConfig, GenerationOutput};
pub use model::{ConditionBundle, GradientFault, Model, TrainingExample};
pub use train::{OptimConfig, StepStats, Trainer};
