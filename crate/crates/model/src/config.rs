use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

/// Conditioning pathways that can be switched off independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Global point-cloud feature in the condition prefix.
    pub use_global_pc: bool,
    /// GRU boundary embedding in the condition prefix.
    pub use_boundary_gru: bool,
    /// Boundary tokens inserted into the attended stream.
    pub use_boundary_self_attention: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_global_pc: true,
            use_boundary_gru: true,
            use_boundary_self_attention: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub gru_hidden: usize,
    /// Coordinate tokens plus TERM, BOS, PAD.
    pub vocab_size: usize,
    pub window: usize,
    pub window_overlap: f64,
    pub temperature: f64,
    pub ablation: Ablation,
    pub seed: u64,
    /// Hidden width of the frozen per-point encoder.
    pub point_hidden: usize,
    /// MLP expansion factor inside each block.
    pub ff_mult: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            hidden_dim: 256,
            heads: 8,
            gru_hidden: 256,
            vocab_size: 515,
            window: 9216,
            window_overlap: 0.5,
            temperature: 0.5,
            ablation: Ablation::default(),
            seed: 0,
            point_hidden: 128,
            ff_mult: 4,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 || self.hidden_dim == 0 || self.heads == 0 || self.gru_hidden == 0 {
            return bad("layers, hidden_dim, heads and gru_hidden must be positive".into());
        }
        if self.hidden_dim % self.heads != 0 {
            return bad(format!("hidden_dim {} not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.window_overlap) {
            return bad(format!("window_overlap must be in [0, 1), got {}", self.window_overlap));
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.window < 2 {
            return bad("window must be at least 2".into());
        }
        if self.point_hidden == 0 || self.ff_mult == 0 {
            return bad("point_hidden and ff_mult must be positive".into());
        }
        Ok(())
    }

    /// Coordinate resolution implied by the vocabulary size.
    pub fn resolution(&self) -> u32 {
        (self.vocab_size - 3) as u32
    }

    pub fn vocab(&self) -> patchgen::Vocab {
        patchgen::Vocab::new(self.resolution())
    }

    /// Distance between consecutive window starts.
    pub fn stride(&self) -> usize {
        ((self.window as f64 * (1.0 - self.window_overlap)).floor() as usize).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.stride(), 4608);
        assert_eq!(c.resolution(), 512);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig { hidden_dim: 30, heads: 4, ..Default::default() };
        assert!(c.validate().is_err());
        c = ModelConfig { temperature: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = ModelConfig { window_overlap: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"layers": 2, "ablation": {"use_boundary_gru": false}}"#).unwrap();
        assert_eq!(c.layers, 2);
        assert_eq!(c.hidden_dim, 256);
        assert!(!c.ablation.use_boundary_gru && c.ablation.use_global_pc);
    }
}
