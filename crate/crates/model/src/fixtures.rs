//! Deterministic synthetic inputs at tiny dimensions, for tests, gradient
//! checks and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchgen::{PatchFrame, TokenSequence};

use crate::config::{Ablation, ModelConfig};
use crate::model::{ConditionBundle, Model, Token, TrainingExample};

/// Coordinate resolution of [`tiny_config`] (vocabulary of 11).
pub const TINY_RESOLUTION: u32 = 8;

/// Two layers, width 16, two heads, GRU width 8.
pub fn tiny_config(window: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden_dim: 16,
        heads: 2,
        gru_hidden: 8,
        vocab_size: TINY_RESOLUTION as usize + 3,
        window,
        window_overlap: 0.5,
        temperature: 0.5,
        ablation,
        seed: 3,
        point_hidden: 8,
        ff_mult: 2,
        init_std: 0.3,
    }
}

/// Random coordinates for `faces` faces over a vocabulary of resolution `q`.
pub fn random_coords(rng: &mut ChaCha8Rng, faces: usize, q: u32) -> Vec<Token> {
    (0..faces * 9).map(|_| rng.gen_range(0..q)).collect()
}

pub fn random_feature(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A well-formed example: `boundary_faces` faces then TERM as the boundary,
/// `BOS, target_faces faces, TERM` as the target.
pub fn random_example(model: &Model, seed: u64, boundary_faces: usize, target_faces: usize) -> TrainingExample {
    let v = model.config.vocab();
    let q = model.config.resolution();
    let dim = model.encoder.out_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = random_coords(&mut rng, boundary_faces, q);
    b.push(v.term());
    let mut t = vec![v.bos()];
    t.extend(random_coords(&mut rng, target_faces, q));
    t.push(v.term());
    TrainingExample {
        global_feature: random_feature(&mut rng, dim),
        local_feature: random_feature(&mut rng, dim),
        boundary_tokens: TokenSequence::new(b),
        target_tokens: TokenSequence::new(t),
        frame: PatchFrame::new([0.0; 3], 1.0, q).expect("valid frame"),
    }
}

/// Condition bundle of an example (the GRU runs on its boundary tokens).
pub fn bundle_for(model: &Model, ex: &TrainingExample) -> ConditionBundle {
    model
        .condition(ex.global_feature.clone(), ex.local_feature.clone(), ex.boundary_tokens.clone())
        .expect("example matches model")
}

/// Largest elementwise relative difference, with a tiny denominator floor.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}
