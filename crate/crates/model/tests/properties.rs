use ndarray::Array1;
use patchgen_model::checkpoint::{load_checkpoint, save_checkpoint};
use patchgen_model::fixtures::{bundle_for, random_example, tiny_config};
use patchgen_model::generate::{generate, sample_token, GenerationConfig};
use patchgen_model::train::chunk_starts;
use patchgen_model::{Ablation, Model, OptimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunks_cover_every_position(len in 1usize..5000, window in 2usize..600) {
        let stride = (window / 2).max(1);
        let st = chunk_starts(len, window, stride);
        prop_assert_eq!(st[0], 0);
        prop_assert!(st.last().unwrap() + window >= len);
        prop_assert!(st.windows(2).all(|w| w[1] - w[0] == stride));
        if st.len() > 1 {
            prop_assert!(st[st.len() - 2] + window < len);
        }
    }

    #[test]
    fn learning_rate_stays_in_band(step in 0usize..2000, warmup in 0usize..100) {
        let o = OptimConfig { warmup_steps: warmup, total_steps: 1000, ..Default::default() };
        let lr = o.lr_at(step);
        prop_assert!(lr > 0.0 && lr <= o.lr_max * (1.0 + 1e-12));
        if step >= warmup {
            prop_assert!(lr >= o.lr_min * (1.0 - 1e-12));
        }
    }

    #[test]
    fn sampling_never_emits_bos_or_pad(seed in 0u64..1000, temp in 0.0f64..3.0) {
        let m = Model::new(tiny_config(32, Ablation::default())).unwrap();
        let v = m.config.vocab();
        let mut logits = Array1::zeros(m.config.vocab_size);
        logits[v.bos() as usize] = 50.0;
        logits[v.pad() as usize] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_token(&m, &logits, temp, &mut rng);
        prop_assert!(t != v.bos() && t != v.pad());
    }
}

#[test]
fn checkpoint_file_preserves_generation() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Model::new(tiny_config(32, Ablation::default())).unwrap();
    m.perturb_parameters(2, 0.2);
    // round through f32 once so both models hold identical values
    let p = dir.path().join("a.mmck");
    save_checkpoint(&p, &m, serde_json::Value::Null).unwrap();
    let (a, _) = load_checkpoint(&p).unwrap();
    let q = dir.path().join("b.mmck");
    save_checkpoint(&q, &a, serde_json::Value::Null).unwrap();
    let (b, _) = load_checkpoint(&q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    let ex = random_example(&a, 3, 1, 1);
    let cfg = GenerationConfig { max_tokens: 40, seed: 9, ..Default::default() };
    let ga = generate(&a, &bundle_for(&a, &ex), &cfg).unwrap();
    let gb = generate(&b, &bundle_for(&b, &ex), &cfg).unwrap();
    assert_eq!(ga.tokens, gb.tokens);
}
