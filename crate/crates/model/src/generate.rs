//! Autoregressive decoding with an optional key/value cache.

use ndarray::{s, Array1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ConditionBundle, Model, Token, CONDITION_SLOTS};
use crate::params::seeded_rng;
use crate::transformer::LayerKv;
use crate::{ModelError, Result};
use patchgen::TokenSequence;

/// Temperatures below this decode greedily.
pub const GREEDY_BELOW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Cap on generated tokens after BOS, TERM included.
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    pub use_kv_cache: bool,
    /// Keep the logits behind every sampled token.
    pub record_logits: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_tokens: 9 * 4000 + 1,
            temperature: 0.5,
            seed: 0,
            use_kv_cache: true,
            record_logits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    /// `BOS ...` ending in TERM unless `truncated`.
    pub tokens: TokenSequence,
    pub truncated: bool,
    pub logits_trace: Option<Vec<Vec<f64>>>,
}

/// Stateful decoder over one condition bundle. Positions index a sliding
/// window whose starts follow the same schedule as training chunks, so a
/// token's logits see exactly the context they were trained with.
pub struct Decoder<'a> {
    model: &'a Model,
    stream: Vec<Token>,
    start: usize,
    /// Condition prefix followed by the current window's keys/values.
    past: Vec<LayerKv>,
    use_cache: bool,
    logits: Array1<f64>,
}

impl<'a> Decoder<'a> {
    /// Starts from the boundary stream followed by BOS.
    pub fn new(model: &'a Model, bundle: &ConditionBundle, use_cache: bool) -> Result<Self> {
        let mut stream = model.stream(&bundle.boundary_tokens, &[]);
        stream.push(model.config.vocab().bos());
        if let Some(&t) = stream.iter().find(|&&t| t as usize >= model.config.vocab_size) {
            return Err(ModelError::Vocab {
                token: t,
                vocab: model.config.vocab_size,
            });
        }
        let past = model.prefix_kv(bundle)?;
        let mut d = Decoder {
            model,
            stream,
            start: 0,
            past,
            use_cache,
            logits: Array1::zeros(model.config.vocab_size),
        };
        d.advance_start();
        d.recompute();
        Ok(d)
    }

    fn advance_start(&mut self) -> bool {
        let j = self.stream.len() - 1;
        let w = self.model.config.window;
        let stride = self.model.config.stride().max(1);
        let mut moved = false;
        while j >= self.start + w {
            self.start += stride;
            moved = true;
        }
        moved
    }

    /// Recomputes the whole current window from scratch.
    fn recompute(&mut self) {
        for kv in &mut self.past {
            kv.truncate(CONDITION_SLOTS);
        }
        let x = self.model.embed(&self.stream[self.start..], 0);
        let (h, own, _) = self.model.transformer.forward(&self.model.store, x, &self.past, false);
        for (p, o) in self.past.iter_mut().zip(&own) {
            p.append(o);
        }
        let last = h.nrows() - 1;
        self.logits = self.model.logits(&h.slice(s![last..=last, ..]).to_owned()).row(0).to_owned();
    }

    /// Next-token logits at the end of the stream.
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    pub fn stream(&self) -> &[Token] {
        &self.stream
    }

    pub fn window_start(&self) -> usize {
        self.start
    }

    pub fn push(&mut self, token: Token) -> Result<()> {
        if token as usize >= self.model.config.vocab_size {
            return Err(ModelError::Vocab {
                token,
                vocab: self.model.config.vocab_size,
            });
        }
        self.stream.push(token);
        let moved = self.advance_start();
        if moved || !self.use_cache {
            self.recompute();
            return Ok(());
        }
        let j = self.stream.len() - 1;
        let x = self.model.embed(&[token], j - self.start);
        let (h, own, _) = self.model.transformer.forward(&self.model.store, x, &self.past, false);
        for (p, o) in self.past.iter_mut().zip(&own) {
            p.append(o);
        }
        self.logits = self.model.logits(&h).row(0).to_owned();
        Ok(())
    }
}

/// Draws a token from `logits`, never BOS or PAD. Greedy below
/// [`GREEDY_BELOW`].
pub fn sample_token(model: &Model, logits: &Array1<f64>, temperature: f64, rng: &mut ChaCha8Rng) -> Token {
    let v = model.config.vocab();
    let allowed = |t: usize| t != v.bos() as usize && t != v.pad() as usize;
    if temperature < GREEDY_BELOW {
        let mut best = v.term() as usize;
        let mut best_v = f64::NEG_INFINITY;
        for (t, &l) in logits.iter().enumerate() {
            if allowed(t) && l > best_v {
                best = t;
                best_v = l;
            }
        }
        return best as Token;
    }
    let m = logits
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(t, &l)| if allowed(t) { ((l - m) / temperature).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = v.term() as usize;
    for (t, &wt) in w.iter().enumerate() {
        if wt > 0.0 {
            last = t;
            if u < wt {
                return t as Token;
            }
            u -= wt;
        }
    }
    last as Token
}

/// Samples a patch body for `bundle`.
pub fn generate(model: &Model, bundle: &ConditionBundle, cfg: &GenerationConfig) -> Result<GenerationOutput> {
    if !cfg.temperature.is_finite() || cfg.temperature < 0.0 {
        return Err(ModelError::Config(format!("invalid temperature {}", cfg.temperature)));
    }
    let vocab = model.config.vocab();
    let mut rng = seeded_rng(cfg.seed, 3);
    let mut dec = Decoder::new(model, bundle, cfg.use_kv_cache)?;
    let mut tokens = vec![vocab.bos()];
    let mut trace = cfg.record_logits.then(Vec::new);
    let mut truncated = true;
    for _ in 0..cfg.max_tokens {
        let t = sample_token(model, dec.logits(), cfg.temperature, &mut rng);
        if let Some(tr) = trace.as_mut() {
            tr.push(dec.logits().to_vec());
        }
        tokens.push(t);
        if t == vocab.term() {
            truncated = false;
            break;
        }
        dec.push(t)?;
    }
    Ok(GenerationOutput {
        tokens: TokenSequence::new(tokens),
        truncated,
        logits_trace: trace,
    })
}

/// Decoder logits after each of `tokens` (which start after BOS is implied),
/// one row per prefix length `0..=tokens.len()`.
pub fn teacher_forced_logits(model: &Model, bundle: &ConditionBundle, tokens: &[Token], use_cache: bool) -> Result<Vec<Array1<f64>>> {
    let mut dec = Decoder::new(model, bundle, use_cache)?;
    let mut out = vec![dec.logits().clone()];
    for &t in tokens {
        dec.push(t)?;
        out.push(dec.logits().clone());
    }
    Ok(out)
}
