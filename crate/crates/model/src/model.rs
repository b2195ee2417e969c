//! The generator: condition prefix, token embeddings, decoder stack, and
//! the chunked, masked next-token training pass.

use ndarray::{s, Array1, Array2};
use patchgen::{PatchFrame, SurfaceSamples, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::encoder::PointEncoder;
use crate::gru::{gru_backward, gru_forward, GruIds};
use crate::ops::{layer_norm, layer_norm_backward, log_sum_exp, LnCache};
use crate::params::{normal_matrix, seeded_rng, Grads, ParamId, ParamStore};
use crate::train::chunk_starts;
use crate::transformer::{accumulate_kv, BlockIds, LayerKv, Transformer};
use crate::{ModelError, Result};

pub use patchgen::quantizer::Token;

/// Number of condition prefix positions (global, local, boundary).
pub const CONDITION_SLOTS: usize = 3;

/// Everything the decoder is conditioned on for one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    pub global_feature: Vec<f64>,
    pub local_feature: Vec<f64>,
    /// Final GRU state over `boundary_tokens`; length `gru_hidden`.
    pub boundary_embedding: Vec<f64>,
    pub boundary_tokens: TokenSequence,
}

/// One patch to learn: encoded clouds, boundary prefix, and target tokens
/// (`BOS ... TERM`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub global_feature: Vec<f64>,
    pub local_feature: Vec<f64>,
    pub boundary_tokens: TokenSequence,
    pub target_tokens: TokenSequence,
    pub frame: PatchFrame,
}

impl TrainingExample {
    pub fn from_points(
        model: &Model,
        global_points: &SurfaceSamples,
        local_points: &SurfaceSamples,
        boundary_tokens: TokenSequence,
        target_tokens: TokenSequence,
        frame: PatchFrame,
    ) -> Result<Self> {
        Ok(TrainingExample {
            global_feature: model.encode_point_cloud(global_points)?,
            local_feature: model.encode_point_cloud(local_points)?,
            boundary_tokens,
            target_tokens,
            frame,
        })
    }
}

/// Multiplies selected analytic gradients, so gradient checks can prove
/// they detect a broken backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientFault {
    #[default]
    None,
    GruUpdateGate,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ModelIds {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub slot_emb: ParamId,
    pub ag_w: ParamId,
    pub ag_b: ParamId,
    pub al_w: ParamId,
    pub al_b: ParamId,
    pub ab_w: ParamId,
    pub ab_b: ParamId,
    pub gru: GruIds,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: PointEncoder,
    pub(crate) ids: ModelIds,
    pub(crate) transformer: Transformer,
    pub fault: GradientFault,
}

struct HeadCache {
    ln: LnCache,
    hf: Array2<f64>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let v = config.vocab_size;
        let std = config.init_std;
        let mut rng = seeded_rng(config.seed, 1);
        let mut store = ParamStore::new();
        let tok_emb = store.add("tok_emb", normal_matrix(v, d, std, &mut rng), true);
        let pos_emb = store.add("pos_emb", normal_matrix(config.window, d, std, &mut rng), true);
        let slot_emb = store.add("slot_emb", normal_matrix(CONDITION_SLOTS, d, std, &mut rng), true);
        // global and boundary adapters start at zero; the local one does not
        let ag_w = store.add("adapt_global.w", Array2::zeros((d, d)), true);
        let ag_b = store.add("adapt_global.b", Array2::zeros((1, d)), true);
        let al_w = store.add("adapt_local.w", normal_matrix(d, d, std, &mut rng), true);
        let al_b = store.add("adapt_local.b", Array2::zeros((1, d)), true);
        let ab_w = store.add("adapt_boundary.w", Array2::zeros((config.gru_hidden, d)), true);
        let ab_b = store.add("adapt_boundary.b", Array2::zeros((1, d)), true);
        let gru = GruIds::register(&mut store, v, config.gru_hidden, std, &mut rng);
        let blocks = (0..config.layers)
            .map(|l| BlockIds::register(&mut store, l, d, config.ff_mult, std, config.layers, &mut rng))
            .collect();
        let lnf_g = store.add("ln_f.g", Array2::ones((1, d)), true);
        let lnf_b = store.add("ln_f.b", Array2::zeros((1, d)), true);
        let out_w = store.add("out.w", normal_matrix(d, v, std, &mut rng), true);
        let out_b = store.add("out.b", Array2::zeros((1, v)), true);
        let encoder = PointEncoder::new(config.point_hidden, d, config.seed);
        Ok(Model {
            transformer: Transformer {
                blocks,
                heads: config.heads,
                d,
            },
            ids: ModelIds {
                tok_emb,
                pos_emb,
                slot_emb,
                ag_w,
                ag_b,
                al_w,
                al_b,
                ab_w,
                ab_b,
                gru,
                lnf_g,
                lnf_b,
                out_w,
                out_b,
            },
            config,
            store,
            encoder,
            fault: GradientFault::None,
        })
    }

    /// Adds Gaussian noise of the given scale to every trainable tensor,
    /// including the zero-initialized adapters.
    pub fn perturb_parameters(&mut self, seed: u64, std: f64) {
        let mut rng = seeded_rng(seed, 77);
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            if self.store.is_trainable(id) {
                let (r, c) = self.store.get(id).dim();
                let noise = normal_matrix(r, c, std, &mut rng);
                *self.store.get_mut(id) += &noise;
            }
        }
    }

    pub fn encode_point_cloud(&self, points: &SurfaceSamples) -> Result<Vec<f64>> {
        self.encoder.encode(points)
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        let v = self.config.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= v) {
            Some(&t) => Err(ModelError::Vocab { token: t, vocab: v }),
            None => Ok(()),
        }
    }

    pub fn encode_boundary_gru(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        self.check_tokens(&tokens.tokens)?;
        Ok(gru_forward(&self.store, &self.ids.gru, &tokens.tokens).0.to_vec())
    }

    pub fn condition(&self, global_feature: Vec<f64>, local_feature: Vec<f64>, boundary_tokens: TokenSequence) -> Result<ConditionBundle> {
        let boundary_embedding = self.encode_boundary_gru(&boundary_tokens)?;
        Ok(ConditionBundle {
            global_feature,
            local_feature,
            boundary_embedding,
            boundary_tokens,
        })
    }

    fn check_feature(&self, name: &str, f: &[f64], want: usize) -> Result<()> {
        if f.len() != want {
            return Err(ModelError::Config(format!("{name} has length {}, expected {want}", f.len())));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::Config(format!("{name} is not finite")));
        }
        Ok(())
    }

    /// The three condition prefix vectors. Disabled pathways contribute
    /// only their slot embedding.
    fn condition_matrix(&self, global: &[f64], local: &[f64], boundary: &[f64]) -> Result<Array2<f64>> {
        let d = self.config.hidden_dim;
        self.check_feature("global_feature", global, self.encoder.out_dim())?;
        self.check_feature("local_feature", local, self.encoder.out_dim())?;
        self.check_feature("boundary_embedding", boundary, self.config.gru_hidden)?;
        let st = &self.store;
        let ab = &self.config.ablation;
        let mut c = st.get(self.ids.slot_emb).clone();
        let proj = |f: &[f64], w: ParamId, b: ParamId| Array1::from(f.to_vec()).dot(st.get(w)) + &st.get(b).row(0);
        if ab.use_global_pc {
            let mut r = c.row_mut(0);
            r += &proj(global, self.ids.ag_w, self.ids.ag_b);
        }
        {
            let mut r = c.row_mut(1);
            r += &proj(local, self.ids.al_w, self.ids.al_b);
        }
        if ab.use_boundary_gru {
            let mut r = c.row_mut(2);
            r += &proj(boundary, self.ids.ab_w, self.ids.ab_b);
        }
        debug_assert_eq!(c.ncols(), d);
        Ok(c)
    }

    /// Backward of [`condition_matrix`]; returns the gradient reaching the
    /// boundary embedding.
    fn condition_backward(&self, dc: &Array2<f64>, global: &[f64], local: &[f64], boundary: &[f64], grads: &mut Grads) -> Array1<f64> {
        *grads.get_mut(self.ids.slot_emb) += dc;
        let outer = |f: &[f64], g: ndarray::ArrayView1<f64>| {
            let col = Array1::from(f.to_vec()).insert_axis(ndarray::Axis(1));
            col.dot(&g.insert_axis(ndarray::Axis(0)))
        };
        let ab = self.config.ablation;
        if ab.use_global_pc {
            *grads.get_mut(self.ids.ag_w) += &outer(global, dc.row(0));
            let mut r = grads.get_mut(self.ids.ag_b).row_mut(0);
            r += &dc.row(0);
        }
        *grads.get_mut(self.ids.al_w) += &outer(local, dc.row(1));
        {
            let mut r = grads.get_mut(self.ids.al_b).row_mut(0);
            r += &dc.row(1);
        }
        if ab.use_boundary_gru {
            *grads.get_mut(self.ids.ab_w) += &outer(boundary, dc.row(2));
            let mut r = grads.get_mut(self.ids.ab_b).row_mut(0);
            r += &dc.row(2);
            self.store.get(self.ids.ab_w).dot(&dc.row(2))
        } else {
            Array1::zeros(self.config.gru_hidden)
        }
    }

    /// Attended token stream: boundary tokens (when self-attention over
    /// them is enabled) followed by `tokens`.
    pub fn stream(&self, boundary_tokens: &TokenSequence, tokens: &[Token]) -> Vec<Token> {
        let mut s = Vec::with_capacity(boundary_tokens.len() + tokens.len());
        if self.config.ablation.use_boundary_self_attention {
            s.extend_from_slice(&boundary_tokens.tokens);
        }
        s.extend_from_slice(tokens);
        s
    }

    pub(crate) fn embed(&self, tokens: &[Token], first_pos: usize) -> Array2<f64> {
        let te = self.store.get(self.ids.tok_emb);
        let pe = self.store.get(self.ids.pos_emb);
        let mut x = Array2::zeros((tokens.len(), self.config.hidden_dim));
        for (i, &t) in tokens.iter().enumerate() {
            let mut r = x.row_mut(i);
            r.assign(&te.row(t as usize));
            r += &pe.row(first_pos + i);
        }
        x
    }

    fn head(&self, h: &Array2<f64>) -> (Array2<f64>, HeadCache) {
        let st = &self.store;
        let (hf, ln) = layer_norm(h, st.get(self.ids.lnf_g).row(0), st.get(self.ids.lnf_b).row(0));
        let logits = hf.dot(st.get(self.ids.out_w)) + &st.get(self.ids.out_b).row(0);
        (logits, HeadCache { ln, hf })
    }

    pub(crate) fn logits(&self, h: &Array2<f64>) -> Array2<f64> {
        self.head(h).0
    }

    fn head_backward(&self, dlogits: &Array2<f64>, hc: &HeadCache, grads: &mut Grads) -> Array2<f64> {
        *grads.get_mut(self.ids.out_w) += &hc.hf.t().dot(dlogits);
        crate::ops::bias_grad(grads.get_mut(self.ids.out_b), dlogits);
        let dhf = dlogits.dot(&self.store.get(self.ids.out_w).t());
        let mut dg = grads.get(self.ids.lnf_g).clone();
        let mut db = grads.get(self.ids.lnf_b).clone();
        let dh = layer_norm_backward(&dhf, &hc.ln, self.store.get(self.ids.lnf_g).row(0), &mut dg, &mut db);
        *grads.get_mut(self.ids.lnf_g) = dg;
        *grads.get_mut(self.ids.lnf_b) = db;
        dh
    }

    /// Keys/values of the condition prefix for a bundle.
    pub(crate) fn prefix_kv(&self, bundle: &ConditionBundle) -> Result<Vec<LayerKv>> {
        let c = self.condition_matrix(&bundle.global_feature, &bundle.local_feature, &bundle.boundary_embedding)?;
        Ok(self.transformer.forward(&self.store, c, &[], false).1)
    }

    /// Logits for every position of `token_prefix` given the bundle; the
    /// whole stream must fit one window.
    pub fn forward(&self, bundle: &ConditionBundle, token_prefix: &[Token]) -> Result<Array2<f64>> {
        self.check_tokens(&bundle.boundary_tokens.tokens)?;
        self.check_tokens(token_prefix)?;
        let stream = self.stream(&bundle.boundary_tokens, token_prefix);
        if stream.len() > self.config.window {
            return Err(ModelError::Window {
                len: stream.len(),
                window: self.config.window,
            });
        }
        let past = self.prefix_kv(bundle)?;
        let x = self.embed(&stream, 0);
        let (h, _, _) = self.transformer.forward(&self.store, x, &past, false);
        let logits = self.logits(&h);
        let off = stream.len() - token_prefix.len();
        Ok(logits.slice(s![off.., ..]).to_owned())
    }

    /// Stream for a training example and the index of its BOS token.
    pub fn training_stream(&self, ex: &TrainingExample) -> (Vec<Token>, usize) {
        let stream = self.stream(&ex.boundary_tokens, &ex.target_tokens.tokens);
        let bos = stream.len() - ex.target_tokens.len();
        (stream, bos)
    }

    /// Default next-token labels: `labels[j] = stream[j + 1]`, PAD at the end.
    pub fn default_labels(&self, stream: &[Token]) -> Vec<Token> {
        let pad = self.config.vocab().pad();
        let mut l: Vec<Token> = stream[1..].to_vec();
        l.push(pad);
        l
    }

    /// Whether position `j` contributes to the loss: it predicts a target
    /// token after BOS.
    pub fn loss_mask(stream_len: usize, bos: usize) -> Vec<bool> {
        (0..stream_len).map(|j| j >= bos && j + 1 < stream_len).collect()
    }

    fn validate_example(&self, ex: &TrainingExample) -> Result<()> {
        if ex.target_tokens.is_empty() || ex.boundary_tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        self.check_tokens(&ex.boundary_tokens.tokens)?;
        self.check_tokens(&ex.target_tokens.tokens)?;
        let v = self.config.vocab();
        if *ex.target_tokens.tokens.last().unwrap() != v.term() {
            return Err(ModelError::Config("target tokens must end with TERM".into()));
        }
        Ok(())
    }

    /// Summed cross-entropy and scored-token count for one example,
    /// accumulating unnormalized gradients when `grads` is given.
    pub fn example_pass(&self, ex: &TrainingExample, labels: Option<&[Token]>, mut grads: Option<&mut Grads>) -> Result<(f64, usize)> {
        self.validate_example(ex)?;
        let (stream, bos) = self.training_stream(ex);
        let owned;
        let labels = match labels {
            Some(l) => {
                if l.len() != stream.len() {
                    return Err(ModelError::Config(format!("{} labels for {} positions", l.len(), stream.len())));
                }
                l
            }
            None => {
                owned = self.default_labels(&stream);
                &owned
            }
        };
        let mask = Self::loss_mask(stream.len(), bos);
        let want_grad = grads.is_some();

        let (h_b, gru_cache) = if self.config.ablation.use_boundary_gru {
            let (h, c) = gru_forward(&self.store, &self.ids.gru, &ex.boundary_tokens.tokens);
            (h, Some(c))
        } else {
            (Array1::zeros(self.config.gru_hidden), None)
        };
        let hb = h_b.to_vec();
        let cond = self.condition_matrix(&ex.global_feature, &ex.local_feature, &hb)?;
        let (_, prefix_kv, prefix_cache) = self.transformer.forward(&self.store, cond, &[], want_grad);
        let mut d_prefix: Vec<LayerKv> = prefix_kv.iter().map(|kv| LayerKv {
            k: Array2::zeros(kv.k.raw_dim()),
            v: Array2::zeros(kv.v.raw_dim()),
        }).collect();

        let w = self.config.window;
        let n = stream.len();
        let mut covered = 0usize;
        let mut total = 0.0;
        let mut count = 0usize;
        for s0 in chunk_starts(n, w, self.config.stride()) {
            let e = (s0 + w).min(n);
            let x = self.embed(&stream[s0..e], 0);
            let (h, _, cache) = self.transformer.forward(&self.store, x, &prefix_kv, want_grad);
            let (logits, hc) = self.head(&h);
            let mut dlog = want_grad.then(|| Array2::zeros(logits.raw_dim()));
            for i in 0..(e - s0) {
                let j = s0 + i;
                if !mask[j] || j + 1 < covered {
                    continue;
                }
                let row = logits.row(i);
                let lse = log_sum_exp(row);
                let y = labels[j] as usize;
                if y >= self.config.vocab_size {
                    return Err(ModelError::Vocab { token: labels[j], vocab: self.config.vocab_size });
                }
                total += lse - row[y];
                count += 1;
                if let Some(d) = dlog.as_mut() {
                    let mut dr = d.row_mut(i);
                    for (k, v) in row.iter().enumerate() {
                        dr[k] = (v - lse).exp();
                    }
                    dr[y] -= 1.0;
                }
            }
            covered = e + 1;
            if let (Some(g), Some(d), Some(cache)) = (grads.as_deref_mut(), dlog, cache) {
                let dh = self.head_backward(&d, &hc, g);
                let (dx, dpast) = self.transformer.backward(&self.store, &cache, dh, None, g);
                accumulate_kv(&mut d_prefix, &dpast);
                let te = g.get_mut(self.ids.tok_emb);
                for (i, &t) in stream[s0..e].iter().enumerate() {
                    let mut r = te.row_mut(t as usize);
                    r += &dx.row(i);
                }
                let mut pe = g.get_mut(self.ids.pos_emb).slice_mut(s![0..(e - s0), ..]);
                pe += &dx;
            }
        }
        if let (Some(g), Some(pc)) = (grads, prefix_cache) {
            let zero = Array2::zeros((CONDITION_SLOTS, self.config.hidden_dim));
            let (dcond, _) = self.transformer.backward(&self.store, &pc, zero, Some(&d_prefix), g);
            let dhb = self.condition_backward(&dcond, &ex.global_feature, &ex.local_feature, &hb, g);
            if let Some(gc) = gru_cache {
                let scale = if self.fault == GradientFault::GruUpdateGate { 2.0 } else { 1.0 };
                gru_backward(&self.store, &self.ids.gru, &gc, &dhb, g, scale);
            }
        }
        Ok((total, count))
    }

    /// Mean next-token loss over target positions of `ex`.
    pub fn example_loss(&self, ex: &TrainingExample) -> Result<f64> {
        let (s, n) = self.example_pass(ex, None, None)?;
        Ok(s / n.max(1) as f64)
    }

    /// Like [`example_loss`](Self::example_loss) with explicit per-position
    /// labels; labels at masked positions have no effect.
    pub fn example_loss_with_labels(&self, ex: &TrainingExample, labels: &[Token]) -> Result<f64> {
        let (s, n) = self.example_pass(ex, Some(labels), None)?;
        Ok(s / n.max(1) as f64)
    }

    /// Token-weighted mean loss and its gradient over a batch.
    pub fn loss_and_grads(&self, batch: &[TrainingExample]) -> Result<(f64, Grads, usize)> {
        let mut grads = self.store.zeros_like();
        let mut total = 0.0;
        let mut count = 0;
        for ex in batch {
            let (s, n) = self.example_pass(ex, None, Some(&mut grads))?;
            total += s;
            count += n;
        }
        let denom = count.max(1) as f64;
        grads.scale(1.0 / denom);
        Ok((total / denom, grads, count))
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        self.store.find(name).map(|id| self.store.get(id))
    }
}
