//! Pre-norm causal transformer blocks processed segment by segment.
//!
//! A segment attends causally to itself and fully to the keys/values of
//! earlier segments (`past`). Attention probabilities are not stored; the
//! backward pass recomputes them from `Q`, `K` and the per-row
//! log-sum-exp.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::ops::{add_bias, bias_grad, gelu, gelu_grad, layer_norm, layer_norm_backward, LnCache};
use crate::params::{normal_matrix, Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wqkv: ParamId,
    pub bqkv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BlockIds {
    pub fn register(store: &mut ParamStore, l: usize, d: usize, ff: usize, std: f64, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let p = |n: &str| format!("blocks.{l}.{n}");
        let proj_std = std / (2.0 * layers as f64).sqrt();
        BlockIds {
            ln1_g: store.add(p("ln1.g"), Array2::ones((1, d)), true),
            ln1_b: store.add(p("ln1.b"), Array2::zeros((1, d)), true),
            wqkv: store.add(p("attn.wqkv"), normal_matrix(d, 3 * d, std, rng), true),
            bqkv: store.add(p("attn.bqkv"), Array2::zeros((1, 3 * d)), true),
            wo: store.add(p("attn.wo"), normal_matrix(d, d, proj_std, rng), true),
            bo: store.add(p("attn.bo"), Array2::zeros((1, d)), true),
            ln2_g: store.add(p("ln2.g"), Array2::ones((1, d)), true),
            ln2_b: store.add(p("ln2.b"), Array2::zeros((1, d)), true),
            w1: store.add(p("mlp.w1"), normal_matrix(d, ff * d, std, rng), true),
            b1: store.add(p("mlp.b1"), Array2::zeros((1, ff * d)), true),
            w2: store.add(p("mlp.w2"), normal_matrix(ff * d, d, proj_std, rng), true),
            b2: store.add(p("mlp.b2"), Array2::zeros((1, d)), true),
        }
    }
}

/// Keys and values of one layer, one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

impl LayerKv {
    pub fn empty(d: usize) -> Self {
        LayerKv {
            k: Array2::zeros((0, d)),
            v: Array2::zeros((0, d)),
        }
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    pub fn append(&mut self, other: &LayerKv) {
        self.k.append(Axis(0), other.k.view()).expect("key width");
        self.v.append(Axis(0), other.v.view()).expect("value width");
    }

    pub fn truncate(&mut self, n: usize) {
        self.k = self.k.slice(s![0..n, ..]).to_owned();
        self.v = self.v.slice(s![0..n, ..]).to_owned();
    }

    fn add_assign(&mut self, other: &LayerKv) {
        self.k += &other.k;
        self.v += &other.v;
    }
}

pub struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k_all: Array2<f64>,
    v_all: Array2<f64>,
    lse: Vec<Array1<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    c: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

pub struct SegmentCache {
    pub past_len: usize,
    layers: Vec<LayerCache>,
}

fn cat(past: Option<&Array2<f64>>, own: ArrayView2<f64>) -> Array2<f64> {
    match past {
        Some(p) if p.nrows() > 0 => concatenate![Axis(0), p.view(), own],
        _ => own.to_owned(),
    }
}

/// Causal scores for head-sliced `q` (n x dh) against `k` (m x dh) with
/// `p = m - n` past rows: row `i` may see columns `0 ..= p + i`.
fn masked_probs(q: ArrayView2<f64>, k: ArrayView2<f64>, p: usize, scale: f64, lse: Option<&Array1<f64>>) -> (Array2<f64>, Array1<f64>) {
    let mut sc = q.dot(&k.t());
    let n = sc.nrows();
    let m = sc.ncols();
    let mut out_lse = Array1::zeros(n);
    for i in 0..n {
        let lim = (p + i + 1).min(m);
        let mut row = sc.row_mut(i);
        for j in 0..lim {
            row[j] *= scale;
        }
        let l = match lse {
            Some(l) => l[i],
            None => {
                let mx = row.iter().take(lim).copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().take(lim).map(|&v| (v - mx).exp()).sum();
                mx + sum.ln()
            }
        };
        out_lse[i] = l;
        for j in 0..m {
            row[j] = if j < lim { (row[j] - l).exp() } else { 0.0 };
        }
    }
    (sc, out_lse)
}

pub struct Transformer {
    pub blocks: Vec<BlockIds>,
    pub heads: usize,
    pub d: usize,
}

impl Transformer {
    /// Runs one segment. Returns the residual stream after the last block
    /// and this segment's per-layer keys/values.
    pub fn forward(
        &self,
        store: &ParamStore,
        mut x: Array2<f64>,
        past: &[LayerKv],
        keep_cache: bool,
    ) -> (Array2<f64>, Vec<LayerKv>, Option<SegmentCache>) {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = past.first().map_or(0, |kv| kv.len());
        let mut own = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            let (a, ln1) = layer_norm(&x, store.get(b.ln1_g).row(0), store.get(b.ln1_b).row(0));
            let mut qkv = a.dot(store.get(b.wqkv));
            add_bias(&mut qkv, store.get(b.bqkv));
            let q = qkv.slice(s![.., 0..d]).to_owned();
            let k = qkv.slice(s![.., d..2 * d]);
            let v = qkv.slice(s![.., 2 * d..3 * d]);
            let k_all = cat(past.get(l).map(|kv| &kv.k), k);
            let v_all = cat(past.get(l).map(|kv| &kv.v), v);
            let n = x.nrows();
            let mut o = Array2::zeros((n, d));
            let mut lses = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (probs, lse) = masked_probs(q.slice(cols), k_all.slice(cols), p, scale, None);
                o.slice_mut(cols).assign(&probs.dot(&v_all.slice(cols)));
                lses.push(lse);
            }
            let mut y = o.dot(store.get(b.wo));
            add_bias(&mut y, store.get(b.bo));
            let x1 = &x + &y;
            let (c, ln2) = layer_norm(&x1, store.get(b.ln2_g).row(0), store.get(b.ln2_b).row(0));
            let mut u = c.dot(store.get(b.w1));
            add_bias(&mut u, store.get(b.b1));
            let g = u.mapv(gelu);
            let mut f = g.dot(store.get(b.w2));
            add_bias(&mut f, store.get(b.b2));
            x = &x1 + &f;
            own.push(LayerKv {
                k: k_all.slice(s![p.., ..]).to_owned(),
                v: v_all.slice(s![p.., ..]).to_owned(),
            });
            if keep_cache {
                caches.push(LayerCache {
                    ln1,
                    a,
                    q,
                    k_all,
                    v_all,
                    lse: lses,
                    o,
                    ln2,
                    c,
                    u,
                    g,
                });
            }
        }
        let cache = keep_cache.then_some(SegmentCache {
            past_len: p,
            layers: caches,
        });
        (x, own, cache)
    }

    /// Backward through one segment. `d_own` carries gradients arriving at
    /// this segment's keys/values from later segments. Returns the input
    /// gradient and gradients for the `past` keys/values.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &SegmentCache,
        mut dx: Array2<f64>,
        d_own: Option<&[LayerKv]>,
        grads: &mut Grads,
    ) -> (Array2<f64>, Vec<LayerKv>) {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = cache.past_len;
        let mut d_past = vec![LayerKv::empty(d); self.blocks.len()];
        for l in (0..self.blocks.len()).rev() {
            let b = &self.blocks[l];
            let lc = &cache.layers[l];
            // MLP
            let df = &dx;
            *grads.get_mut(b.w2) += &lc.g.t().dot(df);
            bias_grad(grads.get_mut(b.b2), df);
            let dg = df.dot(&store.get(b.w2).t());
            let du = &dg * &lc.u.mapv(gelu_grad);
            *grads.get_mut(b.w1) += &lc.c.t().dot(&du);
            bias_grad(grads.get_mut(b.b1), &du);
            let dc = du.dot(&store.get(b.w1).t());
            let (mut g2, mut b2) = (grads.get(b.ln2_g).clone(), grads.get(b.ln2_b).clone());
            let dx1 = &dx + &layer_norm_backward(&dc, &lc.ln2, store.get(b.ln2_g).row(0), &mut g2, &mut b2);
            *grads.get_mut(b.ln2_g) = g2;
            *grads.get_mut(b.ln2_b) = b2;
            // attention output projection
            *grads.get_mut(b.wo) += &lc.o.t().dot(&dx1);
            bias_grad(grads.get_mut(b.bo), &dx1);
            let d_o = dx1.dot(&store.get(b.wo).t());
            let n = d_o.nrows();
            let m = lc.k_all.nrows();
            let mut dq = Array2::zeros((n, d));
            let mut dk_all = Array2::zeros((m, d));
            let mut dv_all = Array2::zeros((m, d));
            if let Some(own) = d_own {
                dk_all.slice_mut(s![p.., ..]).assign(&own[l].k);
                dv_all.slice_mut(s![p.., ..]).assign(&own[l].v);
            }
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (probs, _) = masked_probs(lc.q.slice(cols), lc.k_all.slice(cols), p, scale, Some(&lc.lse[h]));
                let doh = d_o.slice(cols);
                {
                    let mut dv = dv_all.slice_mut(cols);
                    dv += &probs.t().dot(&doh);
                }
                let dp = doh.dot(&lc.v_all.slice(cols).t());
                let mut ds = &probs * &dp;
                for i in 0..n {
                    let rs: f64 = ds.row(i).sum();
                    let mut row = ds.row_mut(i);
                    for j in 0..m {
                        row[j] -= probs[[i, j]] * rs;
                    }
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k_all.slice(cols)));
                let mut dk = dk_all.slice_mut(cols);
                dk += &ds.t().dot(&lc.q.slice(cols));
            }
            d_past[l] = LayerKv {
                k: dk_all.slice(s![0..p, ..]).to_owned(),
                v: dv_all.slice(s![0..p, ..]).to_owned(),
            };
            let dqkv = concatenate![Axis(1), dq, dk_all.slice(s![p.., ..]), dv_all.slice(s![p.., ..])];
            *grads.get_mut(b.wqkv) += &lc.a.t().dot(&dqkv);
            bias_grad(grads.get_mut(b.bqkv), &dqkv);
            let da = dqkv.dot(&store.get(b.wqkv).t());
            let (mut g1, mut b1) = (grads.get(b.ln1_g).clone(), grads.get(b.ln1_b).clone());
            dx = &dx1 + &layer_norm_backward(&da, &lc.ln1, store.get(b.ln1_g).row(0), &mut g1, &mut b1);
            *grads.get_mut(b.ln1_g) = g1;
            *grads.get_mut(b.ln1_b) = b1;
        }
        (dx, d_past)
    }
}

/// Sums per-layer key/value gradients in place.
pub fn accumulate_kv(acc: &mut [LayerKv], add: &[LayerKv]) {
    for (a, b) in acc.iter_mut().zip(add) {
        a.add_assign(b);
    }
}
