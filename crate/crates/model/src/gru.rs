//! Gated recurrent boundary encoder with full backpropagation through time.
//!
//! `z = s(x Wz + h Uz + bz)`, `r = s(x Wr + h Ur + br)`,
//! `c = tanh(x Wh + (r * h) Uh + bh)`, `h' = (1 - z) * h + z * c`, with `h0 = 0`.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::ops::sigmoid;
use crate::params::{normal_matrix, Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub emb: ParamId,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruIds {
    pub fn register(store: &mut ParamStore, vocab: usize, hidden: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let e = hidden;
        let rec = (1.0 / hidden as f64).sqrt();
        let mut w = |name: &str, r: usize, c: usize, sd: f64, store: &mut ParamStore| {
            store.add(format!("gru.{name}"), normal_matrix(r, c, sd, rng), true)
        };
        GruIds {
            emb: w("emb", vocab, e, std.max(0.1), store),
            wz: w("wz", e, hidden, rec, store),
            uz: w("uz", hidden, hidden, rec, store),
            bz: w("bz", 1, hidden, 0.0, store),
            wr: w("wr", e, hidden, rec, store),
            ur: w("ur", hidden, hidden, rec, store),
            br: w("br", 1, hidden, 0.0, store),
            wh: w("wh", e, hidden, rec, store),
            uh: w("uh", hidden, hidden, rec, store),
            bh: w("bh", 1, hidden, 0.0, store),
        }
    }
}

pub struct GruCache {
    tokens: Vec<u32>,
    x: Array2<f64>,
    /// `h_0 .. h_T`, one row each.
    hs: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
}

/// Final hidden state after consuming `tokens` left to right.
pub fn gru_forward(store: &ParamStore, ids: &GruIds, tokens: &[u32]) -> (Array1<f64>, GruCache) {
    let emb = store.get(ids.emb);
    let hidden = store.get(ids.uz).nrows();
    let t_len = tokens.len();
    let mut x = Array2::zeros((t_len, emb.ncols()));
    for (t, &tok) in tokens.iter().enumerate() {
        x.row_mut(t).assign(&emb.row(tok as usize));
    }
    // input projections for all steps at once
    let xz = x.dot(store.get(ids.wz)) + &store.get(ids.bz).row(0);
    let xr = x.dot(store.get(ids.wr)) + &store.get(ids.br).row(0);
    let xh = x.dot(store.get(ids.wh)) + &store.get(ids.bh).row(0);
    let (uz, ur, uh) = (store.get(ids.uz), store.get(ids.ur), store.get(ids.uh));
    let mut hs = Array2::zeros((t_len + 1, hidden));
    let mut z = Array2::zeros((t_len, hidden));
    let mut r = Array2::zeros((t_len, hidden));
    let mut c = Array2::zeros((t_len, hidden));
    for t in 0..t_len {
        let h = hs.row(t).to_owned();
        let zt = (&xz.row(t) + &h.dot(uz)).mapv(sigmoid);
        let rt = (&xr.row(t) + &h.dot(ur)).mapv(sigmoid);
        let rh = &rt * &h;
        let ct = (&xh.row(t) + &rh.dot(uh)).mapv(f64::tanh);
        let hn = &h + &(&zt * &(&ct - &h));
        hs.row_mut(t + 1).assign(&hn);
        z.row_mut(t).assign(&zt);
        r.row_mut(t).assign(&rt);
        c.row_mut(t).assign(&ct);
    }
    let last = hs.row(t_len).to_owned();
    (
        last,
        GruCache {
            tokens: tokens.to_vec(),
            x,
            hs,
            z,
            r,
            c,
        },
    )
}

/// Backpropagates `dh_last` through every step, accumulating into `grads`.
/// `update_gate_scale` multiplies the update-gate parameter gradients and
/// is 1 except in fault-injection tests.
pub fn gru_backward(
    store: &ParamStore,
    ids: &GruIds,
    cache: &GruCache,
    dh_last: &Array1<f64>,
    grads: &mut Grads,
    update_gate_scale: f64,
) {
    let t_len = cache.tokens.len();
    if t_len == 0 {
        return;
    }
    let hidden = dh_last.len();
    let (uz, ur, uh) = (store.get(ids.uz), store.get(ids.ur), store.get(ids.uh));
    let (wz, wr, wh) = (store.get(ids.wz), store.get(ids.wr), store.get(ids.wh));
    let mut daz = Array2::zeros((t_len, hidden));
    let mut dar = Array2::zeros((t_len, hidden));
    let mut dah = Array2::zeros((t_len, hidden));
    let mut rh_all = Array2::zeros((t_len, hidden));
    let mut dh = dh_last.clone();
    for t in (0..t_len).rev() {
        let h = cache.hs.row(t);
        let zt = cache.z.row(t);
        let rt = cache.r.row(t);
        let ct = cache.c.row(t);
        let dc = &dh * &zt;
        let dz = &dh * &(&ct - &h);
        let mut dh_prev = &dh * &zt.mapv(|v| 1.0 - v);
        let da_h = &dc * &ct.mapv(|v| 1.0 - v * v);
        let drh = da_h.dot(&uh.t());
        let dr = &drh * &h;
        dh_prev += &(&drh * &rt);
        let da_z = &dz * &zt.mapv(|v| v * (1.0 - v));
        let da_r = &dr * &rt.mapv(|v| v * (1.0 - v));
        dh_prev += &da_z.dot(&uz.t());
        dh_prev += &da_r.dot(&ur.t());
        daz.row_mut(t).assign(&da_z);
        dar.row_mut(t).assign(&da_r);
        dah.row_mut(t).assign(&da_h);
        rh_all.row_mut(t).assign(&(&rt * &h));
        dh = dh_prev;
    }
    let h_prev = cache.hs.slice(s![0..t_len, ..]);
    let acc = |g: &mut Array2<f64>, v: Array2<f64>| *g += &v;
    let gz = update_gate_scale;
    acc(grads.get_mut(ids.wz), cache.x.t().dot(&daz) * gz);
    acc(grads.get_mut(ids.uz), h_prev.t().dot(&daz) * gz);
    acc(grads.get_mut(ids.bz), daz.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)) * gz);
    acc(grads.get_mut(ids.wr), cache.x.t().dot(&dar));
    acc(grads.get_mut(ids.ur), h_prev.t().dot(&dar));
    acc(grads.get_mut(ids.br), dar.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)));
    acc(grads.get_mut(ids.wh), cache.x.t().dot(&dah));
    acc(grads.get_mut(ids.uh), rh_all.t().dot(&dah));
    acc(grads.get_mut(ids.bh), dah.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)));
    let dx = daz.dot(&wz.t()) + dar.dot(&wr.t()) + dah.dot(&wh.t());
    let demb = grads.get_mut(ids.emb);
    for (t, &tok) in cache.tokens.iter().enumerate() {
        let mut row = demb.row_mut(tok as usize);
        row += &dx.row(t);
    }
}
