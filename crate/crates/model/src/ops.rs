//! Dense building blocks with explicit backward passes.

use ndarray::{Array1, Array2, ArrayView1, Axis};

pub const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Row-wise layer normalization with gain `g` and bias `b`.
pub fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mu = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        let mut out = xhat.row_mut(i);
        for j in 0..d {
            out[j] = (row[j] - mu) * r;
        }
    }
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dg` and `db` (both `1 x d`).
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    c: &LnCache,
    g: ArrayView1<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    {
        let mut r = dg.row_mut(0);
        r += &(dy * &c.xhat).sum_axis(Axis(0));
    }
    {
        let mut r = db.row_mut(0);
        r += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * &g;
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = dh.sum() / d as f64;
        let m2 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let mut out = dx.row_mut(i);
        for j in 0..d {
            out[j] = c.rstd[i] * (dh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_K * (u + GELU_C * u * u * u)).tanh())
}

pub fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_K * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * u * u)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(row)))`, stable.
pub fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Adds the `1 x n` bias to every row.
pub fn add_bias(x: &mut Array2<f64>, b: &Array2<f64>) {
    *x += &b.row(0);
}

/// Accumulates column sums of `dy` into the `1 x n` bias gradient.
pub fn bias_grad(db: &mut Array2<f64>, dy: &Array2<f64>) {
    let mut r = db.row_mut(0);
    r += &dy.sum_axis(Axis(0));
}
