//! Finite-difference verification of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Model, TrainingExample};
use crate::params::seeded_rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Random entries checked per tensor, on top of its largest-gradient entry.
    pub entries_per_tensor: usize,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            entries_per_tensor: 4,
            seed: 0,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<GradCheckEntry>,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn tensor_max(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.tensor == name)
            .map(|e| e.rel_err)
            .fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic and central-difference gradients of the mean example
/// loss on every trainable tensor. Parameters are restored afterwards.
pub fn gradient_check(model: &mut Model, ex: &TrainingExample, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (_, grads, _) = model.loss_and_grads(std::slice::from_ref(ex))?;
    let mut rng = seeded_rng(cfg.seed, 11);
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.is_trainable(id)).collect();
    let mut entries = Vec::new();
    for id in ids {
        let g = grads.get(id);
        let (rows, cols) = g.dim();
        if rows * cols == 0 {
            continue;
        }
        let mut picks = Vec::with_capacity(cfg.entries_per_tensor + 1);
        let mut best = (0, 0);
        for ((r, c), v) in g.indexed_iter() {
            if v.abs() > g[best].abs() {
                best = (r, c);
            }
        }
        picks.push(best);
        for _ in 0..cfg.entries_per_tensor {
            picks.push((rng.gen_range(0..rows), rng.gen_range(0..cols)));
        }
        picks.sort_unstable();
        picks.dedup();
        for idx in picks {
            let orig = model.store.get(id)[idx];
            model.store.get_mut(id)[idx] = orig + cfg.step;
            let lp = model.example_loss(ex);
            model.store.get_mut(id)[idx] = orig - cfg.step;
            let lm = model.example_loss(ex);
            model.store.get_mut(id)[idx] = orig;
            let numeric = (lp? - lm?) / (2.0 * cfg.step);
            let analytic = g[idx];
            entries.push(GradCheckEntry {
                tensor: model.store.name(id).to_string(),
                index: idx,
                analytic,
                numeric,
                rel_err: relative_error(analytic, numeric, cfg.floor),
            });
        }
    }
    let worst = entries
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .cloned();
    Ok(GradCheckReport {
        max_rel_err: worst.as_ref().map_or(0.0, |w| w.rel_err),
        worst,
        entries,
    })
}
