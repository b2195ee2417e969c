//! Optimizer, learning-rate schedule, and the training step.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::model::{Model, TrainingExample};
use crate::params::Grads;
use crate::{ModelError, Result};

/// Start offsets of the windows covering a stream of length `len`.
/// Windows have length `window` and advance by `stride`; the last one
/// reaches the end of the stream.
pub fn chunk_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out = vec![0];
    let mut s = 0;
    while s + window < len {
        s += stride;
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    /// Length of the cosine decay; the rate stays at `lr_min` afterwards.
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_max: 1e-4,
            lr_min: 1e-5,
            warmup_steps: 0,
            total_steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max > 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }

    /// Linear warmup then cosine decay from `lr_max` to `lr_min`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr_max * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let z = model.store.zeros_like();
        Adam {
            m: z.g.clone(),
            v: z.g,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Grads, lr: f64, cfg: &OptimConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            if !model.store.is_trainable(id) {
                continue;
            }
            let i = id.0;
            let p = model.store.get_mut(id);
            Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads.g[i])
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub model: Model,
    pub optim: OptimConfig,
    adam: Adam,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Model, optim: OptimConfig) -> Result<Self> {
        optim.validate()?;
        Ok(Trainer {
            adam: Adam::new(&model),
            model,
            optim,
            step: 0,
        })
    }

    /// One optimizer update on `batch`. A non-finite loss or gradient
    /// aborts before any parameter changes.
    pub fn train_step(&mut self, batch: &[TrainingExample]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let (loss, mut grads, tokens) = self.model.loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.step,
                detail: format!("loss = {loss}"),
            });
        }
        if !grads.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.step,
                detail: "non-finite gradient".into(),
            });
        }
        let grad_norm = grads.global_norm();
        if self.optim.grad_clip > 0.0 && grad_norm > self.optim.grad_clip {
            grads.scale(self.optim.grad_clip / grad_norm);
        }
        let lr = self.optim.lr_at(self.step);
        self.adam.step(&mut self.model, &grads, lr, &self.optim);
        let stats = StepStats {
            step: self.step,
            loss,
            lr,
            tokens,
            grad_norm,
        };
        self.step += 1;
        Ok(stats)
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Appends one JSON line per step.
pub fn write_log_line<W: Write + ?Sized>(w: &mut W, stats: &StepStats) -> Result<()> {
    serde_json::to_writer(&mut *w, stats)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_stream() {
        assert_eq!(chunk_starts(5, 8, 4), vec![0]);
        assert_eq!(chunk_starts(8, 8, 4), vec![0]);
        assert_eq!(chunk_starts(9, 8, 4), vec![0, 4]);
        assert_eq!(chunk_starts(20, 8, 4), vec![0, 4, 8, 12]);
        assert_eq!(chunk_starts(18432, 9216, 4608), vec![0, 4608, 9216]);
        for len in 1..60 {
            let st = chunk_starts(len, 8, 3);
            assert!(st.last().unwrap() + 8 >= len);
            assert!(st.windows(2).all(|w| w[1] - w[0] == 3));
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = OptimConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            total_steps: 100,
            ..Default::default()
        };
        assert!((c.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((c.lr_at(100) - 1e-5).abs() < 1e-15);
        assert!((c.lr_at(500) - 1e-5).abs() < 1e-15);
        assert!(c.lr_at(30) > c.lr_at(60));
        let w = OptimConfig { warmup_steps: 10, ..c };
        assert!(w.lr_at(0) < w.lr_at(9));
        assert!((w.lr_at(9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn invalid_optim_rejected() {
        let c = OptimConfig { lr_max: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
