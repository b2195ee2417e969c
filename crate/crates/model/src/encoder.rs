//! Frozen permutation-invariant point-cloud encoder: a shared two-layer
//! per-point map over `(position, normal)` followed by max pooling.

use ndarray::{Array1, Array2, Axis};
use patchgen::SurfaceSamples;

use crate::params::{normal_matrix, seeded_rng};
use crate::{ModelError, Result};

const ENCODER_STREAM: u64 = 0x9e1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl PointEncoder {
    pub fn new(hidden: usize, out: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, ENCODER_STREAM);
        let w1 = normal_matrix(6, hidden, (2.0 / 6.0f64).sqrt(), &mut rng);
        let b1 = normal_matrix(1, hidden, 0.1, &mut rng).row(0).to_owned();
        let w2 = normal_matrix(hidden, out, (1.0 / hidden as f64).sqrt(), &mut rng);
        let b2 = Array1::zeros(out);
        PointEncoder { w1, b1, w2, b2 }
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// Per-point features before pooling, one row per sample.
    pub fn point_features(&self, s: &SurfaceSamples) -> Array2<f64> {
        let n = s.len();
        let mut x = Array2::zeros((n, 6));
        for i in 0..n {
            let nrm = s.normals.get(i).copied().unwrap_or([0.0; 3]);
            for k in 0..3 {
                x[[i, k]] = s.points[i][k];
                x[[i, 3 + k]] = nrm[k];
            }
        }
        let mut h = x.dot(&self.w1) + &self.b1;
        h.mapv_inplace(|v| v.max(0.0));
        h.dot(&self.w2) + &self.b2
    }

    pub fn encode(&self, s: &SurfaceSamples) -> Result<Vec<f64>> {
        if s.is_empty() {
            return Err(ModelError::EmptyCloud);
        }
        let f = self.point_features(s);
        Ok(f.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b)).to_vec())
    }
}
