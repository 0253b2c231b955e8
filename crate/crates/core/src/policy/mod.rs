//! Single-hidden-layer tanh regressor used as the learned controller.
//!
//! Parameters are one flat vector laid out as `W1 (hidden × obs)`, `b1`,
//! `W2 (act × hidden)`, `b2`, all row-major. Inputs and targets are
//! standardized with per-dimension statistics stored alongside the weights.

mod format;
mod train;

pub use format::*;
pub use train::*;

use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::error::{check_dim, Error, Result};

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and (population) standard deviation of each column.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_dim: usize,
    pub weights: Vec<f64>,
    pub obs_norm: NormStats,
    pub act_norm: NormStats,
}

pub fn param_count(obs_dim: usize, hidden_dim: usize, act_dim: usize) -> usize {
    (obs_dim + 1) * hidden_dim + (hidden_dim + 1) * act_dim
}

/// Views into the flat parameter vector.
struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
}

impl Policy {
    /// All-zero weights with identity normalization.
    pub fn zeros(obs_dim: usize, hidden_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden_dim,
            weights: vec![0.0; param_count(obs_dim, hidden_dim, act_dim)],
            obs_norm: NormStats::identity(obs_dim),
            act_norm: NormStats::identity(act_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        param_count(self.obs_dim, self.hidden_dim, self.act_dim)
    }

    fn layout(&self) -> Layout {
        let (o, h, a) = (self.obs_dim, self.hidden_dim, self.act_dim);
        let w1 = 0..h * o;
        let b1 = w1.end..w1.end + h;
        let w2 = b1.end..b1.end + a * h;
        let b2 = w2.end..w2.end + a;
        Layout { w1, b1, w2, b2 }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("policy weights", self.param_count(), self.weights.len())?;
        check_dim("observation mean", self.obs_dim, self.obs_norm.mean.len())?;
        check_dim("observation std", self.obs_dim, self.obs_norm.std.len())?;
        check_dim("action mean", self.act_dim, self.act_norm.mean.len())?;
        check_dim("action std", self.act_dim, self.act_norm.std.len())?;
        if self
            .obs_norm
            .std
            .iter()
            .chain(&self.act_norm.std)
            .any(|&s| !(s >= STD_FLOOR))
        {
            return Err(Error::Format("normalization std below floor".into()));
        }
        Ok(())
    }

    /// Network output on an already normalized input, plus hidden activations.
    fn forward_normalized(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let l = self.layout();
        let w = &self.weights;
        let (o, h) = (self.obs_dim, self.hidden_dim);
        let w1 = &w[l.w1];
        let b1 = &w[l.b1];
        for j in 0..h {
            let row = &w1[j * o..(j + 1) * o];
            let z: f64 = b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            hidden[j] = z.tanh();
        }
        let w2 = &w[l.w2];
        let b2 = &w[l.b2];
        for k in 0..self.act_dim {
            let row = &w2[k * h..(k + 1) * h];
            out[k] = b2[k] + row.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Action for a raw observation.
    pub fn predict(&self, obs: &[f64]) -> Result<Vec<f64>> {
        check_dim("observation", self.obs_dim, obs.len())?;
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let x = self.obs_norm.normalize(obs);
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.act_dim];
        self.forward_normalized(&x, &mut hidden, &mut out);
        Ok(self.act_norm.denormalize(&out))
    }
}

/// Mean squared error in normalized action space and its gradient with
/// respect to the flat weights, by backpropagation.
pub fn loss_and_grad(policy: &Policy, batch: &[&Transition]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let l = policy.layout();
    let (o, h, a) = (policy.obs_dim, policy.hidden_dim, policy.act_dim);
    let mut grad = vec![0.0; policy.param_count()];
    let mut hidden = vec![0.0; h];
    let mut out = vec![0.0; a];
    let mut dh = vec![0.0; h];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    for t in batch {
        check_dim("observation", o, t.obs.len())?;
        check_dim("action", a, t.action.len())?;
        let x = policy.obs_norm.normalize(&t.obs);
        let y = policy.act_norm.normalize(&t.action);
        policy.forward_normalized(&x, &mut hidden, &mut out);

        dh.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..a {
            let e = out[k] - y[k];
            loss += e * e * inv_b;
            let g = 2.0 * e * inv_b;
            grad[l.b2.start + k] += g;
            let w2_row = l.w2.start + k * h;
            for j in 0..h {
                grad[w2_row + j] += g * hidden[j];
                dh[j] += g * policy.weights[w2_row + j];
            }
        }
        for j in 0..h {
            let dz = dh[j] * (1.0 - hidden[j] * hidden[j]);
            grad[l.b1.start + j] += dz;
            let w1_row = l.w1.start + j * o;
            for i in 0..o {
                grad[w1_row + i] += dz * x[i];
            }
        }
    }
    Ok((loss, grad))
}
