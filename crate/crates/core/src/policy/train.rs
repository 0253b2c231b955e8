use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, param_count, NormStats, Policy};
use crate::dataset::Transition;
use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Stream};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Adam updates per training call, independent of dataset size.
    pub grad_steps: usize,
    /// Seeds initialization and batch order. Regime runs derive it from
    /// their master seed, so it is not part of experiment files.
    #[serde(skip)]
    pub seed: u64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            grad_steps: 2000,
            seed: 0,
            hidden_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("train.hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with the fixed moment coefficients above.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Result of one training call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: Policy,
    /// Full-dataset loss before the first update.
    pub initial_loss: f64,
    /// Full-dataset loss after the last update.
    pub final_loss: f64,
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init_policy(obs_dim: usize, hidden_dim: usize, act_dim: usize, seed: u64) -> Policy {
    let mut rng = rng::generator(rng::derive(seed, Stream::Init, 0));
    let mut p = Policy::zeros(obs_dim, hidden_dim, act_dim);
    let l = p.layout();
    let b1 = 1.0 / (obs_dim as f64).sqrt();
    for w in &mut p.weights[l.w1] {
        *w = rng.random_range(-b1..b1);
    }
    let b2 = 1.0 / (hidden_dim as f64).sqrt();
    for w in &mut p.weights[l.w2] {
        *w = rng.random_range(-b2..b2);
    }
    p
}

/// Loss over the whole dataset.
pub fn dataset_loss(policy: &Policy, data: &[Transition]) -> Result<f64> {
    let refs: Vec<&Transition> = data.iter().collect();
    Ok(loss_and_grad(policy, &refs)?.0)
}

/// Mean squared action error in raw action units. Unlike [`dataset_loss`] it
/// does not depend on the policy's normalization, so it is comparable across
/// policies fit to different data.
pub fn action_mse(policy: &Policy, data: &[Transition]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut total = 0.0;
    for t in data {
        let a = policy.predict(&t.obs)?;
        check_dim("action", a.len(), t.action.len())?;
        total += a.iter().zip(&t.action).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

fn fit_norms(data: &[Transition], obs_dim: usize, act_dim: usize) -> (NormStats, NormStats) {
    (
        NormStats::fit(data.iter().map(|t| t.obs.as_slice()), obs_dim),
        NormStats::fit(data.iter().map(|t| t.action.as_slice()), act_dim),
    )
}

/// Behavior cloning. With `init`, training continues from its weights;
/// otherwise weights are freshly initialized. Normalization statistics are
/// always refit on `data`, and the optimizer always starts from zero moments.
pub fn train(data: &[Transition], config: &TrainConfig, init: Option<&Policy>) -> Result<TrainOutcome> {
    config.validate()?;
    let first = data.first().ok_or(Error::Empty("dataset"))?;
    let (obs_dim, act_dim) = (first.obs.len(), first.action.len());
    let mut policy = match init {
        Some(p) => {
            p.validate()?;
            check_dim("initial policy observation", p.obs_dim, obs_dim)?;
            check_dim("initial policy action", p.act_dim, act_dim)?;
            p.clone()
        }
        None => init_policy(obs_dim, config.hidden_dim, act_dim, config.seed),
    };
    let (obs_norm, act_norm) = fit_norms(data, obs_dim, act_dim);
    policy.obs_norm = obs_norm;
    policy.act_norm = act_norm;
    debug_assert_eq!(policy.weights.len(), param_count(obs_dim, policy.hidden_dim, act_dim));

    let initial_loss = dataset_loss(&policy, data)?;
    let mut adam = Adam::new(policy.weights.len(), config.learning_rate);
    let mut rng = rng::generator(rng::derive(config.seed, Stream::Training, 0));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let bs = config.batch_size.min(data.len());
    let mut batch: Vec<&Transition> = Vec::with_capacity(bs);

    for _ in 0..config.grad_steps {
        batch.clear();
        while batch.len() < bs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (_, grad) = loss_and_grad(&policy, &batch)?;
        adam.update(&mut policy.weights, &grad);
    }
    let final_loss = dataset_loss(&policy, data)?;
    Ok(TrainOutcome {
        policy,
        initial_loss,
        final_loss,
    })
}

/// Trains a policy on `data`, from `init` when given, from scratch otherwise.
pub fn train_bc(data: &[Transition], config: &TrainConfig, init: Option<&Policy>) -> Result<Policy> {
    Ok(train(data, config, init)?.policy)
}

/// Continues training `policy` on the full aggregated dataset with a fresh
/// optimizer state.
pub fn finetune(policy: &Policy, data: &[Transition], config: &TrainConfig) -> Result<Policy> {
    train_bc(data, config, Some(policy))
}
