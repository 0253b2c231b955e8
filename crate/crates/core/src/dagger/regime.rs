use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gate::{ExpertKind, GateConfig};
use super::rollout::{collect_demos, run_dagger_iteration, IterationMetrics, IterationSpec, WarmupOutcome};
use super::ScriptedExpert;
use crate::dataset::Dataset;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalProtocol, EvalSummary};
use crate::policy::{action_mse, train_bc, Policy, TrainConfig};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    OfflineBc,
    ContinualDagger,
    BatchedDagger,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::OfflineBc => "OFFLINE_BC",
            Regime::ContinualDagger => "CONTINUAL_DAGGER",
            Regime::BatchedDagger => "BATCHED_DAGGER",
        })
    }
}

fn default_warmup() -> usize {
    10
}

fn default_episodes() -> usize {
    10
}

fn default_eval() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub regime: Regime,
    /// Expert demonstrations before the first rollout. For offline BC this is
    /// the whole demonstration budget.
    #[serde(default = "default_warmup")]
    pub warmup_demos: usize,
    #[serde(default)]
    pub dagger_iterations: usize,
    #[serde(default = "default_episodes")]
    pub episodes_per_iteration: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default = "default_eval")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// First evaluation reset seed; derived from the master seed if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_seed: Option<u64>,
    /// Offline BC only: keep adding demonstrations past `warmup_demos` until
    /// this many human-labeled steps are collected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_step_budget: Option<usize>,
    /// Adam updates for from-scratch fits (offline BC and the batched
    /// refits); `train.grad_steps` if unset. The warmup fit and every
    /// finetune always use `train.grad_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_grad_steps: Option<usize>,
}

impl RegimeConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            warmup_demos: default_warmup(),
            dagger_iterations: 0,
            episodes_per_iteration: default_episodes(),
            train: TrainConfig::default(),
            gate: GateConfig::default(),
            eval_episodes: default_eval(),
            master_seed: 0,
            eval_seed: None,
            demo_step_budget: None,
            scratch_grad_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.warmup_demos == 0 {
            return fail("regime.warmup_demos must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return fail("regime.eval_episodes must be at least 1".into());
        }
        match self.regime {
            Regime::OfflineBc if self.dagger_iterations != 0 => {
                return fail("regime.dagger_iterations must be 0 for OFFLINE_BC".into());
            }
            Regime::ContinualDagger | Regime::BatchedDagger => {
                if self.dagger_iterations > 0 && self.episodes_per_iteration == 0 {
                    return fail("regime.episodes_per_iteration must be at least 1".into());
                }
                if self.demo_step_budget.is_some() {
                    return fail("regime.demo_step_budget applies to OFFLINE_BC only".into());
                }
                if self.gate.expert == ExpertKind::Human && self.dagger_iterations > 0 {
                    return fail("gate.expert = \"human\" needs a live teleop session".into());
                }
            }
            Regime::OfflineBc => {}
        }
        self.train.validate()?;
        self.gate.validate()
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        EvalProtocol::Seeds {
            start: self
                .eval_seed
                .unwrap_or_else(|| rng::derive(self.master_seed, Stream::Evaluation, 0)),
            count: self.eval_episodes,
        }
    }

    /// Training settings for the warmup fit.
    fn warmup_train(&self) -> TrainConfig {
        TrainConfig {
            seed: rng::derive(self.master_seed, Stream::Init, 0),
            ..self.train.clone()
        }
    }

    /// Training settings for from-scratch fits.
    fn scratch_train(&self) -> TrainConfig {
        TrainConfig {
            grad_steps: self.scratch_grad_steps.unwrap_or(self.train.grad_steps),
            ..self.warmup_train()
        }
    }
}

/// One report row: the state after an iteration (row 0 is the warmup or
/// offline policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub dataset_size: usize,
    /// Cumulative.
    pub human_labeled_steps: usize,
    /// Row 0 is fully human-driven and reports 1.
    pub intervention_fraction: f64,
    pub subtask_success: Vec<f64>,
    pub mean_episode_length: f64,
    /// Action error of the evaluated policy on the warmup demonstrations, in
    /// raw action units. Growth across rows measures forgetting.
    pub warmup_action_mse: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct RegimeRun {
    pub regime: Regime,
    pub rows: Vec<IterationRow>,
    pub iterations: Vec<IterationMetrics>,
    pub warmup: WarmupOutcome,
    pub dataset: Dataset,
    pub policy: Policy,
    pub eval_protocol: EvalProtocol,
}

impl RegimeRun {
    pub fn final_row(&self) -> &IterationRow {
        self.rows.last().expect("a run has at least one row")
    }

    pub fn human_labeled_steps(&self) -> usize {
        self.final_row().human_labeled_steps
    }

    pub fn success_rate(&self) -> f64 {
        self.final_row().subtask_success.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    /// Replaces the config's seeded evaluation, e.g. with a grid.
    pub eval: Option<EvalProtocol>,
    /// Called with each row as soon as it is complete.
    pub progress: Option<fn(&IterationRow)>,
}

/// What a run had produced when it stopped.
#[derive(Debug, Clone, Default)]
pub struct Progress {
    pub rows: Vec<IterationRow>,
    pub dataset: Dataset,
    pub warmup: Option<WarmupOutcome>,
}

#[allow(clippy::too_many_arguments)]
fn row(
    iteration: usize,
    dataset: &Dataset,
    warmup_len: usize,
    judged: &Policy,
    intervention_fraction: f64,
    eval: EvalSummary,
    started: Instant,
) -> Result<IterationRow> {
    Ok(IterationRow {
        iteration,
        dataset_size: dataset.len(),
        human_labeled_steps: dataset.len(),
        intervention_fraction,
        subtask_success: eval.subtask_success,
        mean_episode_length: eval.mean_episode_length,
        warmup_action_mse: action_mse(judged, &dataset.transitions()[..warmup_len])?,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs one training regime end to end.
pub fn run_regime(config: &RegimeConfig, env: &Env, options: &RunOptions) -> Result<RegimeRun> {
    run_regime_tracked(config, env, options, &mut Progress::default())
}

/// [`run_regime`], recording rows and data in `progress` as they are
/// produced so a failed run can still be written out.
pub fn run_regime_tracked(
    config: &RegimeConfig,
    env: &Env,
    options: &RunOptions,
    progress: &mut Progress,
) -> Result<RegimeRun> {
    config.validate()?;
    let expert = ScriptedExpert::new(env.clone());
    let protocol = options.eval.clone().unwrap_or_else(|| config.eval_protocol());
    // fail on a bad grid before any training
    protocol.worlds(env)?;
    let workers = options.workers.max(1);
    let emit = |r: &IterationRow| {
        if let Some(f) = options.progress {
            f(r)
        }
    };

    let started = Instant::now();
    let (mut transitions, mut warmup) =
        collect_demos(env, &expert, 0, config.warmup_demos, config.master_seed, workers)?;
    if let Some(budget) = config.demo_step_budget {
        let mut next = config.warmup_demos;
        while transitions.len() < budget {
            let (more, w) = collect_demos(env, &expert, next, 1, config.master_seed, 1)?;
            transitions.extend(more);
            warmup.retries += w.retries;
            warmup.seeds.extend(w.seeds);
            next += 1;
        }
    }
    let mut dataset = Dataset::try_from(transitions)?;
    let warmup_len = dataset.len();
    progress.dataset = dataset.clone();
    progress.warmup = Some(warmup.clone());
    let scratch = config.scratch_train();
    let warmup_train = match config.regime {
        Regime::OfflineBc => scratch.clone(),
        _ => config.warmup_train(),
    };
    let mut policy = train_bc(dataset.transitions(), &warmup_train, None)?;
    let mut batched = if config.regime == Regime::BatchedDagger && scratch != warmup_train {
        train_bc(dataset.transitions(), &scratch, None)?
    } else {
        policy.clone()
    };
    let judged0 = match config.regime {
        Regime::BatchedDagger => &batched,
        _ => &policy,
    };
    let eval0 = evaluate(judged0, env, &protocol, workers)?;
    let mut rows = vec![row(0, &dataset, warmup_len, judged0, 1.0, eval0, started)?];
    emit(&rows[0]);
    progress.rows = rows.clone();

    let mut iterations = Vec::new();
    let mut next_episode = warmup.seeds.len();
    for iteration in 1..=config.dagger_iterations {
        let started = Instant::now();
        let spec = IterationSpec {
            env,
            expert: &expert,
            gate: &config.gate,
            train: &config.train,
            iteration,
            episodes: config.episodes_per_iteration,
            first_episode: next_episode,
            master_seed: config.master_seed,
            workers,
        };
        let (next, metrics) = run_dagger_iteration(&policy, &mut dataset, &spec)?;
        progress.dataset = dataset.clone();
        policy = next;
        next_episode += config.episodes_per_iteration;
        let judged = match config.regime {
            Regime::BatchedDagger => {
                batched = train_bc(dataset.transitions(), &scratch, None)?;
                &batched
            }
            _ => &policy,
        };
        let eval = evaluate(judged, env, &protocol, workers)?;
        rows.push(row(iteration, &dataset, warmup_len, judged, metrics.intervention_fraction, eval, started)?);
        emit(rows.last().expect("just pushed"));
        progress.rows = rows.clone();
        iterations.push(metrics);
    }
    if config.regime == Regime::BatchedDagger {
        policy = batched;
    }
    Ok(RegimeRun {
        regime: config.regime,
        rows,
        iterations,
        warmup,
        dataset,
        policy,
        eval_protocol: protocol,
    })
}
