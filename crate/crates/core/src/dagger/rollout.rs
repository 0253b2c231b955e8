use serde::{Deserialize, Serialize};

use super::gate::{blended_action, ExpertKind, Gate, GateConfig, GateDecision};
use super::ScriptedExpert;
use crate::bilateral::Mode;
use crate::dataset::{Dataset, Source, Transition};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::eval::par_map;
use crate::policy::{finetune, Policy, TrainConfig};
use crate::rng::{self, Stream};
use crate::sim::WorldState;

/// Attempts allowed per warmup demonstration beyond the first.
pub const WARMUP_RETRIES: u64 = 3;

/// Reset seed of attempt `attempt` of warmup demonstration `k`.
pub fn warmup_seed(master_seed: u64, k: usize, attempt: u64) -> u64 {
    rng::derive(rng::derive(master_seed, Stream::Warmup, k as u64), Stream::Warmup, attempt)
}

/// Reset seed of rollout `episode` in DAgger iteration `iteration` (1-based).
pub fn rollout_seed(master_seed: u64, iteration: usize, episode: usize) -> u64 {
    rng::derive(rng::derive(master_seed, Stream::Rollout, iteration as u64), Stream::Rollout, episode as u64)
}

/// Everything one gated episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    /// Human-labeled transitions destined for the dataset.
    pub added: Vec<Transition>,
    /// Per-step gate outcome.
    pub decisions: Vec<GateDecision>,
    /// Action sent to the environment at each step.
    pub executed: Vec<Vec<f64>>,
    /// Cascaded subtask success at the end of the episode.
    pub success: Vec<bool>,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.decisions.len()
    }

    pub fn intervened(&self) -> usize {
        self.decisions.iter().filter(|d| **d == GateDecision::Intervene).count()
    }

    pub fn completed(&self) -> bool {
        self.success.last().copied().unwrap_or(false)
    }
}

/// Runs one episode from `world`. Without a learner every step is an expert
/// demonstration; with one, the gate decides who acts and only intervened
/// steps are labeled, always with the pure expert action.
pub fn gated_episode(
    env: &Env,
    expert: &ScriptedExpert,
    learner: Option<(&Policy, &GateConfig)>,
    mut world: WorldState,
    episode: usize,
) -> Result<EpisodeLog> {
    let mut log = EpisodeLog {
        added: Vec::new(),
        decisions: Vec::new(),
        executed: Vec::new(),
        success: Vec::new(),
    };
    let mut gate = Gate::new();
    while !env.done(&world) {
        let obs = env.observe(&world);
        let a_star = expert.action(&world)?;
        let (decision, executed, mode) = match learner {
            None => (GateDecision::Intervene, a_star.clone(), Mode::Teleop),
            Some((policy, cfg)) => {
                let a_i = policy.predict(&obs)?;
                match gate.decide(&a_i, &a_star, cfg)? {
                    GateDecision::Intervene => {
                        (GateDecision::Intervene, blended_action(&a_i, &a_star, cfg.lambda)?, Mode::Takeover)
                    }
                    GateDecision::Autonomous => (GateDecision::Autonomous, a_i, Mode::Autonomous),
                }
            }
        };
        if decision == GateDecision::Intervene {
            log.added.push(Transition {
                episode,
                step: world.step_count,
                task_id: env.task(),
                obs,
                action: a_star,
                source: Source::Human,
                mode_at_step: mode,
            });
        }
        world = env.apply(&world, &executed)?;
        log.decisions.push(decision);
        log.executed.push(executed);
    }
    log.success = env.success(&world)?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupOutcome {
    /// Episodes that were discarded and re-drawn.
    pub retries: usize,
    /// Reset seed of every kept demonstration.
    pub seeds: Vec<u64>,
}

/// Collects demonstrations `first..first + count` (episode ids are the
/// demonstration indices). Failed demonstrations are discarded and re-drawn
/// up to [`WARMUP_RETRIES`] times each.
pub fn collect_demos(
    env: &Env,
    expert: &ScriptedExpert,
    first: usize,
    count: usize,
    master_seed: u64,
    workers: usize,
) -> Result<(Vec<Transition>, WarmupOutcome)> {
    let per_demo = par_map((first..first + count).collect(), workers, |k| {
        for attempt in 0..=WARMUP_RETRIES {
            let seed = warmup_seed(master_seed, k, attempt);
            let log = gated_episode(env, expert, None, env.reset(seed), k)?;
            if log.completed() {
                return Ok((log.added, attempt as usize, seed));
            }
        }
        Err(Error::Runtime(format!(
            "expert failed demonstration {k} on {} after {WARMUP_RETRIES} retries",
            env.task()
        )))
    })?;
    let mut transitions = Vec::new();
    let mut outcome = WarmupOutcome {
        retries: 0,
        seeds: Vec::with_capacity(count),
    };
    for (added, retries, seed) in per_demo {
        transitions.extend(added);
        outcome.retries += retries;
        outcome.seeds.push(seed);
    }
    Ok((transitions, outcome))
}

/// `k` successful expert demonstrations, all human-labeled.
pub fn collect_warmup(env: &Env, expert: &ScriptedExpert, k: usize, master_seed: u64) -> Result<(Dataset, WarmupOutcome)> {
    if k == 0 {
        return Err(Error::Config("warmup needs at least one demonstration".into()));
    }
    let (ts, outcome) = collect_demos(env, expert, 0, k, master_seed, 1)?;
    Ok((Dataset::try_from(ts)?, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub steps: usize,
    pub intervened_steps: usize,
    pub intervention_fraction: f64,
    /// Rollouts that completed the whole task.
    pub successes: usize,
    /// Human-labeled transitions added this iteration.
    pub human_steps_added: usize,
}

/// Inputs of one pass of the interactive loop.
#[derive(Debug, Clone, Copy)]
pub struct IterationSpec<'a> {
    pub env: &'a Env,
    pub expert: &'a ScriptedExpert,
    pub gate: &'a GateConfig,
    pub train: &'a TrainConfig,
    pub iteration: usize,
    pub episodes: usize,
    /// Id given to the first rollout; later ones count up.
    pub first_episode: usize,
    pub master_seed: u64,
    pub workers: usize,
}

/// Gated rollouts of `policy`, aggregation into `dataset`, then a finetune
/// on everything collected so far.
pub fn run_dagger_iteration(
    policy: &Policy,
    dataset: &mut Dataset,
    it: &IterationSpec<'_>,
) -> Result<(Policy, IterationMetrics)> {
    if it.gate.expert == ExpertKind::Human {
        return Err(Error::Config(
            "a human expert needs a live teleop session; headless runs use gate.expert = \"scripted\"".into(),
        ));
    }
    let jobs: Vec<usize> = (0..it.episodes).collect();
    let logs = par_map(jobs, it.workers, |e| {
        let world = it.env.reset(rollout_seed(it.master_seed, it.iteration, e));
        gated_episode(it.env, it.expert, Some((policy, it.gate)), world, it.first_episode + e)
    })?;

    let mut m = IterationMetrics {
        iteration: it.iteration,
        episodes: it.episodes,
        steps: 0,
        intervened_steps: 0,
        intervention_fraction: 0.0,
        successes: 0,
        human_steps_added: 0,
    };
    for log in logs {
        m.steps += log.steps();
        m.intervened_steps += log.intervened();
        m.successes += usize::from(log.completed());
        m.human_steps_added += log.added.len();
        dataset.extend(log.added)?;
    }
    if m.steps > 0 {
        m.intervention_fraction = m.intervened_steps as f64 / m.steps as f64;
    }
    let mut train = it.train.clone();
    train.seed = rng::derive(it.master_seed, Stream::Training, it.iteration as u64);
    let next = finetune(policy, dataset.transitions(), &train)?;
    Ok((next, m))
}
