use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Who supplies corrective actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    #[default]
    Scripted,
    /// A live operator through the teleop server; not available headless.
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateDecision {
    Intervene,
    Autonomous,
}

pub const DEFAULT_EPSILON: f64 = 0.02;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_MIN_HOLD: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// L2 threshold on the learner/expert action gap. `inf` never fires.
    pub epsilon: f64,
    /// Weight of the expert in the executed action during intervention.
    pub lambda: f64,
    /// Steps an intervention lasts once triggered; 1 re-checks every step.
    pub min_hold: usize,
    pub expert: ExpertKind,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            lambda: DEFAULT_LAMBDA,
            min_hold: DEFAULT_MIN_HOLD,
            expert: ExpertKind::Scripted,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("gate.epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("gate.lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.min_hold == 0 {
            return Err(Error::Config("gate.min_hold must be at least 1".into()));
        }
        Ok(())
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Intervene iff the L2 distance between the two actions exceeds epsilon.
pub fn scripted_gate(policy_action: &[f64], expert_action: &[f64], gate: &GateConfig) -> Result<GateDecision> {
    check_dim("gate actions", expert_action.len(), policy_action.len())?;
    Ok(if l2(policy_action, expert_action) > gate.epsilon {
        GateDecision::Intervene
    } else {
        GateDecision::Autonomous
    })
}

/// `(1 - lambda) * policy_action + lambda * expert_action`.
pub fn blended_action(policy_action: &[f64], expert_action: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dim("blended actions", expert_action.len(), policy_action.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("blend weight must be in [0, 1], got {lambda}")));
    }
    // the endpoints return an input verbatim, signed zeros included
    if lambda == 1.0 {
        return Ok(expert_action.to_vec());
    }
    if lambda == 0.0 {
        return Ok(policy_action.to_vec());
    }
    Ok(policy_action
        .iter()
        .zip(expert_action)
        .map(|(a, e)| (1.0 - lambda) * a + lambda * e)
        .collect())
}

/// The scripted gate with hysteresis.
#[derive(Debug, Clone, Default)]
pub struct Gate {
    hold: usize,
}

impl Gate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decide(&mut self, policy_action: &[f64], expert_action: &[f64], config: &GateConfig) -> Result<GateDecision> {
        let fresh = scripted_gate(policy_action, expert_action, config)?;
        if self.hold > 0 {
            self.hold -= 1;
            return Ok(GateDecision::Intervene);
        }
        if fresh == GateDecision::Intervene {
            self.hold = config.min_hold - 1;
        }
        Ok(fresh)
    }

    /// Steps left before the gate re-checks.
    pub fn holding(&self) -> usize {
        self.hold
    }
}
