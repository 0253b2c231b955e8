//! Leader–follower coupling, gravity compensation, the operation-mode
//! state machine and mode-dependent gain scheduling.
//!
//! The leader feels a scaled reflection of the follower's tracking error:
//!
//! ```text
//! τ_L = α·Kp·(θ_F − θ_L) + β_d·Kd·(θ̇_F − θ̇_L)
//! τ_F =   Kp·(θ_L − θ_F) +     Kd·(θ̇_L − θ̇_F)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sim::{gravity_torque, ArmModel, JointState};

/// Diagonal PD gains plus the leader-side reflection scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    /// Force-reflection scale on the stiffness term.
    pub alpha: f64,
    /// Damping-reflection scale on the velocity term.
    pub beta_d: f64,
}

impl CouplingGains {
    /// Gains with `Kd = 2·sqrt(Kp·I)` per joint.
    pub fn critically_damped(kp: f64, inertia: &[f64], alpha: f64, beta_d: f64) -> Self {
        Self {
            kp: vec![kp; inertia.len()],
            kd: inertia.iter().map(|i| 2.0 * (kp * i).sqrt()).collect(),
            alpha,
            beta_d,
        }
    }

    pub fn zero(dof: usize) -> Self {
        Self {
            kp: vec![0.0; dof],
            kd: vec![0.0; dof],
            alpha: 0.0,
            beta_d: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("kd", self.kp.len(), self.kd.len())?;
        if !self.kp.iter().all(|&k| k > 0.0) {
            return Err(Error::Config("gains: kp must be positive".into()));
        }
        if !self.kd.iter().all(|&k| k >= 0.0) {
            return Err(Error::Config("gains: kd must be non-negative".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta_d", self.beta_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("gains: {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn check_pair(leader: &JointState, follower: &JointState, gains: &CouplingGains) -> Result<()> {
    let n = gains.kp.len();
    check_dim("kd", n, gains.kd.len())?;
    leader.check(n)?;
    follower.check(n)
}

/// Torque rendered on the leader device.
pub fn leader_torque(
    leader: &JointState,
    follower: &JointState,
    gains: &CouplingGains,
) -> Result<Vec<f64>> {
    check_pair(leader, follower, gains)?;
    Ok((0..gains.kp.len())
        .map(|i| {
            // terms are formed before scaling so that the reflection scales
            // act exactly linearly on them
            let stiffness = gains.kp[i] * (follower.positions[i] - leader.positions[i]);
            let damping = gains.kd[i] * (follower.velocities[i] - leader.velocities[i]);
            gains.alpha * stiffness + gains.beta_d * damping
        })
        .collect())
}

/// Torque driving the follower toward the leader.
pub fn follower_torque(
    leader: &JointState,
    follower: &JointState,
    gains: &CouplingGains,
) -> Result<Vec<f64>> {
    check_pair(leader, follower, gains)?;
    Ok((0..gains.kp.len())
        .map(|i| {
            gains.kp[i] * (leader.positions[i] - follower.positions[i])
                + gains.kd[i] * (leader.velocities[i] - follower.velocities[i])
        })
        .collect())
}

/// `raw + g(θ)`: adds active gravity compensation to a command.
pub fn compensated_torque(raw: &[f64], arm: &ArmModel, q: &JointState) -> Result<Vec<f64>> {
    check_dim("raw torque", arm.dof(), raw.len())?;
    let g = gravity_torque(arm, q)?;
    Ok(raw.iter().zip(g).map(|(r, g)| r + g).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    Teleop,
    Autonomous,
    Takeover,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Idle, Mode::Teleop, Mode::Autonomous, Mode::Takeover];

    /// Whether the human is the one commanding the follower.
    pub fn human_in_control(self) -> bool {
        matches!(self, Mode::Teleop | Mode::Takeover)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControlEvent {
    EngageTeleop,
    StartPolicy,
    HumanGrab,
    HumanRelease,
    Stop,
    Save,
    Reset,
    Discard,
}

impl ControlEvent {
    pub const ALL: [ControlEvent; 8] = [
        ControlEvent::EngageTeleop,
        ControlEvent::StartPolicy,
        ControlEvent::HumanGrab,
        ControlEvent::HumanRelease,
        ControlEvent::Stop,
        ControlEvent::Save,
        ControlEvent::Reset,
        ControlEvent::Discard,
    ];

    /// Save/reset/discard manage recorded data and never change the mode.
    pub fn is_data_utility(self) -> bool {
        matches!(
            self,
            ControlEvent::Save | ControlEvent::Reset | ControlEvent::Discard
        )
    }
}

/// Total transition function of the operation-mode machine. Pairs not
/// listed below leave the mode unchanged.
pub fn mode_transition(mode: Mode, event: ControlEvent) -> Mode {
    use ControlEvent::*;
    use Mode::*;
    match (mode, event) {
        (_, Stop) => Idle,
        (Idle, EngageTeleop) => Teleop,
        (Idle | Teleop, StartPolicy) => Autonomous,
        (Autonomous, HumanGrab) => Takeover,
        (Takeover, HumanRelease) => Autonomous,
        (m, _) => m,
    }
}

/// Gain table indexed by mode. Every non-idle mode must have an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teleop: Option<CouplingGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autonomous: Option<CouplingGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub takeover: Option<CouplingGains>,
    /// Leader–follower deviation (rad, any joint) that counts as the human
    /// grabbing the leader during autonomous execution.
    #[serde(default = "default_grab_threshold")]
    pub grab_threshold: f64,
}

pub const DEFAULT_STIFF_KP: f64 = 40.0;
pub const DEFAULT_SOFT_KP: f64 = 10.0;
pub const DEFAULT_TELEOP_REFLECTION: f64 = 0.3;

fn default_grab_threshold() -> f64 {
    0.15
}

impl GainProfile {
    pub fn defaults_for(arm: &ArmModel) -> Self {
        let soft = CouplingGains::critically_damped(
            DEFAULT_SOFT_KP,
            &arm.inertia,
            DEFAULT_TELEOP_REFLECTION,
            DEFAULT_TELEOP_REFLECTION,
        );
        Self {
            teleop: Some(soft.clone()),
            autonomous: Some(CouplingGains::critically_damped(
                DEFAULT_STIFF_KP,
                &arm.inertia,
                1.0,
                1.0,
            )),
            takeover: Some(soft),
            grab_threshold: default_grab_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for mode in [Mode::Teleop, Mode::Autonomous, Mode::Takeover] {
            gains_for_mode(mode, self)?.validate()?;
        }
        if !(self.grab_threshold > 0.0) {
            return Err(Error::Config("gains.grab_threshold must be positive".into()));
        }
        Ok(())
    }
}

impl Default for GainProfile {
    fn default() -> Self {
        Self::defaults_for(&ArmModel::default())
    }
}

/// Gains in effect for `mode`. Autonomous execution uses the stiff entry so
/// the leader tracks the follower closely; human-driven modes use the soft
/// entries; idle is fully passive.
pub fn gains_for_mode(mode: Mode, profile: &GainProfile) -> Result<CouplingGains> {
    let (entry, name) = match mode {
        Mode::Idle => {
            let dof = profile
                .autonomous
                .as_ref()
                .or(profile.teleop.as_ref())
                .map_or(0, |g| g.kp.len());
            return Ok(CouplingGains::zero(dof));
        }
        Mode::Teleop => (&profile.teleop, "teleop"),
        Mode::Autonomous => (&profile.autonomous, "autonomous"),
        Mode::Takeover => (&profile.takeover, "takeover"),
    };
    entry
        .clone()
        .ok_or_else(|| Error::Config(format!("gain profile has no `{name}` entry")))
}

/// True when any joint of the leader deviates from the follower by more
/// than `threshold`.
pub fn deviation_exceeds(leader: &JointState, follower: &JointState, threshold: f64) -> bool {
    leader
        .positions
        .iter()
        .zip(&follower.positions)
        .any(|(l, f)| (l - f).abs() > threshold)
}

/// Leader command while the policy drives the follower: the coupling is
/// reversed so the leader is pulled onto the follower.
pub fn mirror_torque(
    leader: &JointState,
    follower: &JointState,
    stiff: &CouplingGains,
) -> Result<Vec<f64>> {
    follower_torque(follower, leader, stiff)
}

#[cfg(test)]
mod tests;
