//! Observation and action spaces on top of the simulator.
//!
//! Actions are per-step joint-position deltas (bounded to
//! [`MAX_JOINT_DELTA`]), followed per arm by a gripper channel when the task
//! has grippers, and finally a base displacement for the mobile task. The
//! gripper channel shares the joint-delta range: negative closes, positive
//! opens. A delta
//! is executed by coupling the arm to a virtual leader placed at `θ + δ`
//! moving at `δ / dt`, using the follower law plus gravity compensation.

use serde::{Deserialize, Serialize};

use crate::bilateral::{compensated_torque, follower_torque, CouplingGains};
use crate::error::{check_dim, Error, Result};
use crate::sim::{self, Actuation, ArmModel, JointState, TaskId, TaskSpec, WorldState};

pub const MAX_JOINT_DELTA: f64 = 0.05;
pub const MAX_BASE_DELTA: f64 = 0.05;
pub const MAX_GRIPPER: f64 = MAX_JOINT_DELTA;
/// Gripper channel values.
pub const GRIPPER_OPEN: f64 = MAX_GRIPPER;
pub const GRIPPER_CLOSED: f64 = -MAX_GRIPPER;
pub const DEFAULT_SERVO_KP: f64 = 400.0;

pub fn action_dim(task: TaskId, dof: usize) -> usize {
    let per_arm = dof + usize::from(task.has_gripper());
    task.arm_count() * per_arm + usize::from(task.has_base())
}

pub fn obs_dim(spec: &TaskSpec, dof: usize) -> usize {
    let t = spec.task_id;
    t.arm_count() * 2 * dof
        + usize::from(t.has_base())
        + 3 * t.object_count()
        + 2
        + usize::from(spec.subtask_count() > 1)
}

/// Flattens the numeric fields of the world into an observation vector.
pub fn observe(world: &WorldState, spec: &TaskSpec) -> Vec<f64> {
    let mut obs = Vec::new();
    for q in &world.arms {
        obs.extend_from_slice(&q.positions);
        obs.extend_from_slice(&q.velocities);
    }
    if spec.task_id.has_base() {
        obs.push(world.base_x);
    }
    for o in &world.objects {
        obs.extend_from_slice(&o.position);
        obs.push(if o.held_by.is_some() { 1.0 } else { 0.0 });
    }
    obs.extend_from_slice(&world.goal);
    if spec.subtask_count() > 1 {
        obs.push(world.subtask_index as f64);
    }
    obs
}

/// Per-arm slice of an action vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmCommand {
    pub deltas: Vec<f64>,
    pub gripper: f64,
}

/// Splits an action into arm commands and a base displacement.
pub fn split_action(task: TaskId, dof: usize, action: &[f64]) -> Result<(Vec<ArmCommand>, f64)> {
    check_dim("action", action_dim(task, dof), action.len())?;
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    let stride = dof + usize::from(task.has_gripper());
    let arms = (0..task.arm_count())
        .map(|a| {
            let chunk = &action[a * stride..(a + 1) * stride];
            ArmCommand {
                deltas: chunk[..dof].to_vec(),
                gripper: if task.has_gripper() { chunk[dof] } else { GRIPPER_OPEN },
            }
        })
        .collect();
    let base = if task.has_base() {
        action[action.len() - 1]
    } else {
        0.0
    };
    Ok((arms, base))
}

/// Inverse of [`split_action`].
pub fn join_action(task: TaskId, arms: &[ArmCommand], base: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for a in arms {
        out.extend_from_slice(&a.deltas);
        if task.has_gripper() {
            out.push(a.gripper);
        }
    }
    if task.has_base() {
        out.push(base);
    }
    out
}

/// Simulator gripper command in `[0, 1]` for a gripper channel value.
pub fn gripper_command(channel: f64) -> f64 {
    0.5 + 0.5 * channel.clamp(-MAX_GRIPPER, MAX_GRIPPER) / MAX_GRIPPER
}

/// Clips every channel to its bound.
pub fn bound_action(task: TaskId, dof: usize, action: &[f64]) -> Result<Vec<f64>> {
    let (mut arms, base) = split_action(task, dof, action)?;
    for a in &mut arms {
        for d in &mut a.deltas {
            *d = d.clamp(-MAX_JOINT_DELTA, MAX_JOINT_DELTA);
        }
        a.gripper = a.gripper.clamp(-MAX_GRIPPER, MAX_GRIPPER);
    }
    Ok(join_action(
        task,
        &arms,
        base.clamp(-MAX_BASE_DELTA, MAX_BASE_DELTA),
    ))
}

/// Executes actions on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub spec: TaskSpec,
    pub arm: ArmModel,
    /// Gains of the joint-delta servo.
    pub servo: CouplingGains,
}

impl Env {
    pub fn new(spec: TaskSpec, arm: ArmModel) -> Self {
        let servo = CouplingGains::critically_damped(DEFAULT_SERVO_KP, &arm.inertia, 1.0, 1.0);
        Self { spec, arm, servo }
    }

    pub fn preset(task: TaskId) -> Self {
        Self::new(TaskSpec::preset(task), ArmModel::default())
    }

    pub fn task(&self) -> TaskId {
        self.spec.task_id
    }

    pub fn action_dim(&self) -> usize {
        action_dim(self.task(), self.arm.dof())
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(&self.spec, self.arm.dof())
    }

    pub fn reset(&self, seed: u64) -> WorldState {
        sim::reset(&self.spec, seed)
    }

    pub fn observe(&self, world: &WorldState) -> Vec<f64> {
        observe(world, &self.spec)
    }

    /// Torques, grippers and base velocity realizing `action` from `world`.
    pub fn actuation(&self, world: &WorldState, action: &[f64]) -> Result<Actuation> {
        let bounded = bound_action(self.task(), self.arm.dof(), action)?;
        let (cmds, base) = split_action(self.task(), self.arm.dof(), &bounded)?;
        let dt = self.spec.dt;
        let mut torques = Vec::with_capacity(cmds.len());
        for (q, cmd) in world.arms.iter().zip(&cmds) {
            let target = JointState {
                positions: q.positions.iter().zip(&cmd.deltas).map(|(p, d)| p + d).collect(),
                velocities: cmd.deltas.iter().map(|d| d / dt).collect(),
            };
            let raw = follower_torque(&target, q, &self.servo)?;
            torques.push(compensated_torque(&raw, &self.arm, q)?);
        }
        Ok(Actuation {
            torques,
            grippers: cmds.iter().map(|c| gripper_command(c.gripper)).collect(),
            base_velocity: base / dt,
        })
    }

    pub fn apply(&self, world: &WorldState, action: &[f64]) -> Result<WorldState> {
        let act = self.actuation(world, action)?;
        sim::step(world, &self.spec, &self.arm, &act, self.spec.dt)
    }

    pub fn success(&self, world: &WorldState) -> Result<Vec<bool>> {
        sim::success(world, &self.spec, &self.arm)
    }

    pub fn ee_positions(&self, world: &WorldState) -> Result<Vec<[f64; 2]>> {
        sim::ee_positions(world, &self.spec, &self.arm)
    }

    pub fn done(&self, world: &WorldState) -> bool {
        sim::is_complete(world, &self.spec) || world.step_count >= self.spec.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_match_observation() {
        for t in TaskId::ALL {
            let env = Env::preset(t);
            let w = env.reset(1);
            assert_eq!(env.observe(&w).len(), env.obs_dim(), "{t}");
        }
        assert_eq!(action_dim(TaskId::Reach2d, 2), 2);
        assert_eq!(action_dim(TaskId::PickPlace2d, 2), 3);
        assert_eq!(action_dim(TaskId::BiTransport2d, 2), 7);
    }

    #[test]
    fn split_join_round_trip() {
        let a = vec![0.01, -0.02, 0.03, 0.04, 0.0, -0.05, -0.01];
        let (arms, base) = split_action(TaskId::BiTransport2d, 2, &a).unwrap();
        assert_eq!(arms[1].gripper, GRIPPER_CLOSED);
        assert_eq!(join_action(TaskId::BiTransport2d, &arms, base), a);
    }

    #[test]
    fn bounding_clips() {
        let b = bound_action(TaskId::PickPlace2d, 2, &[0.3, -0.3, 7.0]).unwrap();
        assert_eq!(b, vec![MAX_JOINT_DELTA, -MAX_JOINT_DELTA, GRIPPER_OPEN]);
        assert!(bound_action(TaskId::PickPlace2d, 2, &[0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn gripper_channel_maps_to_command() {
        assert_eq!(gripper_command(GRIPPER_OPEN), 1.0);
        assert_eq!(gripper_command(GRIPPER_CLOSED), 0.0);
        assert_eq!(gripper_command(0.0), 0.5);
        assert!(gripper_command(-1e-9) < sim::GRIP_CLOSE_BELOW);
    }

    #[test]
    fn servo_tracks_constant_delta() {
        let env = Env::preset(TaskId::Reach2d);
        let mut w = env.reset(3);
        let start = w.arms[0].positions.clone();
        for _ in 0..40 {
            w = env.apply(&w, &[0.02, -0.01]).unwrap();
        }
        let moved: Vec<f64> = w.arms[0].positions.iter().zip(&start).map(|(a, b)| a - b).collect();
        // roughly one delta per step once the servo has caught up
        assert!((moved[0] - 0.8).abs() < 0.1, "{moved:?}");
        assert!((moved[1] + 0.4).abs() < 0.05, "{moved:?}");
    }

    #[test]
    fn zero_action_holds_still() {
        let env = Env::preset(TaskId::Reach2d);
        let w0 = env.reset(3);
        let mut w = w0.clone();
        for _ in 0..100 {
            w = env.apply(&w, &[0.0, 0.0]).unwrap();
        }
        for (a, b) in w.arms[0].positions.iter().zip(&w0.arms[0].positions) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
