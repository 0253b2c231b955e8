//! Scripted waypoint expert standing in for the human demonstrator.
//!
//! The expert is memoryless: the active waypoint is recomputed from the
//! world on every call (subtask progress, which objects are held), so it can
//! label any state a learner visits.

use serde::{Deserialize, Serialize};

use crate::env::{join_action, ArmCommand, Env, GRIPPER_CLOSED, GRIPPER_OPEN, MAX_BASE_DELTA, MAX_JOINT_DELTA};
use crate::error::Result;
use crate::sim::{damped_ik_step, dist, TaskId, WorldState};

/// Tracking parameters of the scripted expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertGains {
    /// Fraction of the end-effector error commanded per step.
    pub ee_gain: f64,
    /// Largest end-effector displacement commanded per step (m).
    pub max_ee_step: f64,
    /// Damping of the least-squares inverse kinematics.
    pub ik_damping: f64,
    /// Distance to an object below which the gripper is already closed on
    /// approach; the grasp itself happens inside the grasp radius.
    pub close_within: f64,
    /// Distance to the drop point below which a held object is released.
    pub release_within: f64,
    /// Horizontal distance of the carried beam from the tote below which it
    /// is released.
    pub tote_release: f64,
    /// Distance below which the expert stops moving.
    pub settle: f64,
    /// Gain on the base displacement toward its target.
    pub base_gain: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            ee_gain: 0.3,
            max_ee_step: 0.03,
            ik_damping: 0.05,
            close_within: 0.06,
            release_within: 0.03,
            tote_release: 0.05,
            settle: 0.004,
            base_gain: 0.5,
        }
    }
}

/// Height at which the transport beam is carried.
pub const CARRY_HEIGHT: f64 = -0.6;

/// Where the kitchen lid is set down, relative to the pot.
pub fn lid_drop(pot: [f64; 2]) -> [f64; 2] {
    [pot[0] + 0.25, pot[1] + 0.3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedExpert {
    pub env: Env,
    pub gains: ExpertGains,
}

const OPEN: f64 = GRIPPER_OPEN;
const CLOSED: f64 = GRIPPER_CLOSED;

impl ScriptedExpert {
    pub fn new(env: Env) -> Self {
        Self {
            env,
            gains: ExpertGains::default(),
        }
    }

    fn idle(&self) -> ArmCommand {
        ArmCommand {
            deltas: vec![0.0; self.env.arm.dof()],
            gripper: OPEN,
        }
    }

    /// Joint deltas moving arm `a`'s end effector toward `target`.
    fn reach(&self, world: &WorldState, ee: [f64; 2], a: usize, target: [f64; 2]) -> Result<Vec<f64>> {
        let g = &self.gains;
        let err = [target[0] - ee[0], target[1] - ee[1]];
        let n = err[0].hypot(err[1]);
        let dof = self.env.arm.dof();
        if n <= g.settle {
            return Ok(vec![0.0; dof]);
        }
        let scale = (g.ee_gain * n).min(g.max_ee_step) / n;
        let dx = [err[0] * scale, err[1] * scale];

        let mut d = damped_ik_step(&self.env.arm, &world.arms[a], dx, g.ik_damping)?;
        let peak = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > MAX_JOINT_DELTA {
            let s = MAX_JOINT_DELTA / peak;
            d.iter_mut().for_each(|v| *v *= s);
        }
        Ok(d)
    }

    /// Go to `object` and close on arrival.
    fn fetch(&self, world: &WorldState, ee: [f64; 2], a: usize, object: [f64; 2]) -> Result<ArmCommand> {
        let close = dist(ee, object) <= self.gains.close_within;
        Ok(ArmCommand {
            deltas: self.reach(world, ee, a, object)?,
            gripper: if close { CLOSED } else { OPEN },
        })
    }

    /// Carry the held object to `target` and open on arrival.
    fn deliver(&self, world: &WorldState, ee: [f64; 2], a: usize, target: [f64; 2]) -> Result<ArmCommand> {
        let open = dist(ee, target) <= self.gains.release_within;
        Ok(ArmCommand {
            deltas: self.reach(world, ee, a, target)?,
            gripper: if open { OPEN } else { CLOSED },
        })
    }

    /// Release whatever is held and stay put.
    fn let_go(&self) -> ArmCommand {
        self.idle()
    }

    /// Expert action for the current world.
    pub fn action(&self, world: &WorldState) -> Result<Vec<f64>> {
        let task = self.env.task();
        let ee = self.env.ee_positions(world)?;
        let done = self.env.done(world) && world.subtask_index >= self.env.spec.subtask_count();
        let held = |i: usize| world.objects[i].held_by;
        let mut base = 0.0;
        let arms = match task {
            _ if done => vec![self.idle(); task.arm_count()],
            TaskId::Reach2d => vec![ArmCommand {
                deltas: self.reach(world, ee[0], 0, world.goal)?,
                gripper: OPEN,
            }],
            TaskId::PickPlace2d => vec![match held(0) {
                Some(_) => self.deliver(world, ee[0], 0, world.goal)?,
                None => self.fetch(world, ee[0], 0, world.objects[0].position)?,
            }],
            TaskId::KitchenLite => {
                let (lid, ball) = (held(0).is_some(), held(1).is_some());
                vec![match world.subtask_index {
                    0 if ball => self.let_go(),
                    0 if lid => self.deliver(world, ee[0], 0, lid_drop(world.goal))?,
                    0 => self.fetch(world, ee[0], 0, world.objects[0].position)?,
                    _ if lid => self.let_go(),
                    _ if ball => self.deliver(world, ee[0], 0, world.goal)?,
                    _ => self.fetch(world, ee[0], 0, world.objects[1].position)?,
                }]
            }
            TaskId::BiTransport2d => {
                let mounts = self.env.spec.mounts(world.base_x);
                let handles = [world.objects[0].position, world.objects[1].position];
                let center = [
                    0.5 * (handles[0][0] + handles[1][0]),
                    0.5 * (handles[0][1] + handles[1][1]),
                ];
                let carrying = held(0) == Some(0) && held(1) == Some(1);
                if carrying {
                    let lifted = center[1] >= CARRY_HEIGHT - 0.05;
                    let over_tote = (center[0] - world.goal[0]).abs() <= self.gains.tote_release;
                    if lifted && !over_tote {
                        base = (self.gains.base_gain * (world.goal[0] - center[0]))
                            .clamp(-MAX_BASE_DELTA, MAX_BASE_DELTA);
                    }
                    (0..2)
                        .map(|a| {
                            // carry pose directly below each mount, one beam width apart
                            let target = [mounts[a][0], CARRY_HEIGHT];
                            Ok(ArmCommand {
                                deltas: self.reach(world, ee[a], a, target)?,
                                gripper: if lifted && over_tote { OPEN } else { CLOSED },
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                } else {
                    let mid = 0.5 * (mounts[0][0] + mounts[1][0]);
                    base = (self.gains.base_gain * (center[0] - mid))
                        .clamp(-MAX_BASE_DELTA, MAX_BASE_DELTA);
                    (0..2)
                        .map(|a| self.fetch(world, ee[a], a, handles[a]))
                        .collect::<Result<Vec<_>>>()?
                }
            }
        };
        Ok(join_action(task, &arms, base))
    }
}
