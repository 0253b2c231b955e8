//! One teleoperation session: the follower world, the virtual leader the
//! operator holds, and the recording buffer. [`Session::tick`] is the only
//! mutator and performs no I/O, so a session is replayable from its event
//! transcript alone.

use handover::bilateral::{
    compensated_torque, deviation_exceeds, follower_torque, gains_for_mode, leader_torque, mirror_torque,
    mode_transition, ControlEvent, CouplingGains, GainProfile, Mode,
};
use handover::dataset::{Source, Transition};
use handover::env::{
    bound_action, gripper_command, join_action, ArmCommand, Env, GRIPPER_CLOSED, GRIPPER_OPEN, MAX_BASE_DELTA,
    MAX_JOINT_DELTA,
};
use handover::policy::Policy;
use handover::rng::{self, Stream};
use handover::sim::{self, damped_ik_step, forward_kinematics, Actuation, JointState, WorldState};
use handover::{Error, Result};

use crate::protocol::{ClientFrame, Command, ObjectView, ServerFrame, Snapshot};

/// Stiffness of the operator's hand on the leader (N·m/rad).
pub const HAND_KP: f64 = 120.0;
const IK_ITERATIONS: usize = 30;
const IK_DAMPING: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub id: String,
    pub env: Env,
    pub gains: GainProfile,
    pub policy: Option<Policy>,
    /// Seeds the reset of every episode.
    pub seed: u64,
    /// Ticks between periodic snapshots.
    pub snapshot_every: u64,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        for mode in [Mode::Teleop, Mode::Autonomous, Mode::Takeover] {
            let g = gains_for_mode(mode, &self.gains)?;
            if g.kp.len() != self.env.arm.dof() {
                return Err(Error::Config(format!(
                    "gains: {} joint entries for a {}-joint arm",
                    g.kp.len(),
                    self.env.arm.dof()
                )));
            }
        }
        if let Some(p) = &self.policy {
            if p.obs_dim != self.env.obs_dim() || p.act_dim != self.env.action_dim() {
                return Err(Error::Config(format!(
                    "policy maps {} observations to {} actions; {} needs {} to {}",
                    p.obs_dim,
                    p.act_dim,
                    self.env.task(),
                    self.env.obs_dim(),
                    self.env.action_dim()
                )));
            }
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot interval must be at least one tick".into()));
        }
        Ok(())
    }
}

/// Flushed recording handed to the session's writer.
#[derive(Debug, Clone, PartialEq)]
pub struct SaveRequest {
    pub file: String,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub frames: Vec<ServerFrame>,
    pub saves: Vec<SaveRequest>,
}

#[derive(Debug, Clone)]
pub struct Session {
    cfg: SessionConfig,
    mode: Mode,
    world: WorldState,
    leaders: Vec<JointState>,
    leader_torque: Vec<Vec<f64>>,
    hand_targets: Vec<Vec<f64>>,
    /// Set once the operator drives the leader during autonomous execution.
    hand_engaged: bool,
    grippers: Vec<f64>,
    base_delta: f64,
    recording: Vec<Transition>,
    tick: u64,
    episode: usize,
    saves: usize,
    acked_tick: Option<u64>,
    dropped_events: u64,
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    rng::derive(seed, Stream::Session, episode as u64)
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.env.reset(episode_seed(cfg.seed, 0));
        let mut s = Self {
            mode: Mode::Idle,
            leaders: Vec::new(),
            leader_torque: Vec::new(),
            hand_targets: Vec::new(),
            hand_engaged: false,
            grippers: Vec::new(),
            base_delta: 0.0,
            recording: Vec::new(),
            tick: 0,
            episode: 0,
            saves: 0,
            acked_tick: None,
            dropped_events: 0,
            world,
            cfg,
        };
        s.sync_devices();
        Ok(s)
    }

    /// Puts every leader on its follower, at rest relative to it.
    fn sync_devices(&mut self) {
        self.leaders = self.world.arms.clone();
        self.hand_targets = self.leaders.iter().map(|l| l.positions.clone()).collect();
        self.leader_torque = vec![vec![0.0; self.cfg.env.arm.dof()]; self.world.arms.len()];
        self.grippers = vec![GRIPPER_OPEN; self.world.arms.len()];
        self.base_delta = 0.0;
        self.hand_engaged = false;
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn leaders(&self) -> &[JointState] {
        &self.leaders
    }

    pub fn recording(&self) -> &[Transition] {
        &self.recording
    }

    /// True when the recording buffer holds data that was neither saved nor
    /// discarded.
    pub fn unsaved(&self) -> bool {
        !self.recording.is_empty()
    }

    pub fn note_dropped(&mut self, n: u64) {
        self.dropped_events += n;
    }

    /// Empties the recording buffer without writing it, for shutdown paths
    /// that persist it themselves.
    pub fn take_recording(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.recording)
    }

    pub fn snapshot(&self) -> Snapshot {
        let env = &self.cfg.env;
        Snapshot {
            tick: self.tick,
            mode: self.mode,
            episode: self.episode,
            arms: self.world.arms.clone(),
            mounts: env.spec.mounts(self.world.base_x),
            leaders: self.leaders.clone(),
            leader_torque: self.leader_torque.clone(),
            base_x: self.world.base_x,
            objects: self
                .world
                .objects
                .iter()
                .map(|o| ObjectView {
                    position: o.position,
                    held_by: o.held_by,
                })
                .collect(),
            goal: self.world.goal,
            subtasks: env.success(&self.world).unwrap_or_default(),
            intervention: self.mode == Mode::Takeover,
            episode_over: env.done(&self.world),
            recording: self.recording.len(),
            dropped_events: self.dropped_events,
            acked_tick: self.acked_tick,
        }
    }

    /// Applies `events` in order at this tick boundary, advances the physics
    /// one step unless idle or the episode is over, and reports what the
    /// client should see.
    pub fn tick(&mut self, events: &[ClientFrame]) -> TickOutput {
        let mut out = TickOutput::default();
        let mode_before = self.mode;
        let mut announce = false;
        for ev in events {
            self.acked_tick = Some(ev.last_tick);
            match self.apply(&ev.command, &mut out) {
                Ok(changed) => announce |= changed,
                Err(e) => out.frames.push(ServerFrame::Error {
                    tick: self.tick,
                    message: e.to_string(),
                }),
            }
        }
        if self.mode != Mode::Idle && !self.cfg.env.done(&self.world) {
            if let Err(e) = self.step() {
                self.mode = Mode::Idle;
                out.frames.push(ServerFrame::Error {
                    tick: self.tick,
                    message: format!("physics stopped: {e}"),
                });
            }
        }
        self.tick += 1;
        if announce || self.mode != mode_before || self.tick % self.cfg.snapshot_every == 0 {
            out.frames.push(ServerFrame::Snapshot(self.snapshot()));
        }
        out
    }

    /// Returns whether the event changed something the client must see
    /// before the next periodic snapshot.
    fn apply(&mut self, cmd: &Command, out: &mut TickOutput) -> Result<bool> {
        let arms = self.world.arms.len();
        let check_arm = |arm: usize| {
            if arm < arms {
                Ok(())
            } else {
                Err(Error::Config(format!("arm {arm} does not exist ({arms} arms)")))
            }
        };
        match cmd {
            Command::Hello { .. } => Err(Error::ProtocolMismatch("HELLO is only valid as the first frame".into())),
            Command::Save => {
                if self.recording.is_empty() {
                    return Err(Error::Empty("recording buffer"));
                }
                let file = format!("save-{:04}.jsonl", self.saves);
                self.saves += 1;
                let transitions = std::mem::take(&mut self.recording);
                out.frames.push(ServerFrame::Saved {
                    tick: self.tick,
                    file: file.clone(),
                    transitions: transitions.len(),
                });
                out.saves.push(SaveRequest { file, transitions });
                Ok(true)
            }
            Command::Discard => {
                let n = self.recording.len();
                self.recording.clear();
                out.frames.push(ServerFrame::Discarded {
                    tick: self.tick,
                    transitions: n,
                });
                Ok(true)
            }
            Command::Reset => {
                self.episode += 1;
                self.world = self.cfg.env.reset(episode_seed(self.cfg.seed, self.episode));
                self.sync_devices();
                Ok(true)
            }
            Command::StartPolicy if self.cfg.policy.is_none() => {
                Err(Error::Config("no policy loaded; start the server with a policy file".into()))
            }
            Command::Drive {
                arm,
                joint_deltas,
                ee_target,
                base_delta,
            } => {
                check_arm(*arm)?;
                if self.mode == Mode::Autonomous && !self.hand_engaged {
                    self.hand_targets = self.leaders.iter().map(|l| l.positions.clone()).collect();
                    self.hand_engaged = true;
                }
                self.drive(*arm, joint_deltas.as_deref(), *ee_target, *base_delta)?;
                Ok(false)
            }
            Command::Gripper { arm, closed } => {
                check_arm(*arm)?;
                if self.cfg.env.task().has_gripper() {
                    self.grippers[*arm] = if *closed { GRIPPER_CLOSED } else { GRIPPER_OPEN };
                }
                Ok(false)
            }
            other => {
                let event = other.control_event().expect("remaining commands are mode events");
                let next = mode_transition(self.mode, event);
                if next.human_in_control() && !self.mode.human_in_control() {
                    // the hand picks the leader up where it is
                    self.hand_targets = self.leaders.iter().map(|l| l.positions.clone()).collect();
                    self.base_delta = 0.0;
                }
                self.hand_engaged = false;
                self.mode = next;
                Ok(false)
            }
        }
    }

    fn drive(&mut self, arm: usize, deltas: Option<&[f64]>, ee: Option<[f64; 2]>, base: Option<f64>) -> Result<()> {
        let env = &self.cfg.env;
        let dof = env.arm.dof();
        match (deltas, ee) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("DRIVE takes joint_deltas or ee_target, not both".into()));
            }
            (Some(d), None) => {
                if d.len() != dof || d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("joint_deltas needs {dof} finite values")));
                }
                let mut target = JointState::at_rest(self.hand_targets[arm].iter().zip(d).map(|(t, d)| t + d).collect());
                env.arm.clamp(&mut target);
                self.hand_targets[arm] = target.positions;
            }
            (None, Some(goal)) => {
                if !goal.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("ee_target"));
                }
                let mount = env.spec.mounts(self.world.base_x)[arm];
                let local = [goal[0] - mount[0], goal[1] - mount[1]];
                let mut q = JointState::at_rest(self.hand_targets[arm].clone());
                for _ in 0..IK_ITERATIONS {
                    let p = forward_kinematics(&env.arm, &q)?;
                    let dx = [local[0] - p[0], local[1] - p[1]];
                    let step = damped_ik_step(&env.arm, &q, dx, IK_DAMPING)?;
                    q.positions.iter_mut().zip(&step).for_each(|(a, b)| *a += b);
                    env.arm.clamp(&mut q);
                }
                self.hand_targets[arm] = q.positions;
            }
            (None, None) => {}
        }
        if let Some(b) = base {
            if !b.is_finite() {
                return Err(Error::NonFinite("base_delta"));
            }
            self.base_delta = b.clamp(-MAX_BASE_DELTA, MAX_BASE_DELTA);
        }
        Ok(())
    }

    /// Integrates the virtual leaders one step under `torques`. Leaders are
    /// gravity compensated, so gravity cancels and only damping remains.
    fn integrate_leaders(&mut self, torques: &[Vec<f64>]) {
        let arm = &self.cfg.env.arm;
        let dt = self.cfg.env.spec.dt;
        for (l, tau) in self.leaders.iter_mut().zip(torques) {
            for i in 0..arm.dof() {
                let acc = (tau[i] - arm.damping[i] * l.velocities[i]) / arm.inertia[i];
                l.velocities[i] += dt * acc;
                l.positions[i] += dt * l.velocities[i];
            }
            arm.clamp(l);
        }
    }

    fn hand_torque(&self, a: usize) -> Vec<f64> {
        let arm = &self.cfg.env.arm;
        let l = &self.leaders[a];
        (0..arm.dof())
            .map(|i| {
                let kd = 2.0 * (HAND_KP * arm.inertia[i]).sqrt();
                HAND_KP * (self.hand_targets[a][i] - l.positions[i]) - kd * l.velocities[i]
            })
            .collect()
    }

    fn step(&mut self) -> Result<()> {
        let env = self.cfg.env.clone();
        let obs = env.observe(&self.world);
        let before = self.world.clone();
        let mode = self.mode;
        let gains: CouplingGains = gains_for_mode(self.mode, &self.cfg.gains)?;
        let (next, action, source) = if self.mode == Mode::Autonomous {
            let policy = self.cfg.policy.as_ref().expect("autonomous mode requires a policy");
            let action = bound_action(env.task(), env.arm.dof(), &policy.predict(&obs)?)?;
            let next = env.apply(&self.world, &action)?;
            let mut pulls = Vec::with_capacity(self.leaders.len());
            let mut on_leader = Vec::with_capacity(self.leaders.len());
            for (a, (l, f)) in self.leaders.iter().zip(&self.world.arms).enumerate() {
                let pull = mirror_torque(l, f, &gains)?;
                let total = if self.hand_engaged {
                    pull.iter().zip(self.hand_torque(a)).map(|(p, h)| p + h).collect()
                } else {
                    pull.clone()
                };
                pulls.push(pull);
                on_leader.push(total);
            }
            self.leader_torque = pulls;
            self.integrate_leaders(&on_leader);
            let pulled = self
                .leaders
                .iter()
                .zip(&next.arms)
                .any(|(l, f)| deviation_exceeds(l, f, self.cfg.gains.grab_threshold));
            if self.hand_engaged && pulled {
                // the operator pulled the leader away: that is a grab
                self.mode = mode_transition(self.mode, ControlEvent::HumanGrab);
                self.hand_engaged = false;
                self.base_delta = 0.0;
            }
            (next, action, Source::Policy)
        } else {
            let mut on_leader = Vec::new();
            let mut on_follower = Vec::new();
            let mut rendered = Vec::new();
            for (a, (l, f)) in self.leaders.iter().zip(&self.world.arms).enumerate() {
                let reflected = leader_torque(l, f, &gains)?;
                let hand = self.hand_torque(a);
                on_leader.push(hand.iter().zip(&reflected).map(|(h, r)| h + r).collect::<Vec<_>>());
                rendered.push(reflected);
                on_follower.push(compensated_torque(&follower_torque(l, f, &gains)?, &env.arm, f)?);
            }
            let act = Actuation {
                torques: on_follower,
                grippers: self.grippers.iter().map(|&g| gripper_command(g)).collect(),
                base_velocity: self.base_delta / env.spec.dt,
            };
            let next = sim::step(&self.world, &env.spec, &env.arm, &act, env.spec.dt)?;
            self.leader_torque = rendered;
            self.integrate_leaders(&on_leader);
            let action = self.realized_action(&before, &next)?;
            (next, action, Source::Human)
        };
        self.recording.push(Transition {
            episode: self.episode,
            step: before.step_count,
            task_id: env.task(),
            obs,
            action,
            source,
            mode_at_step: mode,
        });
        self.world = next;
        Ok(())
    }

    /// The follower's motion over one step, expressed as an action.
    fn realized_action(&self, before: &WorldState, after: &WorldState) -> Result<Vec<f64>> {
        let env = &self.cfg.env;
        let cmds: Vec<ArmCommand> = before
            .arms
            .iter()
            .zip(&after.arms)
            .zip(&self.grippers)
            .map(|((b, a), &g)| ArmCommand {
                deltas: a
                    .positions
                    .iter()
                    .zip(&b.positions)
                    .map(|(x, y)| (x - y).clamp(-MAX_JOINT_DELTA, MAX_JOINT_DELTA))
                    .collect(),
                gripper: g,
            })
            .collect();
        let joined = join_action(env.task(), &cmds, after.base_x - before.base_x);
        bound_action(env.task(), env.arm.dof(), &joined)
    }
}

#[cfg(test)]
mod tests;
