use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arm::{forward_kinematics, ArmModel, JointState};
use super::task::*;
use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: [f64; 2],
    /// Index of the arm whose gripper holds the object.
    pub held_by: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub arms: Vec<JointState>,
    /// Translating base position (mobile tasks only, zero otherwise).
    pub base_x: f64,
    pub objects: Vec<ObjectState>,
    pub goal: [f64; 2],
    /// Number of subtasks completed so far, in order.
    pub subtask_index: usize,
    pub step_count: usize,
    /// Always `step_count as f64 * dt`.
    pub time: f64,
}

/// Low-level commands for one physics step.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    /// Joint torques per arm.
    pub torques: Vec<Vec<f64>>,
    /// Gripper command per arm; below [`GRIP_CLOSE_BELOW`] closes.
    pub grippers: Vec<f64>,
    /// Base velocity in m/s.
    pub base_velocity: f64,
}

impl Actuation {
    /// Zero torques with open grippers.
    pub fn idle(spec: &TaskSpec, arm: &ArmModel) -> Self {
        let n = spec.task_id.arm_count();
        Self {
            torques: vec![vec![0.0; arm.dof()]; n],
            grippers: vec![1.0; n],
            base_velocity: 0.0,
        }
    }
}

/// Caller-supplied initial configuration; any field left `None` is drawn
/// from the task's randomization ranges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_x: Option<f64>,
}

fn draw(rng: &mut impl Rng, (lo, hi): Interval) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn draw_point(rng: &mut impl Rng, r: &Region) -> [f64; 2] {
    [draw(rng, r.x), draw(rng, r.y)]
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Where the kitchen lid starts (on the pot) relative to the goal.
pub fn lid_rest(pot: [f64; 2]) -> [f64; 2] {
    pot
}

/// Deterministic initial state for `seed`.
pub fn reset(spec: &TaskSpec, seed: u64) -> WorldState {
    reset_with(spec, seed, &Placement::default())
}

/// Like [`reset`], honoring any overrides in `placement` exactly.
pub fn reset_with(spec: &TaskSpec, seed: u64, placement: &Placement) -> WorldState {
    let mut rng = rng::generator(seed);
    let r = &spec.randomization;
    let n_arms = spec.task_id.arm_count();

    let arms: Vec<JointState> = (0..n_arms)
        .map(|_| JointState::at_rest(r.joints.iter().map(|&i| draw(&mut rng, i)).collect()))
        .collect();
    let base_x = draw(&mut rng, r.base_x);
    let goal = draw_point(&mut rng, &r.goal);

    // objects are rejection-sampled away from the goal; the stream is
    // seed-keyed so the retry count is deterministic too
    let mut drawn: Vec<[f64; 2]> = Vec::new();
    for region in &r.objects {
        let mut p = draw_point(&mut rng, region);
        for _ in 0..64 {
            let clear = std::iter::once(goal)
                .chain(drawn.iter().copied())
                .all(|q| dist(p, q) >= r.min_separation);
            if clear {
                break;
            }
            p = draw_point(&mut rng, region);
        }
        drawn.push(p);
    }

    let mut world = WorldState {
        arms,
        base_x: placement.base_x.unwrap_or(base_x),
        objects: vec![],
        goal: placement.goal.unwrap_or(goal),
        subtask_index: 0,
        step_count: 0,
        time: 0.0,
    };
    if let Some(q) = &placement.arms {
        for (arm, q) in world.arms.iter_mut().zip(q) {
            *arm = JointState::at_rest(q.clone());
        }
    }
    let positions = match spec.task_id {
        TaskId::Reach2d => vec![],
        TaskId::PickPlace2d => drawn,
        TaskId::KitchenLite => vec![lid_rest(world.goal), drawn[0]],
        TaskId::BiTransport2d => {
            let c = drawn[0];
            vec![
                [c[0] - 0.5 * BEAM_WIDTH, c[1]],
                [c[0] + 0.5 * BEAM_WIDTH, c[1]],
            ]
        }
    };
    let positions = placement.objects.clone().unwrap_or(positions);
    world.objects = positions
        .into_iter()
        .map(|position| ObjectState {
            position,
            held_by: None,
        })
        .collect();
    world
}

/// World-frame end-effector (gripper) position of every arm.
pub fn ee_positions(world: &WorldState, spec: &TaskSpec, arm: &ArmModel) -> Result<Vec<[f64; 2]>> {
    spec.mounts(world.base_x)
        .iter()
        .zip(&world.arms)
        .map(|(m, q)| {
            let p = forward_kinematics(arm, q)?;
            Ok([m[0] + p[0], m[1] + p[1]])
        })
        .collect()
}

/// Advances the world by one fixed step.
///
/// Joint accelerations follow `I⁻¹(τ − g(θ) − D·θ̇)` with a diagonal inertia,
/// integrated by semi-implicit Euler. Positions leaving the joint limits are
/// clamped and the offending velocity zeroed.
pub fn step(
    world: &WorldState,
    spec: &TaskSpec,
    arm: &ArmModel,
    act: &Actuation,
    dt: f64,
) -> Result<WorldState> {
    if world.step_count >= spec.horizon {
        return Err(Error::EpisodeOver {
            horizon: spec.horizon,
        });
    }
    check_dim("arm torques", world.arms.len(), act.torques.len())?;
    check_dim("gripper commands", world.arms.len(), act.grippers.len())?;

    let mut next = world.clone();
    for (q, tau) in next.arms.iter_mut().zip(&act.torques) {
        check_dim("torque vector", arm.dof(), tau.len())?;
        let g = super::arm::gravity_torque(arm, q)?;
        for i in 0..arm.dof() {
            let acc = (tau[i] - g[i] - arm.damping[i] * q.velocities[i]) / arm.inertia[i];
            q.velocities[i] += dt * acc;
            q.positions[i] += dt * q.velocities[i];
        }
        arm.clamp(q);
    }
    if spec.task_id.has_base() {
        next.base_x = (next.base_x + dt * act.base_velocity).clamp(BASE_RANGE.0, BASE_RANGE.1);
    }

    let ee = ee_positions(&next, spec, arm)?;
    update_grasps(&mut next, spec, &ee, &act.grippers);

    next.step_count += 1;
    next.time = next.step_count as f64 * dt;
    while next.subtask_index < spec.subtask_count()
        && predicate(&next, spec, arm, next.subtask_index)?
    {
        next.subtask_index += 1;
    }
    Ok(next)
}

fn update_grasps(world: &mut WorldState, spec: &TaskSpec, ee: &[[f64; 2]], grippers: &[f64]) {
    for (a, &cmd) in grippers.iter().enumerate() {
        let holding = world.objects.iter().position(|o| o.held_by == Some(a));
        if cmd >= GRIP_CLOSE_BELOW {
            if let Some(i) = holding {
                world.objects[i].held_by = None;
            }
        } else if holding.is_none() {
            let nearest = world
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.held_by.is_none())
                .map(|(i, o)| (i, dist(o.position, ee[a])))
                .filter(|&(_, d)| d <= GRASP_RADIUS)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, _)) = nearest {
                world.objects[i].held_by = Some(a);
            }
        }
    }

    if spec.task_id == TaskId::BiTransport2d {
        let held: Vec<Option<usize>> = world.objects.iter().map(|o| o.held_by).collect();
        match (held[0], held[1]) {
            (Some(l), Some(r)) => {
                // rigid beam carried between both grippers
                let c = [(ee[l][0] + ee[r][0]) / 2.0, (ee[l][1] + ee[r][1]) / 2.0];
                world.objects[0].position = [c[0] - 0.5 * BEAM_WIDTH, c[1]];
                world.objects[1].position = [c[0] + 0.5 * BEAM_WIDTH, c[1]];
                let slipped = dist(world.objects[0].position, ee[l]) > BEAM_SLIP
                    || dist(world.objects[1].position, ee[r]) > BEAM_SLIP;
                if slipped {
                    world.objects[0].held_by = None;
                    world.objects[1].held_by = None;
                }
            }
            _ => {
                // one hand cannot lift the beam; the grip slides off instead
                for o in world.objects.iter_mut() {
                    if let Some(a) = o.held_by {
                        if dist(o.position, ee[a]) > GRASP_RADIUS {
                            o.held_by = None;
                        }
                    }
                }
            }
        }
    } else {
        for o in world.objects.iter_mut() {
            if let Some(a) = o.held_by {
                o.position = ee[a];
            }
        }
    }
}

/// Geometric predicate of subtask `k`, evaluated on the current state only.
pub fn predicate(world: &WorldState, spec: &TaskSpec, arm: &ArmModel, k: usize) -> Result<bool> {
    let released = |i: usize| world.objects[i].held_by.is_none();
    Ok(match (spec.task_id, k) {
        (TaskId::Reach2d, 0) => {
            let ee = ee_positions(world, spec, arm)?;
            dist(ee[0], world.goal) <= REACH_TOLERANCE
        }
        (TaskId::PickPlace2d, 0) => {
            released(0) && dist(world.objects[0].position, world.goal) <= PLACE_TOLERANCE
        }
        (TaskId::BiTransport2d, 0) => {
            let cx = 0.5 * (world.objects[0].position[0] + world.objects[1].position[0]);
            released(0) && released(1) && (cx - world.goal[0]).abs() <= TOTE_TOLERANCE
        }
        (TaskId::KitchenLite, 0) => {
            released(0) && dist(world.objects[0].position, world.goal) >= LID_CLEARANCE
        }
        (TaskId::KitchenLite, 1) => world.objects[1].held_by.is_some(),
        (TaskId::KitchenLite, 2) => {
            released(1) && dist(world.objects[1].position, world.goal) <= PLACE_TOLERANCE
        }
        _ => false,
    })
}

/// Forces every entry after the first `false` to `false`.
pub fn cascade(achieved: &[bool]) -> Vec<bool> {
    achieved
        .iter()
        .scan(true, |ok, &a| {
            *ok = *ok && a;
            Some(*ok)
        })
        .collect()
}

/// Per-subtask success. Subtasks already latched in `subtask_index` count
/// as achieved; the remaining ones are judged on the current state, and a
/// failed subtask fails everything after it.
pub fn success(world: &WorldState, spec: &TaskSpec, arm: &ArmModel) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(spec.subtask_count());
    let mut ok = true;
    for k in 0..spec.subtask_count() {
        ok = ok && (k < world.subtask_index || predicate(world, spec, arm, k)?);
        out.push(ok);
    }
    Ok(out)
}

pub fn is_complete(world: &WorldState, spec: &TaskSpec) -> bool {
    world.subtask_index >= spec.subtask_count()
}
