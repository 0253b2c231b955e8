use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius within which a closing gripper attaches to an object.
pub const GRASP_RADIUS: f64 = 0.03;
/// End-effector distance to the goal that counts as reached.
pub const REACH_TOLERANCE: f64 = 0.03;
/// Released object distance to the goal that counts as placed.
pub const PLACE_TOLERANCE: f64 = 0.05;
/// Minimum distance of a released lid from the pot for it to count as open.
pub const LID_CLEARANCE: f64 = 0.15;
/// Horizontal distance of the beam center from the tote that counts as delivered.
pub const TOTE_TOLERANCE: f64 = 0.1;
/// Handle separation of the transport beam; equals the arm mount separation.
pub const BEAM_WIDTH: f64 = 0.9;
/// A two-handed beam drops when a gripper drifts this far from its handle.
pub const BEAM_SLIP: f64 = 0.06;
/// Travel limits of the mobile base.
pub const BASE_RANGE: (f64, f64) = (-1.0, 4.0);
/// Gripper commands below this value close the gripper.
pub const GRIP_CLOSE_BELOW: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    #[serde(rename = "reach2d")]
    Reach2d,
    #[serde(rename = "pickplace2d")]
    PickPlace2d,
    #[serde(rename = "bitransport2d")]
    BiTransport2d,
    KitchenLite,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [
        TaskId::Reach2d,
        TaskId::PickPlace2d,
        TaskId::BiTransport2d,
        TaskId::KitchenLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Reach2d => "reach2d",
            TaskId::PickPlace2d => "pickplace2d",
            TaskId::BiTransport2d => "bitransport2d",
            TaskId::KitchenLite => "kitchen_lite",
        }
    }

    pub fn arm_count(self) -> usize {
        match self {
            TaskId::BiTransport2d => 2,
            _ => 1,
        }
    }

    pub fn has_gripper(self) -> bool {
        !matches!(self, TaskId::Reach2d)
    }

    pub fn has_base(self) -> bool {
        matches!(self, TaskId::BiTransport2d)
    }

    /// Number of objects in the scene.
    pub fn object_count(self) -> usize {
        match self {
            TaskId::Reach2d => 0,
            TaskId::PickPlace2d => 1,
            // lid then ball; beam handles left then right
            TaskId::KitchenLite | TaskId::BiTransport2d => 2,
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task id `{s}`")))
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed interval used for seeded placement draws.
pub type Interval = (f64, f64);

/// A rectangular placement region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x: Interval,
    pub y: Interval,
}

/// Seed-driven ranges for initial placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    /// Per-joint initial angle range, shared by all arms.
    pub joints: Vec<Interval>,
    /// Goal region (reach target, place target, tote or pot).
    pub goal: Region,
    /// One region per randomly placed object. Objects whose position is
    /// derived from the goal (the kitchen lid) have no entry.
    pub objects: Vec<Region>,
    pub base_x: Interval,
    /// Minimum distance between any two drawn points (objects and goal).
    pub min_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub subtask_names: Vec<String>,
    pub horizon: usize,
    pub dt: f64,
    pub randomization: Randomization,
}

impl TaskSpec {
    pub fn preset(task_id: TaskId) -> Self {
        let joints = match task_id {
            // both arms start near a common home pose
            TaskId::BiTransport2d => vec![(-0.9, -0.5), (0.9, 1.3)],
            _ => vec![(-1.4, 0.0), (0.4, 1.8)],
        };
        let (subtasks, horizon, goal, objects, base_x, min_separation): (
            &[&str],
            usize,
            Region,
            Vec<Region>,
            Interval,
            f64,
        ) = match task_id {
            TaskId::Reach2d => (
                &["reach"],
                150,
                Region {
                    x: (0.6, 1.5),
                    y: (-1.0, -0.2),
                },
                vec![],
                (0.0, 0.0),
                0.0,
            ),
            TaskId::PickPlace2d => (
                &["place"],
                300,
                Region {
                    x: (0.6, 1.5),
                    y: (-1.0, -0.2),
                },
                vec![Region {
                    x: (0.6, 1.5),
                    y: (-1.0, -0.2),
                }],
                (0.0, 0.0),
                0.3,
            ),
            TaskId::BiTransport2d => (
                &["transport"],
                450,
                Region {
                    x: (2.0, 3.0),
                    y: (-1.0, -1.0),
                },
                vec![Region {
                    x: (-0.2, 0.2),
                    y: (-1.15, -0.85),
                }],
                (-0.1, 0.1),
                0.0,
            ),

            TaskId::KitchenLite => (
                &["open_lid", "pick_ball", "place_in_pot"],
                450,
                Region {
                    x: (1.0, 1.4),
                    y: (-0.9, -0.5),
                },
                // ball kept left of the pot, away from where the lid is set down
                vec![Region {
                    x: (0.4, 0.9),
                    y: (-1.1, -0.5),
                }],
                (0.0, 0.0),
                0.3,
            ),
        };
        TaskSpec {
            task_id,
            subtask_names: subtasks.iter().map(|s| s.to_string()).collect(),
            horizon,
            dt: 0.01,
            randomization: Randomization {
                joints,
                goal,
                objects,
                base_x,
                min_separation,
            },
        }
    }

    pub fn subtask_count(&self) -> usize {
        self.subtask_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("task.horizon must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("task.dt must be positive".into()));
        }
        let expected = match self.task_id {
            TaskId::KitchenLite => 3,
            _ => 1,
        };
        if self.subtask_count() != expected {
            return Err(Error::Config(format!(
                "task.subtask_names: {} expects {expected} subtasks, got {}",
                self.task_id,
                self.subtask_count()
            )));
        }
        let r = &self.randomization;
        let drawn = match self.task_id {
            TaskId::Reach2d => 0,
            _ => 1,
        };
        if r.objects.len() != drawn {
            return Err(Error::Config(format!(
                "task.randomization.objects: expected {drawn} regions, got {}",
                r.objects.len()
            )));
        }
        let intervals = r
            .joints
            .iter()
            .chain([&r.goal.x, &r.goal.y, &r.base_x])
            .chain(r.objects.iter().flat_map(|o| [&o.x, &o.y]));
        for (lo, hi) in intervals {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "task.randomization: invalid interval ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Mount points of the arms for a given base position.
    pub fn mounts(&self, base_x: f64) -> Vec<[f64; 2]> {
        match self.task_id {
            TaskId::BiTransport2d => vec![
                [base_x - 0.5 * BEAM_WIDTH, 0.0],
                [base_x + 0.5 * BEAM_WIDTH, 0.0],
            ],
            _ => vec![[0.0, 0.0]],
        }
    }
}
