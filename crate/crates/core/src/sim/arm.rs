//! Planar serial arms: kinematics, the gravity term of the manipulator
//! equation and the associated potential energy.
//!
//! Joint angles are relative; the first joint is measured from +x and
//! gravity acts along -y.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Geometry and mass properties of a planar arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    /// Link lengths in meters.
    pub link_lengths: Vec<f64>,
    /// Link masses in kg.
    pub link_masses: Vec<f64>,
    /// Distance from each proximal joint to the link's center of mass.
    pub com_offsets: Vec<f64>,
    /// `(min, max)` joint angle in radians.
    pub joint_limits: Vec<(f64, f64)>,
    /// Gravitational acceleration in m/s², acting along -y.
    pub gravity: f64,
    /// Constant diagonal joint-space inertia.
    pub inertia: Vec<f64>,
    /// Viscous joint damping in N·m·s/rad.
    pub damping: Vec<f64>,
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            link_lengths: vec![1.0, 1.0],
            link_masses: vec![1.0, 1.0],
            com_offsets: vec![0.5, 0.5],
            joint_limits: vec![
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-2.8, 2.8),
            ],
            gravity: 9.81,
            inertia: vec![1.0, 1.0],
            damping: vec![0.5, 0.5],
        }
    }
}

impl ArmModel {
    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n == 0 {
            return Err(Error::InvalidModel("arm has no links".into()));
        }
        check_dim("link_masses", n, self.link_masses.len())?;
        check_dim("com_offsets", n, self.com_offsets.len())?;
        check_dim("joint_limits", n, self.joint_limits.len())?;
        check_dim("inertia", n, self.inertia.len())?;
        check_dim("damping", n, self.damping.len())?;
        for i in 0..n {
            let (l, m, c) = (
                self.link_lengths[i],
                self.link_masses[i],
                self.com_offsets[i],
            );
            if !(l > 0.0 && m > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "link {i}: length and mass must be positive"
                )));
            }
            if !(c >= 0.0 && c <= l) {
                return Err(Error::InvalidModel(format!(
                    "link {i}: com offset {c} outside [0, {l}]"
                )));
            }
            let (lo, hi) = self.joint_limits[i];
            if !(lo < hi) {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: limit min {lo} not below max {hi}"
                )));
            }
            if !(self.inertia[i] > 0.0) || !(self.damping[i] >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: inertia must be positive and damping non-negative"
                )));
            }
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::InvalidModel("gravity must be non-negative".into()));
        }
        Ok(())
    }

    /// Clamps `q` into the joint limits, zeroing the velocity of any joint
    /// that was clamped.
    pub fn clamp(&self, q: &mut JointState) {
        for (i, &(lo, hi)) in self.joint_limits.iter().enumerate() {
            let p = q.positions[i];
            if p < lo {
                q.positions[i] = lo;
                q.velocities[i] = 0.0;
            } else if p > hi {
                q.positions[i] = hi;
                q.velocities[i] = 0.0;
            }
        }
    }
}

/// Joint positions (rad) and velocities (rad/s) of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl JointState {
    pub fn at_rest(positions: Vec<f64>) -> Self {
        let velocities = vec![0.0; positions.len()];
        Self {
            positions,
            velocities,
        }
    }

    pub fn dof(&self) -> usize {
        self.positions.len()
    }

    pub(crate) fn check(&self, dof: usize) -> Result<()> {
        check_dim("joint positions", dof, self.positions.len())?;
        check_dim("joint velocities", dof, self.velocities.len())
    }
}

fn absolute_angles(q: &[f64]) -> Vec<f64> {
    q.iter()
        .scan(0.0, |acc, &t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

/// End-effector position relative to the arm's mount point.
pub fn forward_kinematics(arm: &ArmModel, q: &JointState) -> Result<[f64; 2]> {
    q.check(arm.dof())?;
    let phi = absolute_angles(&q.positions);
    let mut p = [0.0, 0.0];
    for (l, a) in arm.link_lengths.iter().zip(&phi) {
        p[0] += l * a.cos();
        p[1] += l * a.sin();
    }
    Ok(p)
}

/// Positional Jacobian of the end effector, row-major `2 x dof`.
pub fn ee_jacobian(arm: &ArmModel, q: &JointState) -> Result<Vec<[f64; 2]>> {
    q.check(arm.dof())?;
    let phi = absolute_angles(&q.positions);
    // column k collects links k.. since joint k rotates all of them
    let mut cols = vec![[0.0, 0.0]; arm.dof()];
    for k in 0..arm.dof() {
        for j in k..arm.dof() {
            let l = arm.link_lengths[j];
            cols[k][0] -= l * phi[j].sin();
            cols[k][1] += l * phi[j].cos();
        }
    }
    Ok(cols)
}

/// Joint step moving the end effector by `dx`, by damped least squares:
/// `δθ = Jᵀ (J Jᵀ + λ² I)⁻¹ dx`.
pub fn damped_ik_step(arm: &ArmModel, q: &JointState, dx: [f64; 2], damping: f64) -> Result<Vec<f64>> {
    let jac = ee_jacobian(arm, q)?;
    let lam2 = damping * damping;
    let (mut a11, mut a12, mut a22) = (lam2, 0.0, lam2);
    for c in &jac {
        a11 += c[0] * c[0];
        a12 += c[0] * c[1];
        a22 += c[1] * c[1];
    }
    let det = a11 * a22 - a12 * a12;
    let y = [(a22 * dx[0] - a12 * dx[1]) / det, (a11 * dx[1] - a12 * dx[0]) / det];
    Ok(jac.iter().map(|c| c[0] * y[0] + c[1] * y[1]).collect())
}

/// Horizontal positions of the joints and of each link's center of mass.
fn horizontal_layout(arm: &ArmModel, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = arm.dof();
    let mut joints = Vec::with_capacity(n);
    let mut coms = Vec::with_capacity(n);
    let mut x = 0.0;
    for j in 0..n {
        joints.push(x);
        coms.push(x + arm.com_offsets[j] * phi[j].cos());
        x += arm.link_lengths[j] * phi[j].cos();
    }
    (joints, coms)
}

/// Gravity term `g(θ)` of the manipulator equation: the joint torques that
/// exactly hold the arm static against gravity.
pub fn gravity_torque(arm: &ArmModel, q: &JointState) -> Result<Vec<f64>> {
    q.check(arm.dof())?;
    let phi = absolute_angles(&q.positions);
    let (joints, coms) = horizontal_layout(arm, &phi);
    let n = arm.dof();
    Ok((0..n)
        .map(|i| {
            arm.gravity
                * (i..n)
                    .map(|j| arm.link_masses[j] * (coms[j] - joints[i]))
                    .sum::<f64>()
        })
        .collect())
}

/// `∂g/∂θ`, row-major: `out[i][m] = ∂τ_i/∂θ_m`.
pub fn gravity_torque_jacobian(arm: &ArmModel, q: &JointState) -> Result<Vec<Vec<f64>>> {
    q.check(arm.dof())?;
    let n = arm.dof();
    let phi = absolute_angles(&q.positions);
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (m, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in i..n {
                // d/dθ_m of (x_com_j - x_joint_i)
                let mut d = 0.0;
                for k in i..j {
                    if m <= k {
                        d -= arm.link_lengths[k] * phi[k].sin();
                    }
                }
                if m <= j {
                    d -= arm.com_offsets[j] * phi[j].sin();
                }
                acc += arm.link_masses[j] * d;
            }
            *cell = arm.gravity * acc;
        }
    }
    Ok(out)
}

/// Gravitational potential energy; its gradient is [`gravity_torque`].
pub fn potential_energy(arm: &ArmModel, q: &JointState) -> Result<f64> {
    q.check(arm.dof())?;
    let phi = absolute_angles(&q.positions);
    let mut y = 0.0;
    let mut v = 0.0;
    for j in 0..arm.dof() {
        v += arm.link_masses[j] * (y + arm.com_offsets[j] * phi[j].sin());
        y += arm.link_lengths[j] * phi[j].sin();
    }
    Ok(arm.gravity * v)
}

/// Kinetic energy under the diagonal inertia model plus potential energy.
pub fn mechanical_energy(arm: &ArmModel, q: &JointState) -> Result<f64> {
    let kinetic: f64 = arm
        .inertia
        .iter()
        .zip(&q.velocities)
        .map(|(i, v)| 0.5 * i * v * v)
        .sum();
    Ok(kinetic + potential_energy(arm, q)?)
}
