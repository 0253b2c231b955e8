use proptest::prelude::*;

use super::*;
use crate::sim::{self, Actuation, TaskId, TaskSpec};

fn js(p: [f64; 2], v: [f64; 2]) -> JointState {
    JointState {
        positions: p.to_vec(),
        velocities: v.to_vec(),
    }
}

fn gains(kp: f64, kd: f64, alpha: f64, beta_d: f64) -> CouplingGains {
    CouplingGains {
        kp: vec![kp; 2],
        kd: vec![kd; 2],
        alpha,
        beta_d,
    }
}

#[test]
fn leader_torque_examples() {
    let g = gains(10.0, 3.0, 0.5, 0.5);
    let s = js([0.3, -0.2], [0.1, 0.4]);
    assert_eq!(leader_torque(&s, &s, &g).unwrap(), vec![0.0, 0.0]);

    let t = leader_torque(&js([0.1, 0.0], [0.0; 2]), &js([0.2, 0.0], [0.0; 2]), &g).unwrap();
    assert!((t[0] - 0.5).abs() < 1e-12 && t[1] == 0.0, "{t:?}");

    let off = gains(10.0, 3.0, 0.0, 0.0);
    let t = leader_torque(&js([1.0, 2.0], [3.0, 4.0]), &js([-1.0, 0.5], [0.0, 9.0]), &off).unwrap();
    assert_eq!(t, vec![0.0, 0.0]);
}

#[test]
fn follower_torque_examples() {
    let g = gains(10.0, 3.0, 0.2, 0.7);
    let s = js([0.3, -0.2], [0.1, 0.4]);
    assert_eq!(follower_torque(&s, &s, &g).unwrap(), vec![0.0, 0.0]);
    let t = follower_torque(&js([0.2, 0.0], [0.0; 2]), &js([0.1, 0.0], [0.0; 2]), &g).unwrap();
    assert!((t[0] - 1.0).abs() < 1e-12 && t[1] == 0.0, "{t:?}");
}

#[test]
fn dimension_mismatch_rejected() {
    let g = gains(10.0, 3.0, 1.0, 1.0);
    let bad = JointState::at_rest(vec![0.0; 3]);
    let ok = JointState::at_rest(vec![0.0; 2]);
    assert!(leader_torque(&bad, &ok, &g).is_err());
    assert!(follower_torque(&ok, &bad, &g).is_err());
}

#[test]
fn mode_transition_examples() {
    assert_eq!(
        mode_transition(Mode::Autonomous, ControlEvent::HumanGrab),
        Mode::Takeover
    );
    assert_eq!(
        mode_transition(Mode::Teleop, ControlEvent::HumanGrab),
        Mode::Teleop
    );
    assert_eq!(
        mode_transition(Mode::Takeover, ControlEvent::HumanRelease),
        Mode::Autonomous
    );
    assert_eq!(
        mode_transition(Mode::Idle, ControlEvent::EngageTeleop),
        Mode::Teleop
    );
    assert_eq!(
        mode_transition(Mode::Teleop, ControlEvent::StartPolicy),
        Mode::Autonomous
    );
}

#[test]
fn mode_machine_exhaustive() {
    for mode in Mode::ALL {
        for event in ControlEvent::ALL {
            let next = mode_transition(mode, event);
            if next == Mode::Takeover && mode != Mode::Takeover {
                assert_eq!((mode, event), (Mode::Autonomous, ControlEvent::HumanGrab));
            }
            if event.is_data_utility() {
                assert_eq!(next, mode, "{event:?} changed {mode:?}");
            }
            if event == ControlEvent::Stop {
                assert_eq!(next, Mode::Idle);
            }
        }
    }
}

#[test]
fn gain_schedule_defaults() {
    let p = GainProfile::default();
    let auto = gains_for_mode(Mode::Autonomous, &p).unwrap();
    assert_eq!(auto.kp, vec![40.0, 40.0]);
    let tele = gains_for_mode(Mode::Teleop, &p).unwrap();
    assert_eq!(tele.kp, vec![10.0, 10.0]);
    assert_eq!(tele.alpha, 0.3);
    assert_eq!(gains_for_mode(Mode::Takeover, &p).unwrap(), tele);
    let idle = gains_for_mode(Mode::Idle, &p).unwrap();
    assert!(idle.kp.iter().chain(&idle.kd).all(|&k| k == 0.0));
    assert_eq!(idle.alpha, 0.0);
    p.validate().unwrap();
}

#[test]
fn missing_profile_entry_is_config_error() {
    let p = GainProfile {
        takeover: None,
        ..GainProfile::default()
    };
    assert!(matches!(
        gains_for_mode(Mode::Takeover, &p),
        Err(Error::Config(_))
    ));
    assert!(p.validate().is_err());
}

#[test]
fn compensated_torque_examples() {
    let arm = ArmModel::default();
    let down = JointState::at_rest(vec![-std::f64::consts::FRAC_PI_2, 0.0]);
    let t = compensated_torque(&[0.0, 0.0], &arm, &down).unwrap();
    assert!(t.iter().all(|x| x.abs() < 1e-12));

    let flat = JointState::at_rest(vec![0.0, 0.0]);
    let t = compensated_torque(&[0.0, 0.0], &arm, &flat).unwrap();
    assert!((t[0] - 19.62).abs() < 1e-12 && (t[1] - 4.905).abs() < 1e-12);

    let q = JointState::at_rest(vec![0.7, -0.4]);
    let neg: Vec<f64> = gravity_torque(&arm, &q).unwrap().iter().map(|g| -g).collect();
    assert_eq!(compensated_torque(&neg, &arm, &q).unwrap(), vec![0.0, 0.0]);
}

fn state() -> impl Strategy<Value = JointState> {
    prop::array::uniform4(-3.0f64..3.0).prop_map(|a| js([a[0], a[1]], [a[2], a[3]]))
}

proptest! {
    #[test]
    fn antisymmetric_at_full_reflection(l in state(), f in state(), kp in 0.1f64..100.0, kd in 0.0f64..30.0) {
        let g = gains(kp, kd, 1.0, 1.0);
        let tl = leader_torque(&l, &f, &g).unwrap();
        let tf = follower_torque(&l, &f, &g).unwrap();
        for i in 0..2 {
            prop_assert_eq!(tl[i], -tf[i]);
        }
    }

    #[test]
    fn reflection_scales_decompose(l in state(), f in state(), alpha in 0.0f64..=1.0, beta in 0.0f64..=1.0) {
        let kp = 40.0;
        let kd = 12.0;
        // position-only and velocity-only terms at unit scales
        let pos = leader_torque(&l, &f, &gains(kp, 0.0, 1.0, 1.0)).unwrap();
        let vel = leader_torque(&l, &f, &gains(kp, kd, 0.0, 1.0)).unwrap();
        let scaled = leader_torque(&l, &f, &gains(kp, kd, alpha, beta)).unwrap();
        for i in 0..2 {
            prop_assert_eq!(scaled[i], alpha * pos[i] + beta * vel[i]);
        }
    }
}

/// Two default arms coupled through the stiff profile, both gravity
/// compensated, integrated with the simulator's own stepper.
fn coupled_gap_after(leader0: [f64; 2], follower0: [f64; 2], seconds: f64) -> f64 {
    let arm = ArmModel::default();
    let mut spec = TaskSpec::preset(TaskId::Reach2d);
    spec.horizon = usize::MAX;
    let stiff = gains_for_mode(Mode::Autonomous, &GainProfile::default()).unwrap();
    let mut leader = sim::reset(&spec, 0);
    let mut follower = leader.clone();
    leader.arms[0] = JointState::at_rest(leader0.to_vec());
    follower.arms[0] = JointState::at_rest(follower0.to_vec());
    let steps = (seconds / spec.dt).round() as usize;
    for _ in 0..steps {
        let (l, f) = (&leader.arms[0], &follower.arms[0]);
        let tl = compensated_torque(&leader_torque(l, f, &stiff).unwrap(), &arm, l).unwrap();
        let tf = compensated_torque(&follower_torque(l, f, &stiff).unwrap(), &arm, f).unwrap();
        let drive = |t: Vec<f64>| Actuation {
            torques: vec![t],
            grippers: vec![1.0],
            base_velocity: 0.0,
        };
        leader = sim::step(&leader, &spec, &arm, &drive(tl), spec.dt).unwrap();
        follower = sim::step(&follower, &spec, &arm, &drive(tf), spec.dt).unwrap();
    }
    leader.arms[0]
        .positions
        .iter()
        .zip(&follower.arms[0].positions)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn coupled_arms_converge_within_two_seconds() {
    for (l, f) in [
        ([0.5, 0.0], [0.0, 0.0]),
        ([-0.6, 1.2], [-0.1, 0.9]),
        ([0.2, -0.5], [0.2, 0.0]),
    ] {
        let gap = coupled_gap_after(l, f, 2.0);
        assert!(gap < 0.01, "{l:?} vs {f:?}: gap {gap}");
    }
}

#[test]
fn deviation_detector() {
    let a = JointState::at_rest(vec![0.0, 0.0]);
    let b = JointState::at_rest(vec![0.1, -0.16]);
    assert!(deviation_exceeds(&a, &b, 0.15));
    assert!(!deviation_exceeds(&a, &b, 0.2));
}

#[test]
fn mirror_pulls_leader_onto_follower() {
    let stiff = gains_for_mode(Mode::Autonomous, &GainProfile::default()).unwrap();
    let leader = JointState::at_rest(vec![0.0, 0.0]);
    let follower = JointState::at_rest(vec![0.1, -0.1]);
    let t = mirror_torque(&leader, &follower, &stiff).unwrap();
    assert!(t[0] > 0.0 && t[1] < 0.0);
}
