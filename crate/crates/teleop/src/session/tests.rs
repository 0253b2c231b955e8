use proptest::prelude::*;

use super::*;
use crate::transcript::{replay, Transcript};
use handover::sim::TaskId;

fn drift_policy(env: &Env, drift: f64) -> Policy {
    let mut p = Policy::zeros(env.obs_dim(), 4, env.action_dim());
    p.act_norm.mean = vec![drift; env.action_dim()];
    p
}

fn config(task: TaskId, drift: Option<f64>) -> SessionConfig {
    let env = Env::preset(task);
    SessionConfig {
        id: "t".into(),
        gains: GainProfile::defaults_for(&env.arm),
        policy: drift.map(|d| drift_policy(&env, d)),
        env,
        seed: 7,
        snapshot_every: 5,
    }
}

fn cmd(c: Command) -> ClientFrame {
    ClientFrame { last_tick: 0, command: c }
}

fn deviation(s: &Session) -> f64 {
    s.leaders()
        .iter()
        .zip(&s.world().arms)
        .flat_map(|(l, f)| l.positions.iter().zip(&f.positions).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn all_transitions(outs: &[TickOutput], s: &Session) -> Vec<Transition> {
    let mut v: Vec<Transition> = outs
        .iter()
        .flat_map(|o| o.saves.iter().flat_map(|r| r.transitions.clone()))
        .collect();
    v.extend(s.recording().iter().cloned());
    v
}

#[test]
fn autonomous_leader_converges_onto_follower() {
    let mut s = Session::new(config(TaskId::Reach2d, Some(0.002))).unwrap();
    // the leader starts well away from the follower
    for q in &mut s.leaders[0].positions {
        *q += 0.3;
    }
    s.tick(&[cmd(Command::StartPolicy)]);
    // stay inside the episode horizon
    for _ in 0..139 {
        s.tick(&[]);
    }
    assert!(!s.snapshot().episode_over);
    assert_eq!(s.mode(), Mode::Autonomous);
    assert!(deviation(&s) < 0.05, "deviation {}", deviation(&s));
    assert_eq!(s.recording().len(), 140);
    assert!(s.recording().iter().all(|t| t.source == Source::Policy));
}

#[test]
fn grab_takes_over_on_the_next_tick() {
    let mut s = Session::new(config(TaskId::Reach2d, Some(0.002))).unwrap();
    s.tick(&[cmd(Command::StartPolicy)]);
    for _ in 0..10 {
        s.tick(&[]);
    }
    let out = s.tick(&[cmd(Command::HumanGrab)]);
    assert_eq!(s.mode(), Mode::Takeover);
    let last = s.recording().last().unwrap();
    assert_eq!(last.source, Source::Human);
    assert_eq!(last.mode_at_step, Mode::Takeover);
    // the mode change is announced immediately
    let snap = out
        .frames
        .iter()
        .find_map(|f| match f {
            ServerFrame::Snapshot(sn) => Some(sn),
            _ => None,
        })
        .expect("snapshot on mode change");
    assert_eq!(snap.mode, Mode::Takeover);
    assert!(snap.intervention);
    assert_eq!(snap.tick, s.tick_count());
}

#[test]
fn takeover_injects_no_leader_discontinuity() {
    let mut s = Session::new(config(TaskId::Reach2d, Some(0.003))).unwrap();
    s.tick(&[cmd(Command::StartPolicy)]);
    for _ in 0..50 {
        s.tick(&[]);
    }
    let mirrored = s.leaders().to_vec();
    let mut out = TickOutput::default();
    s.apply(&Command::HumanGrab, &mut out).unwrap();
    assert_eq!(s.mode(), Mode::Takeover);
    assert_eq!(s.leaders(), &mirrored[..]);
    assert_eq!(s.hand_targets[0], mirrored[0].positions);
    // the first human step moves the leader only as far as its velocity carries it
    s.step().unwrap();
    let dt = s.config().env.spec.dt;
    for (after, before) in s.leaders()[0].positions.iter().zip(&mirrored[0].positions) {
        let v = mirrored[0].velocities.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((after - before).abs() <= 2.0 * dt * v + 1e-6);
    }
}

#[test]
fn save_flushes_without_changing_mode() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    s.tick(&[cmd(Command::EngageTeleop)]);
    for _ in 0..9 {
        s.tick(&[]);
    }
    assert_eq!(s.recording().len(), 10);
    let out = s.tick(&[cmd(Command::Save)]);
    assert_eq!(s.mode(), Mode::Teleop);
    assert_eq!(out.saves.len(), 1);
    assert_eq!(out.saves[0].file, "save-0000.jsonl");
    assert_eq!(out.saves[0].transitions.len(), 10);
    // the step taken after the flush starts the next buffer
    assert_eq!(s.recording().len(), 1);
    assert!(out.frames.iter().any(|f| matches!(f, ServerFrame::Saved { transitions: 10, .. })));
    let again = s.tick(&[cmd(Command::Save)]);
    assert_eq!(again.saves[0].file, "save-0001.jsonl");
}

#[test]
fn save_on_an_empty_buffer_is_an_error_frame() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let out = s.tick(&[cmd(Command::Save)]);
    assert!(out.saves.is_empty());
    assert!(out.frames.iter().any(|f| matches!(f, ServerFrame::Error { .. })));
    assert_eq!(s.mode(), Mode::Idle);
}

#[test]
fn start_policy_without_a_policy_is_refused() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let out = s.tick(&[cmd(Command::StartPolicy)]);
    assert_eq!(s.mode(), Mode::Idle);
    assert!(out.frames.iter().any(|f| matches!(f, ServerFrame::Error { .. })));
}

#[test]
fn idle_pauses_the_world() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let before = s.world().clone();
    for _ in 0..20 {
        s.tick(&[]);
    }
    assert_eq!(s.world(), &before);
    assert!(s.recording().is_empty());
    assert_eq!(s.tick_count(), 20);
}

#[test]
fn snapshots_follow_the_interval_and_mode_changes() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let mut ticks = Vec::new();
    for t in 0..12 {
        let ev = if t == 2 { vec![cmd(Command::EngageTeleop)] } else { vec![] };
        for f in s.tick(&ev).frames {
            if let ServerFrame::Snapshot(sn) = f {
                ticks.push(sn.tick);
            }
        }
    }
    assert_eq!(ticks, vec![3, 5, 10]);
}

#[test]
fn teleop_drive_moves_the_follower_through_the_coupling() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let start = s.world().arms[0].positions.clone();
    s.tick(&[cmd(Command::EngageTeleop)]);
    s.tick(&[cmd(Command::Drive {
        arm: 0,
        joint_deltas: Some(vec![0.2, -0.1]),
        ee_target: None,
        base_delta: None,
    })]);
    for _ in 0..300 {
        s.tick(&[]);
    }
    let q = &s.world().arms[0].positions;
    assert!((q[0] - start[0] - 0.2).abs() < 0.02, "{q:?}");
    assert!((q[1] - start[1] + 0.1).abs() < 0.02, "{q:?}");
    // realized actions stay inside the action bounds
    for t in s.recording() {
        assert!(t.action.iter().all(|a| a.abs() <= MAX_JOINT_DELTA + 1e-12));
    }
}

#[test]
fn ee_target_drive_reaches_the_point() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    s.tick(&[cmd(Command::EngageTeleop)]);
    let goal = s.world().goal;
    s.tick(&[cmd(Command::Drive {
        arm: 0,
        joint_deltas: None,
        ee_target: Some(goal),
        base_delta: None,
    })]);
    for _ in 0..400 {
        s.tick(&[]);
    }
    let ee = s.config().env.ee_positions(s.world()).unwrap()[0];
    let d = ((ee[0] - goal[0]).powi(2) + (ee[1] - goal[1]).powi(2)).sqrt();
    assert!(d < 0.05, "end effector {d} from goal");
}

#[test]
fn pulling_the_leader_away_during_autonomy_is_a_grab() {
    let mut s = Session::new(config(TaskId::Reach2d, Some(0.0))).unwrap();
    s.tick(&[cmd(Command::StartPolicy)]);
    s.tick(&[cmd(Command::Drive {
        arm: 0,
        joint_deltas: Some(vec![0.6, 0.0]),
        ee_target: None,
        base_delta: None,
    })]);
    let mut grabbed_at = None;
    for t in 0..100 {
        s.tick(&[]);
        if s.mode() == Mode::Takeover {
            grabbed_at = Some(t);
            break;
        }
    }
    assert!(grabbed_at.is_some(), "deviation never triggered a takeover");
    let log = s.recording();
    assert!(log.iter().filter(|t| t.source == Source::Policy).all(|t| t.mode_at_step == Mode::Autonomous));
    // a small nudge is not a grab
    let mut s = Session::new(config(TaskId::Reach2d, Some(0.0))).unwrap();
    s.tick(&[cmd(Command::StartPolicy)]);
    s.tick(&[cmd(Command::Drive {
        arm: 0,
        joint_deltas: Some(vec![0.05, 0.0]),
        ee_target: None,
        base_delta: None,
    })]);
    for _ in 0..100 {
        s.tick(&[]);
    }
    assert_eq!(s.mode(), Mode::Autonomous);
}

#[test]
fn reset_starts_a_new_episode_with_synced_devices() {
    let mut s = Session::new(config(TaskId::PickPlace2d, None)).unwrap();
    s.tick(&[cmd(Command::EngageTeleop)]);
    s.tick(&[cmd(Command::Drive {
        arm: 0,
        joint_deltas: Some(vec![0.3, 0.3]),
        ee_target: None,
        base_delta: None,
    })]);
    for _ in 0..30 {
        s.tick(&[]);
    }
    s.tick(&[cmd(Command::Reset)]);
    assert_eq!(s.mode(), Mode::Teleop);
    assert_eq!(s.snapshot().episode, 1);
    assert!(deviation(&s) < 0.05);
    assert_eq!(s.recording().last().unwrap().episode, 1);
}

#[test]
fn bad_arm_index_is_rejected() {
    let mut s = Session::new(config(TaskId::Reach2d, None)).unwrap();
    let out = s.tick(&[cmd(Command::Gripper { arm: 3, closed: true })]);
    assert!(out.frames.iter().any(|f| matches!(f, ServerFrame::Error { .. })));
}

#[test]
fn replaying_a_transcript_reproduces_the_log() {
    let cfg = config(TaskId::PickPlace2d, Some(0.004));
    let mut s = Session::new(cfg.clone()).unwrap();
    let mut transcript = Transcript::new(&cfg);
    let script: Vec<(u64, Command)> = vec![
        (1, Command::StartPolicy),
        (20, Command::HumanGrab),
        (21, Command::Drive {
            arm: 0,
            joint_deltas: Some(vec![0.1, -0.2]),
            ee_target: None,
            base_delta: None,
        }),
        (30, Command::Gripper { arm: 0, closed: true }),
        (40, Command::Save),
        (41, Command::HumanRelease),
        (60, Command::Reset),
        (70, Command::Stop),
    ];
    let mut outs = Vec::new();
    for tick in 0..80 {
        let events: Vec<ClientFrame> = script
            .iter()
            .filter(|(t, _)| *t == tick)
            .map(|(_, c)| ClientFrame {
                last_tick: tick.saturating_sub(1),
                command: c.clone(),
            })
            .collect();
        transcript.record(s.tick_count(), &events);
        outs.push(s.tick(&events));
    }
    let text = transcript.to_jsonl();
    let parsed = Transcript::parse(&text).unwrap();
    assert_eq!(parsed, transcript);
    let r = replay(&parsed, cfg).unwrap();
    assert_eq!(r.outputs, outs);
    assert_eq!(r.transition_log(), handover::dataset::write_jsonl(&all_transitions(&outs, &s)));
}

#[test]
fn replay_refuses_a_different_seed() {
    let cfg = config(TaskId::Reach2d, None);
    let t = Transcript::new(&cfg);
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(replay(&t, other).is_err());
}

fn arb_command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::EngageTeleop),
        Just(Command::StartPolicy),
        Just(Command::HumanGrab),
        Just(Command::HumanRelease),
        Just(Command::Stop),
        Just(Command::Save),
        Just(Command::Reset),
        Just(Command::Discard),
        (-0.3..0.3f64, -0.3..0.3f64).prop_map(|(a, b)| Command::Drive {
            arm: 0,
            joint_deltas: Some(vec![a, b]),
            ee_target: None,
            base_delta: None,
        }),
        any::<bool>().prop_map(|closed| Command::Gripper { arm: 0, closed }),
    ]
}

fn arb_script() -> impl Strategy<Value = Vec<Vec<Command>>> {
    prop::collection::vec(prop::collection::vec(arb_command(), 0..2), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_transition_is_labeled_by_who_drove(script in arb_script()) {
        let mut s = Session::new(config(TaskId::PickPlace2d, Some(0.01))).unwrap();
        let mut outs = Vec::new();
        for evs in &script {
            let frames: Vec<ClientFrame> = evs.iter().cloned().map(cmd).collect();
            outs.push(s.tick(&frames));
        }
        for t in all_transitions(&outs, &s) {
            match t.mode_at_step {
                Mode::Teleop | Mode::Takeover => prop_assert_eq!(t.source, Source::Human),
                Mode::Autonomous => prop_assert_eq!(t.source, Source::Policy),
                Mode::Idle => prop_assert!(false, "transition recorded while idle"),
            }
        }
    }

    #[test]
    fn data_utilities_never_change_mode(
        script in arb_script(),
        util in prop_oneof![Just(Command::Save), Just(Command::Reset), Just(Command::Discard)],
    ) {
        let mut s = Session::new(config(TaskId::Reach2d, Some(0.01))).unwrap();
        for evs in &script {
            let frames: Vec<ClientFrame> = evs.iter().cloned().map(cmd).collect();
            s.tick(&frames);
        }
        let mode = s.mode();
        let mut out = TickOutput::default();
        let _ = s.apply(&util, &mut out);
        prop_assert_eq!(s.mode(), mode);
    }

    #[test]
    fn events_apply_in_arrival_order(n in 1usize..6) {
        // STOP then ENGAGE leaves teleop; ENGAGE then STOP leaves idle
        let mut a = Session::new(config(TaskId::Reach2d, None)).unwrap();
        let mut b = a.clone();
        let stop_engage: Vec<ClientFrame> = (0..n).map(|_| cmd(Command::Stop)).chain([cmd(Command::EngageTeleop)]).collect();
        let engage_stop: Vec<ClientFrame> = [cmd(Command::EngageTeleop)].into_iter().chain((0..n).map(|_| cmd(Command::Stop))).collect();
        a.tick(&stop_engage);
        b.tick(&engage_stop);
        prop_assert_eq!(a.mode(), Mode::Teleop);
        prop_assert_eq!(b.mode(), Mode::Idle);
    }
}
