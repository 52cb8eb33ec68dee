use fwplan_core::flatness::{
    command_from_flat, flat_inputs, forward_jerk, frame_from_flat, ControlConfig, FlatState, PropulsionEstimate,
    TrackingState,
};
use fwplan_core::mission::{
    run_mission, GeodeticOrigin, IterationModel, Leg, Loiter, MissionConfig, MissionPlan, Direction,
};
use fwplan_core::sim::{
    orthonormality_error, reduced_step, step, AeroParams, AircraftState, ReducedState, WindField,
};
use fwplan_core::{gravity_vector, Matrix3, Vector3, GRAVITY};

/// Helix of radius `r` at horizontal speed `v` climbing at `climb`; `r`
/// infinite gives a straight line.
fn helix(r: f64, v: f64, climb: f64, t: f64) -> FlatState {
    if r.is_infinite() {
        let vel = Vector3::new(v, 0.0, climb);
        return FlatState { position: vel * t, velocity: vel, ..FlatState::default() };
    }
    let w = v / r;
    let (s, c) = (w * t).sin_cos();
    FlatState {
        position: Vector3::new(r * c, r * s, climb * t),
        velocity: Vector3::new(-v * s, v * c, climb),
        acceleration: Vector3::new(-v * w * c, -v * w * s, 0.0),
        jerk: Vector3::new(v * w * w * s, -v * w * w * c, 0.0),
    }
}

#[test]
fn open_loop_inversion_reproduces_the_flat_output() {
    let g = gravity_vector();
    for (name, r, climb) in [("line", f64::INFINITY, 0.0), ("circle", 45.0, 0.0), ("helix", 60.0, 1.0)] {
        let reference = |t: f64| helix(r, 14.0, climb, t);
        let inputs = |t: f64| {
            let s = reference(t);
            let frame = frame_from_flat(&s.velocity, &s.acceleration, &g).unwrap();
            flat_inputs(&s.jerk, &frame).unwrap()
        };
        let s0 = reference(0.0);
        let frame = frame_from_flat(&s0.velocity, &s0.acceleration, &g).unwrap();
        let mut state = ReducedState::from_frame(s0.position, &frame);
        let dt = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 0..2000 {
            state = reduced_step(&state, k as f64 * dt, dt, &g, inputs);
            let t = (k + 1) as f64 * dt;
            worst = worst.max((state.position - reference(t).position).norm());
        }
        assert!(worst < 1e-3, "{name}: drift {worst:e} m");
    }
}

#[test]
fn forward_model_inverts_the_inputs() {
    let g = gravity_vector();
    for t in [0.0, 1.3, 4.0] {
        let s = helix(45.0, 14.0, 0.5, t);
        let frame = frame_from_flat(&s.velocity, &s.acceleration, &g).unwrap();
        let u = flat_inputs(&s.jerk, &frame).unwrap();
        assert!((forward_jerk(&frame, &u) - s.jerk).norm() < 1e-10);
        let r = frame.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert!((r.column(0) - s.velocity.normalize()).norm() < 1e-12);
    }
}

#[test]
fn perfect_tracking_commands_the_coordinated_bank() {
    let s = helix(45.0, 14.0, 0.0, 2.0);
    let prop = PropulsionEstimate { alpha: 0.0, drag: 0.0, max_thrust: 100.0 };
    let cmd = command_from_flat(&s, &TrackingState::from_flat(&s), &ControlConfig::default(), &prop).unwrap();
    let expected = (14.0f64 * 14.0 / (45.0 * GRAVITY)).atan();
    assert!((cmd.phi.abs() - expected).abs() < 1e-12, "{} vs {expected}", cmd.phi);
}

#[test]
fn rk4_error_shrinks_sixteenfold() {
    let g = gravity_vector();
    let bank: f64 = 0.4;
    let a_vz = -GRAVITY / bank.cos();
    let run = |dt: f64| {
        let level = frame_from_flat(&Vector3::new(14.0, 0.0, 0.0), &Vector3::zeros(), &g).unwrap();
        let mut s = AircraftState::new(Vector3::zeros(), level.rotation, 14.0, 0.0, &Vector3::zeros()).unwrap();
        let steps = (2.0 / dt).round() as usize;
        for k in 0..steps {
            // roll in during the first second, so all stages matter
            let roll_rate = if (k as f64) * dt < 1.0 { 0.3 } else { -0.1 };
            s = step(&s, roll_rate, 0.5, a_vz, &Vector3::zeros(), &g, dt).unwrap();
        }
        s.position
    };
    let reference = run(0.02 / 64.0);
    let e1 = (run(0.02) - reference).norm();
    let e2 = (run(0.01) - reference).norm();
    let ratio = e1 / e2;
    assert!((8.0..=32.0).contains(&ratio), "error ratio {ratio} ({e1:e}, {e2:e})");
}

/// A banked level turn returns to its start after one period.
#[test]
fn level_turn_closes_on_its_circle() {
    let g = gravity_vector();
    let (v, bank) = (14.0f64, 0.4f64);
    let radius = v * v / (GRAVITY * bank.tan());
    let start = helix(radius, v, 0.0, 0.0);
    let frame = frame_from_flat(&start.velocity, &start.acceleration, &g).unwrap();
    let mut s = AircraftState::new(start.position, frame.rotation, v, 0.0, &Vector3::zeros()).unwrap();
    let period = 2.0 * std::f64::consts::PI * radius / v;
    let dt = period / 20000.0;
    for _ in 0..20000 {
        s = step(&s, 0.0, 0.0, -GRAVITY / bank.cos(), &Vector3::zeros(), &g, dt).unwrap();
    }
    assert!((s.position - start.position).norm() < 1e-6, "{}", s.position);
    assert!(orthonormality_error(&s.rotation) < 1e-12);
}

#[test]
fn wind_drifts_the_ground_track() {
    let g = gravity_vector();
    let wind = Vector3::new(2.0, -1.0, 0.0);
    let level = frame_from_flat(&Vector3::new(14.0, 0.0, 0.0), &Vector3::zeros(), &g).unwrap();
    let mut s = AircraftState::new(Vector3::zeros(), level.rotation, 14.0, 0.0, &wind).unwrap();
    for _ in 0..1000 {
        s = step(&s, 0.0, 0.0, -GRAVITY, &wind, &g, 0.01).unwrap();
    }
    assert!((s.position - Vector3::new(160.0, -10.0, 0.0)).norm() < 1e-9, "{}", s.position);
}

#[test]
fn closed_loop_loiter_settles_at_the_coordinated_bank() {
    let mission = MissionPlan {
        legs: vec![Leg::Loiter(Loiter {
            center: Vector3::new(0.0, 0.0, 50.0),
            radius: 45.0,
            direction: Direction::CounterClockwise,
            min_laps: 1,
        })],
        cruise_speed: 14.0,
        origin: GeodeticOrigin::default(),
        start: None,
    };
    let log = run_mission(
        &mission,
        &MissionConfig::default(),
        &AeroParams::default(),
        &WindField::default(),
        Some(40.0),
        &mut IterationModel::default(),
    )
    .unwrap();
    let expected = 14.0 * 14.0 / (45.0 * GRAVITY);
    let tail = &log.rows[log.rows.len() - 500..];
    // a counter-clockwise turn is a left turn: negative bank
    let worst = tail.iter().map(|r| (r.command.phi.tan() + expected).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "tan(phi_c) off by {worst:e}");
    assert!((tail[0].command.phi + expected.atan()).abs() < 1e-6);
}
