//! Loiter/Bernstein missions and the closed-loop executive.
//!
//! A mission alternates loiter circles with Bernstein legs that leave one
//! circle on a tangent and join the next one on a tangent. Loiters are flown
//! from the analytic circle; Bernstein legs are planned ahead of time and
//! replanned at a fixed rate while they are being flown.

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::flatness::{
    self, CommandedInput, ControlConfig, EulerAngles, FlatState, FlatnessError, TrackingState,
};
use crate::math;
use crate::planner::{
    self, BoundaryState, PlanDiagnostics, PlanOutput, PlannerConfig, PlannerError,
    WaypointSequence,
};
use crate::bernstein::PiecewiseTrajectory;
use crate::sim::{self, AeroParams, AircraftState, SimConfig, SimError, Simulator, WindField};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MissionError {
    #[error("mission has no legs")]
    Empty,
    #[error("leg {leg}: {reason}")]
    InvalidLeg { leg: usize, reason: &'static str },
    #[error("leg {leg}: waypoint is {distance} m from the loiter center, inside radius {radius} m")]
    InsideLoiter { leg: usize, distance: f64, radius: f64 },
    #[error("invalid mission configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("planning leg {leg} failed: {source}")]
    Planning { leg: usize, source: PlannerError },
    #[error(
        "flatness singularity at t = {t} s (position {position:?}, velocity {velocity:?}): {source}"
    )]
    Singularity {
        t: f64,
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        source: FlatnessError,
    },
    #[error("simulation failed at t = {t} s: {source}")]
    Simulation { t: f64, source: SimError },
    #[error("log is empty")]
    EmptyLog,
}

/// Direction of travel around a loiter circle, seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Clockwise,
    CounterClockwise,
}

impl Direction {
    /// `+1` for counter-clockwise, `-1` for clockwise.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Clockwise => -1.0,
            Direction::CounterClockwise => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Clockwise => "cw",
            Direction::CounterClockwise => "ccw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loiter {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub direction: Direction,
    /// Full circuits flown before leaving toward the next leg.
    pub min_laps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Leg {
    Loiter(Loiter),
    /// Interior waypoints between the tangent exit of the previous loiter
    /// and the tangent entry of the next one.
    Bernstein { waypoints: Vec<Vector3<f64>> },
}

/// Geodetic reference of the local ENU frame; carried along, never used in
/// computation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeodeticOrigin {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionPlan {
    pub legs: Vec<Leg>,
    pub cruise_speed: f64,
    pub origin: GeodeticOrigin,
    /// Initial position; the aircraft starts on the nearest point of the
    /// first loiter. `None` starts at phase zero.
    pub start: Option<Vector3<f64>>,
}

/// Reference on a circle flown at constant speed, phase zero on the `+x`
/// side of the center at `t = 0`.
pub fn loiter_reference(
    center: &Vector3<f64>,
    radius: f64,
    speed: f64,
    direction: Direction,
    t: f64,
) -> Result<FlatState, MissionError> {
    if !(radius >= 1.0) {
        return Err(MissionError::InvalidConfig("loiter radius must be at least 1 m"));
    }
    if !(speed > 0.0) {
        return Err(MissionError::InvalidConfig("speed must be positive"));
    }
    Ok(circle_state(center, radius, speed, direction, direction.sign() * speed / radius * t))
}

fn circle_state(
    center: &Vector3<f64>,
    radius: f64,
    speed: f64,
    direction: Direction,
    phase: f64,
) -> FlatState {
    let s = direction.sign();
    let w = speed / radius;
    let (sn, cs) = (math::sin(phase), math::cos(phase));
    FlatState {
        position: center + Vector3::new(cs, sn, 0.0) * radius,
        velocity: Vector3::new(-sn, cs, 0.0) * (s * speed),
        acceleration: Vector3::new(cs, sn, 0.0) * (-speed * w),
        jerk: Vector3::new(sn, -cs, 0.0) * (s * speed * w * w),
    }
}

/// A point where a straight line through an outside waypoint touches a
/// loiter circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPoint {
    pub phase: f64,
    pub boundary: BoundaryState,
}

fn tangent_phase(
    loiter: &Loiter,
    waypoint: &Vector3<f64>,
    leg: usize,
    exit: bool,
) -> Result<f64, MissionError> {
    let d = (waypoint - loiter.center).xy();
    let dist = d.norm();
    if !(dist > loiter.radius) {
        return Err(MissionError::InsideLoiter { leg, distance: dist, radius: loiter.radius });
    }
    let beta = math::acos(loiter.radius / dist);
    let toward = math::atan2(d.y, d.x);
    // Counter-clockwise motion leaves below the center line and arrives
    // above it; clockwise mirrors that.
    let side = if exit { -1.0 } else { 1.0 };
    Ok(math::wrap_angle(toward + side * loiter.direction.sign() * beta))
}

fn tangent_point(loiter: &Loiter, speed: f64, phase: f64) -> TangentPoint {
    let s = circle_state(&loiter.center, loiter.radius, speed, loiter.direction, phase);
    TangentPoint {
        phase,
        boundary: BoundaryState {
            position: s.position,
            velocity: s.velocity,
            acceleration: s.acceleration,
        },
    }
}

/// Exit point on `loiter` whose tangent, flown in the loiter direction,
/// heads straight at `waypoint`. The boundary state matches the circle up
/// to acceleration.
pub fn tangent_handoff(
    loiter: &Loiter,
    waypoint: &Vector3<f64>,
    speed: f64,
) -> Result<TangentPoint, MissionError> {
    let phase = tangent_phase(loiter, waypoint, 0, true)?;
    Ok(tangent_point(loiter, speed, phase))
}

/// Entry point on `loiter` reached by flying straight from `waypoint` and
/// then continuing in the loiter direction.
pub fn tangent_entry(
    loiter: &Loiter,
    waypoint: &Vector3<f64>,
    speed: f64,
) -> Result<TangentPoint, MissionError> {
    let phase = tangent_phase(loiter, waypoint, 0, false)?;
    Ok(tangent_point(loiter, speed, phase))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledLoiter {
    pub loiter: Loiter,
    pub phase_in: f64,
    pub t_in: f64,
    /// Exit time; for the final loiter, the time its laps are complete.
    pub t_out: f64,
}

impl ScheduledLoiter {
    pub fn reference(&self, speed: f64, t: f64) -> FlatState {
        let l = &self.loiter;
        let phase = self.phase_in + l.direction.sign() * speed / l.radius * (t - self.t_in);
        circle_state(&l.center, l.radius, speed, l.direction, phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledBernstein {
    pub trajectory: PiecewiseTrajectory,
    /// Waypoints and diagnostics of the initial plan, when the leg was
    /// planned here.
    pub sequence: Option<WaypointSequence>,
    pub diagnostics: Option<PlanDiagnostics>,
    /// End waypoint of every segment, as expected by [`planner::replan`].
    pub waypoints: Vec<Vector3<f64>>,
    pub end: BoundaryState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduledLeg {
    Loiter(ScheduledLoiter),
    Bernstein(ScheduledBernstein),
}

impl ScheduledLeg {
    pub fn start_time(&self) -> f64 {
        match self {
            ScheduledLeg::Loiter(l) => l.t_in,
            ScheduledLeg::Bernstein(b) => b.trajectory.start_time(),
        }
    }

    pub fn end_time(&self) -> f64 {
        match self {
            ScheduledLeg::Loiter(l) => l.t_out,
            ScheduledLeg::Bernstein(b) => b.trajectory.end_time(),
        }
    }
}

/// Mission with every leg placed in time and every Bernstein leg planned.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionSchedule {
    pub legs: Vec<ScheduledLeg>,
    pub cruise_speed: f64,
}

impl MissionSchedule {
    /// Time at which the final loiter has flown its laps.
    pub fn complete_time(&self) -> f64 {
        self.legs.last().map_or(0.0, ScheduledLeg::end_time)
    }

    /// Schedule that flies a single given trajectory, replanning it between
    /// its own segment end points.
    pub fn from_trajectory(trajectory: PiecewiseTrajectory, cruise_speed: f64) -> Self {
        let waypoints = trajectory.segments().map(|s| s.end_point()).collect();
        let last = clamped_eval(&trajectory, trajectory.end_time());
        let end = BoundaryState {
            position: last.position,
            velocity: last.velocity,
            acceleration: last.acceleration,
        };
        let leg = ScheduledBernstein { trajectory, sequence: None, diagnostics: None, waypoints, end };
        Self { legs: alloc::vec![ScheduledLeg::Bernstein(leg)], cruise_speed }
    }

    /// Reference of the leg active at `t`, before any replanning.
    pub fn reference(&self, t: f64) -> Result<(usize, FlatState), MissionError> {
        let mut id = 0;
        while id + 1 < self.legs.len() && t >= self.legs[id].end_time() {
            id += 1;
        }
        let state = match &self.legs[id] {
            ScheduledLeg::Loiter(l) => l.reference(self.cruise_speed, t),
            ScheduledLeg::Bernstein(b) => clamped_eval(&b.trajectory, t),
        };
        Ok((id, state))
    }
}

fn clamped_eval(traj: &PiecewiseTrajectory, t: f64) -> FlatState {
    traj.eval(t.clamp(traj.start_time(), traj.end_time()))
        .expect("clamped time lies in the trajectory domain")
}

fn validate(mission: &MissionPlan, config: &PlannerConfig) -> Result<(), MissionError> {
    if mission.legs.is_empty() {
        return Err(MissionError::Empty);
    }
    if !(mission.cruise_speed > 0.0) {
        return Err(MissionError::InvalidConfig("cruise speed must be positive"));
    }
    let n = mission.legs.len();
    for (i, leg) in mission.legs.iter().enumerate() {
        match leg {
            Leg::Loiter(l) => {
                if !(l.radius >= 1.0) {
                    return Err(MissionError::InvalidLeg { leg: i, reason: "radius below 1 m" });
                }
                let kappa = l.direction.sign() / l.radius;
                if kappa > config.kappa_max || kappa < config.kappa_min {
                    return Err(MissionError::InvalidLeg {
                        leg: i,
                        reason: "loiter curvature exceeds the planner bounds",
                    });
                }
                if i + 1 < n && matches!(mission.legs[i + 1], Leg::Loiter(_)) {
                    return Err(MissionError::InvalidLeg {
                        leg: i,
                        reason: "consecutive loiters need a Bernstein leg between them",
                    });
                }
            }
            Leg::Bernstein { waypoints } => {
                if i == 0 || i + 1 == n {
                    return Err(MissionError::InvalidLeg {
                        leg: i,
                        reason: "Bernstein legs must join two loiters",
                    });
                }
                if waypoints.is_empty() {
                    return Err(MissionError::InvalidLeg {
                        leg: i,
                        reason: "Bernstein leg needs at least one waypoint",
                    });
                }
            }
        }
    }
    Ok(())
}

/// Places every leg in time and plans every Bernstein leg from its tangent
/// exit to its tangent entry.
///
/// `timer` brackets each initial plan and its reading becomes the plan's
/// reported solve time.
pub fn schedule_mission<T: ReplanTimer>(
    mission: &MissionPlan,
    config: &PlannerConfig,
    timer: &mut T,
) -> Result<MissionSchedule, MissionError> {
    validate(mission, config)?;
    config.validate().map_err(|source| MissionError::Planning { leg: 0, source })?;
    let v = mission.cruise_speed;
    let two_pi = 2.0 * math::PI;
    let mut legs = Vec::with_capacity(mission.legs.len());
    let mut t = 0.0;
    let mut phase_in = match (&mission.legs[0], mission.start) {
        (Leg::Loiter(l), Some(p)) => {
            let d = p - l.center;
            math::atan2(d.y, d.x)
        }
        _ => 0.0,
    };
    let mut exit: Option<TangentPoint> = None;
    for (i, leg) in mission.legs.iter().enumerate() {
        match leg {
            Leg::Loiter(l) => {
                let omega = v / l.radius;
                let laps = l.min_laps as f64 * two_pi;
                let t_out = match mission.legs.get(i + 1) {
                    Some(Leg::Bernstein { waypoints }) => {
                        let phase = tangent_phase(l, &waypoints[0], i, true)?;
                        let mut sweep = libm::fmod(l.direction.sign() * (phase - phase_in), two_pi);
                        if sweep < 0.0 {
                            sweep += two_pi;
                        }
                        exit = Some(tangent_point(l, v, phase));
                        t + (laps + sweep) / omega
                    }
                    _ => t + laps / omega,
                };
                legs.push(ScheduledLeg::Loiter(ScheduledLoiter {
                    loiter: *l,
                    phase_in,
                    t_in: t,
                    t_out,
                }));
                t = t_out;
            }
            Leg::Bernstein { waypoints } => {
                let start = exit.take().expect("validated: a loiter precedes every Bernstein leg");
                let Leg::Loiter(next) = &mission.legs[i + 1] else {
                    unreachable!("validated: a loiter follows every Bernstein leg");
                };
                let last = waypoints[waypoints.len() - 1];
                let phase = tangent_phase(next, &last, i, false)?;
                let entry = tangent_point(next, v, phase);
                let mut points = Vec::with_capacity(waypoints.len() + 2);
                points.push(start.boundary.position);
                points.extend_from_slice(waypoints);
                points.push(entry.boundary.position);
                let planning = |source| MissionError::Planning { leg: i, source };
                let wps = WaypointSequence::new(
                    points,
                    start.boundary.velocity,
                    start.boundary.acceleration,
                    entry.boundary.velocity,
                    entry.boundary.acceleration,
                )
                .map_err(planning)?;
                let times = planner::allocate_times(&wps, v, t).map_err(planning)?;
                timer.start();
                let PlanOutput { trajectory, mut diagnostics, .. } =
                    planner::plan_with_times(&wps, &times, config, None, None).map_err(planning)?;
                diagnostics.solve_time = timer.stop(Some(&diagnostics));
                t = trajectory.end_time();
                phase_in = phase;
                legs.push(ScheduledLeg::Bernstein(ScheduledBernstein {
                    trajectory,
                    diagnostics: Some(diagnostics),
                    waypoints: wps.waypoints()[1..].to_vec(),
                    sequence: Some(wps),
                    end: entry.boundary,
                }));
            }
        }
    }
    Ok(MissionSchedule { legs, cruise_speed: v })
}

/// Reports how long a replan took. Implementations decide whether that is
/// measured or modelled.
pub trait ReplanTimer {
    fn start(&mut self);
    /// Seconds since [`ReplanTimer::start`]; `diagnostics` is present when
    /// the solver ran.
    fn stop(&mut self, diagnostics: Option<&PlanDiagnostics>) -> f64;
}

/// Deterministic solve-time model `base + per_iteration * iterations`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationModel {
    pub base: f64,
    pub per_iteration: f64,
}

impl Default for IterationModel {
    fn default() -> Self {
        Self { base: 0.002, per_iteration: 1e-5 }
    }
}

impl ReplanTimer for IterationModel {
    fn start(&mut self) {}

    fn stop(&mut self, diagnostics: Option<&PlanDiagnostics>) -> f64 {
        self.base + diagnostics.map_or(0.0, |d| d.iterations as f64 * self.per_iteration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub planner: PlannerConfig,
    pub control: ControlConfig,
    pub sim: SimConfig,
    /// Control period, s.
    pub control_dt: f64,
    /// Control ticks between replans.
    pub replan_every: usize,
    /// Handoff estimate used before any solve time has been measured, s.
    pub initial_t_opt: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            control: ControlConfig::default(),
            sim: SimConfig::default(),
            control_dt: 0.01,
            replan_every: 10,
            initial_t_opt: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplanStatus {
    /// Solved in time; the new trajectory takes over at the handoff.
    Scheduled,
    /// Solved, but slower than the handoff estimate; the swap is skipped.
    Late,
    Failed,
}

impl ReplanStatus {
    pub fn code(self) -> u8 {
        match self {
            ReplanStatus::Scheduled => 1,
            ReplanStatus::Late => 2,
            ReplanStatus::Failed => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplanEvent {
    pub t: f64,
    pub leg: usize,
    pub status: ReplanStatus,
    pub t_opt: f64,
    pub handoff: f64,
    pub iterations: usize,
}

/// A trajectory swap, with the reference discontinuity it caused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swap {
    pub t: f64,
    pub leg: usize,
    pub position_jump: f64,
    pub velocity_jump: f64,
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub reference: FlatState,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: EulerAngles,
    pub command: CommandedInput,
    pub leg: usize,
    pub replan: Option<ReplanStatus>,
    pub t_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
    pub replans: Vec<ReplanEvent>,
    pub swaps: Vec<Swap>,
    /// Whether the final loiter finished its laps within the run.
    pub complete: bool,
}

struct ActiveBernstein {
    leg: usize,
    trajectory: PiecewiseTrajectory,
    waypoints: Vec<Vector3<f64>>,
    end: BoundaryState,
    pending: Option<(PiecewiseTrajectory, Vec<Vector3<f64>>, f64)>,
}

fn initial_state(
    reference: &FlatState,
    params: &AeroParams,
    wind: &WindField,
    config: &MissionConfig,
    t0: f64,
) -> Result<AircraftState, MissionError> {
    let w = wind.at(t0);
    let air = reference.velocity - w;
    let frame = flatness::frame_from_flat(&air, &reference.acceleration, &config.control.gravity)
        .map_err(|source| MissionError::Singularity {
            t: t0,
            position: reference.position,
            velocity: reference.velocity,
            source,
        })?;
    let sim_err = |source| MissionError::Simulation { t: t0, source };
    let rho = sim::air_density(reference.position.z).map_err(sim_err)?;
    let alpha = params.alpha_for_lift(rho, frame.speed, -frame.a_vz);
    AircraftState::new(reference.position, frame.rotation, frame.speed, alpha, &w).map_err(sim_err)
}

/// Flies `mission` in closed loop: 100 Hz-style control ticks every
/// `control_dt`, replanning of the active Bernstein leg every
/// `replan_every` ticks. Runs until the final loiter completes, or for
/// exactly `duration` seconds when given (loitering past completion).
pub fn run_mission<T: ReplanTimer>(
    mission: &MissionPlan,
    config: &MissionConfig,
    params: &AeroParams,
    wind: &WindField,
    duration: Option<f64>,
    timer: &mut T,
) -> Result<SimLog, MissionError> {
    let schedule = schedule_mission(mission, &config.planner, timer)?;
    run_schedule(&schedule, config, params, wind, duration, timer)
}

/// Closed-loop run of an already scheduled mission.
pub fn run_schedule<T: ReplanTimer>(
    schedule: &MissionSchedule,
    config: &MissionConfig,
    params: &AeroParams,
    wind: &WindField,
    duration: Option<f64>,
    timer: &mut T,
) -> Result<SimLog, MissionError> {
    if let Some(d) = duration {
        if !(d > 0.0) {
            return Err(MissionError::InvalidConfig("duration must be positive"));
        }
    }
    if schedule.legs.is_empty() {
        return Err(MissionError::Empty);
    }
    if !(config.control_dt > 0.0) || config.replan_every == 0 {
        return Err(MissionError::InvalidConfig("control period and replan interval must be positive"));
    }
    let substeps = math::round(config.control_dt / config.sim.dt);
    if !(substeps >= 1.0) || (substeps * config.sim.dt - config.control_dt).abs() > 1e-12 {
        return Err(MissionError::InvalidConfig("control period must be a multiple of the sim step"));
    }
    let substeps = substeps as usize;
    let dt = config.control_dt;
    let v = schedule.cruise_speed;
    let complete_time = schedule.complete_time();
    let t0 = schedule.legs[0].start_time();
    let ticks = match duration {
        Some(d) => math::round(d / dt) as usize,
        None => math::ceil((complete_time - t0) / dt - 1e-9) as usize + 1,
    };

    let (_, ref0) = schedule.reference(t0)?;
    let state0 = initial_state(&ref0, params, wind, config, t0)?;
    let mut simulator = Simulator::new(*params, *wind, config.sim, state0, t0)
        .map_err(|source| MissionError::Simulation { t: t0, source })?;

    let mut log = SimLog { rows: Vec::with_capacity(ticks), ..SimLog::default() };
    let mut leg = 0;
    let mut active: Option<ActiveBernstein> = None;
    let mut t_opt_estimate = config.initial_t_opt;
    let mut measured_accel = ref0.acceleration;

    for k in 0..ticks {
        let t = t0 + k as f64 * dt;
        while leg + 1 < schedule.legs.len() && t >= schedule.legs[leg].end_time() {
            leg += 1;
            active = None;
        }
        if active.is_none() {
            if let ScheduledLeg::Bernstein(b) = &schedule.legs[leg] {
                active = Some(ActiveBernstein {
                    leg,
                    trajectory: b.trajectory.clone(),
                    waypoints: b.waypoints.clone(),
                    end: b.end,
                    pending: None,
                });
            }
        }

        let mut replan_status = None;
        let mut replan_t_opt = None;
        if let Some(a) = active.as_mut() {
            if a.pending.as_ref().is_some_and(|p| t >= p.2 - 1e-9) {
                let (traj, wps, handoff) = a.pending.take().expect("checked above");
                let old = clamped_eval(&a.trajectory, t);
                let new = clamped_eval(&traj, t);
                log.swaps.push(Swap {
                    t: handoff,
                    leg: a.leg,
                    position_jump: (new.position - old.position).norm(),
                    velocity_jump: (new.velocity - old.velocity).norm(),
                });
                a.trajectory = traj;
                a.waypoints = wps;
            }
            if k % config.replan_every == 0 && a.pending.is_none() {
                // The handoff lands on a control tick and within this
                // replan period.
                let lead = math::ceil(t_opt_estimate / dt - 1e-9).max(1.0);
                let lead = lead.min((config.replan_every - 1).max(1) as f64);
                let handoff = t0 + (k as f64 + lead) * dt;
                if handoff + planner::MIN_HANDOFF_SEGMENT <= a.trajectory.end_time() {
                    timer.start();
                    let result = planner::replan(
                        &a.trajectory,
                        &a.waypoints,
                        t,
                        handoff - t,
                        &a.end,
                        &config.planner,
                        None,
                    );
                    let (status, t_opt, iterations) = match result {
                        Ok(out) => {
                            let t_opt = timer.stop(Some(&out.plan.diagnostics));
                            let iterations = out.plan.diagnostics.iterations;
                            if t_opt <= handoff - t {
                                a.pending = Some((out.plan.trajectory, out.waypoints, handoff));
                                (ReplanStatus::Scheduled, t_opt, iterations)
                            } else {
                                (ReplanStatus::Late, t_opt, iterations)
                            }
                        }
                        Err(PlannerError::SolveFailed(d)) => {
                            (ReplanStatus::Failed, timer.stop(Some(&d)), d.iterations)
                        }
                        Err(_) => (ReplanStatus::Failed, timer.stop(None), 0),
                    };
                    t_opt_estimate = t_opt;
                    log.replans.push(ReplanEvent { t, leg, status, t_opt, handoff, iterations });
                    replan_status = Some(status);
                    replan_t_opt = Some(t_opt);
                }
            }
        }

        let reference = match (&active, &schedule.legs[leg]) {
            (Some(a), _) => clamped_eval(&a.trajectory, t),
            (None, ScheduledLeg::Loiter(l)) => l.reference(v, t),
            (None, ScheduledLeg::Bernstein(b)) => clamped_eval(&b.trajectory, t),
        };

        let state = *simulator.state();
        let actual = TrackingState {
            position: state.position,
            velocity: state.velocity,
            acceleration: measured_accel,
            air_velocity: state.air_velocity(),
        };
        let propulsion = simulator
            .propulsion_estimate()
            .map_err(|source| MissionError::Simulation { t, source })?;
        let command = flatness::command_from_flat(&reference, &actual, &config.control, &propulsion)
            .map_err(|source| MissionError::Singularity {
                t,
                position: state.position,
                velocity: state.velocity,
                source,
            })?;
        log.rows.push(LogRow {
            t,
            reference,
            position: state.position,
            velocity: state.velocity,
            attitude: state.attitude(),
            command,
            leg,
            replan: replan_status,
            t_opt: replan_t_opt,
        });
        simulator
            .advance(&command, substeps)
            .map_err(|source| MissionError::Simulation { t, source })?;
        measured_accel = simulator.acceleration();
    }
    log.complete = log.rows.last().is_some_and(|r| r.t >= complete_time);
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub roll_max: f64,
    pub roll_min: f64,
    pub t_opt_mean: f64,
    pub t_opt_max: f64,
    pub path_length: f64,
    pub duration: f64,
    pub replans: usize,
    pub replans_failed: usize,
    pub replans_late: usize,
    pub swaps: usize,
    pub max_swap_position_jump: f64,
    pub max_swap_velocity_jump: f64,
    pub roll_saturated_ticks: usize,
}

/// Tracking and timing statistics of a log. Position and velocity errors
/// are combined over the three axes.
pub fn metrics(log: &SimLog) -> Result<Metrics, MissionError> {
    let rows = &log.rows;
    if rows.is_empty() {
        return Err(MissionError::EmptyLog);
    }
    let n = rows.len() as f64;
    let mut e_pos = 0.0;
    let mut e_vel = 0.0;
    let mut roll_max = f64::NEG_INFINITY;
    let mut roll_min = f64::INFINITY;
    let mut saturated = 0;
    for r in rows {
        e_pos += (r.reference.position - r.position).norm_squared();
        e_vel += (r.reference.velocity - r.velocity).norm_squared();
        roll_max = roll_max.max(r.attitude.roll);
        roll_min = roll_min.min(r.attitude.roll);
        saturated += r.command.phi_clamped as usize;
    }
    let path_length = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].velocity.norm() + w[1].velocity.norm()) * (w[1].t - w[0].t))
        .sum();
    let t_opts = log.replans.iter().map(|e| e.t_opt);
    let count = log.replans.len();
    let t_opt_mean = if count == 0 { 0.0 } else { t_opts.clone().sum::<f64>() / count as f64 };
    let t_opt_max = t_opts.fold(0.0, f64::max);
    let count_status = |s| log.replans.iter().filter(|e| e.status == s).count();
    Ok(Metrics {
        rmse_pos: math::sqrt(e_pos / n),
        rmse_vel: math::sqrt(e_vel / n),
        roll_max,
        roll_min,
        t_opt_mean,
        t_opt_max,
        path_length,
        duration: rows[rows.len() - 1].t - rows[0].t,
        replans: count,
        replans_failed: count_status(ReplanStatus::Failed),
        replans_late: count_status(ReplanStatus::Late),
        swaps: log.swaps.len(),
        max_swap_position_jump: log.swaps.iter().map(|s| s.position_jump).fold(0.0, f64::max),
        max_swap_velocity_jump: log.swaps.iter().map(|s| s.velocity_jump).fold(0.0, f64::max),
        roll_saturated_ticks: saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn loiter(direction: Direction) -> Loiter {
        Loiter { center: Vector3::new(10.0, -5.0, 50.0), radius: 45.0, direction, min_laps: 1 }
    }

    #[test]
    fn loiter_quarter_period() {
        let c = Vector3::new(0.0, 0.0, 50.0);
        let period = 2.0 * math::PI * 45.0 / 14.0;
        let s0 = loiter_reference(&c, 45.0, 14.0, Direction::CounterClockwise, 0.0).unwrap();
        assert_relative_eq!(s0.position, c + Vector3::new(45.0, 0.0, 0.0), epsilon = 1e-12);
        let q = loiter_reference(&c, 45.0, 14.0, Direction::CounterClockwise, period / 4.0).unwrap();
        assert_relative_eq!(q.position, c + Vector3::new(0.0, 45.0, 0.0), epsilon = 1e-9);
        assert_relative_eq!(q.acceleration.norm(), 14.0 * 14.0 / 45.0, epsilon = 1e-12);
        let cw = loiter_reference(&c, 45.0, 14.0, Direction::Clockwise, period / 4.0).unwrap();
        assert_relative_eq!(cw.position, c + Vector3::new(0.0, -45.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn loiter_derivatives_are_consistent() {
        let c = Vector3::zeros();
        let h = 1e-5;
        for dir in [Direction::Clockwise, Direction::CounterClockwise] {
            let f = |t| loiter_reference(&c, 45.0, 14.0, dir, t).unwrap();
            let s = f(3.0);
            let (a, b) = (f(3.0 - h), f(3.0 + h));
            assert_relative_eq!(s.velocity, (b.position - a.position) / (2.0 * h), epsilon = 1e-6);
            assert_relative_eq!(s.acceleration, (b.velocity - a.velocity) / (2.0 * h), epsilon = 1e-6);
            assert_relative_eq!(s.jerk, (b.acceleration - a.acceleration) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn tangent_at_twice_the_radius() {
        let l = loiter(Direction::CounterClockwise);
        let wp = l.center + Vector3::new(90.0, 0.0, 0.0);
        let exit = tangent_handoff(&l, &wp, 14.0).unwrap();
        assert_relative_eq!(exit.phase, -math::PI / 3.0, epsilon = 1e-12);
        let to_wp = wp - exit.boundary.position;
        assert_relative_eq!(to_wp.normalize(), exit.boundary.velocity / 14.0, epsilon = 1e-12);
        let entry = tangent_entry(&l, &wp, 14.0).unwrap();
        let from_wp = entry.boundary.position - wp;
        assert_relative_eq!(from_wp.normalize(), entry.boundary.velocity / 14.0, epsilon = 1e-12);
    }

    #[test]
    fn inside_waypoint_is_rejected() {
        let l = loiter(Direction::Clockwise);
        let wp = l.center + Vector3::new(44.0, 0.0, 0.0);
        assert!(matches!(tangent_handoff(&l, &wp, 14.0), Err(MissionError::InsideLoiter { .. })));
    }

    #[test]
    fn empty_mission_is_rejected() {
        let m = MissionPlan {
            legs: vec![],
            cruise_speed: 14.0,
            origin: GeodeticOrigin::default(),
            start: None,
        };
        let config = MissionConfig::default();
        let r = run_mission(&m, &config, &AeroParams::default(), &WindField::default(), None, &mut IterationModel::default());
        assert_eq!(r, Err(MissionError::Empty));
    }

    #[test]
    fn metrics_of_constant_error() {
        let reference = FlatState::default();
        let row = LogRow {
            t: 0.0,
            reference,
            position: Vector3::new(3.0, 4.0, 0.0),
            velocity: Vector3::zeros(),
            attitude: EulerAngles { roll: 0.1, pitch: 0.0, yaw: 0.0 },
            command: CommandedInput {
                theta: 0.0,
                phi: 0.0,
                omega_vx: 0.0,
                omega_vy: 0.0,
                thrust: 0.0,
                phi_clamped: false,
                thrust_clamped: false,
            },
            leg: 0,
            replan: None,
            t_opt: None,
        };
        let log = SimLog {
            rows: vec![row, LogRow { t: 0.01, ..row }],
            ..SimLog::default()
        };
        let m = metrics(&log).unwrap();
        assert_relative_eq!(m.rmse_pos, 5.0, epsilon = 1e-12);
        assert_eq!(m.rmse_vel, 0.0);
        assert_eq!(metrics(&SimLog::default()), Err(MissionError::EmptyLog));
    }
}
