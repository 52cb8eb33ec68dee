//! Coordinated-flight point-mass simulator.
//!
//! The state carries position, airspeed `V`, the velocity frame `R` and the
//! angle of attack. Kinematics are `ẋ = V R e₁ + w`, `V̇ = a_vx + (Rᵀg)_x` and
//! `Ṙ = R ω̂` where the pitch and yaw rates are fixed by the coordination
//! constraint and only the roll rate is free.

use nalgebra::{Matrix3, Vector3};

use crate::flatness::{self, CommandedInput, FlatInputs, PropulsionEstimate};
use crate::math;

pub const SEA_LEVEL_DENSITY: f64 = 1.225;
pub const SCALE_HEIGHT: f64 = 8500.0;
pub const MIN_ALTITUDE: f64 = -500.0;
pub const MAX_ALTITUDE: f64 = 10000.0;
/// Largest integration step accepted by [`step`].
pub const MAX_STEP: f64 = 0.02;
/// Angle-of-attack bound of the quasi-static lift inversion.
pub const ALPHA_LIMIT: f64 = 0.3;
/// Body-rate saturation of the emulated attitude loop.
pub const RATE_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("altitude {0} m outside the atmosphere model range")]
    AltitudeOutOfRange(f64),
    #[error("airspeed must be positive, got {0} m/s")]
    NonPositiveSpeed(f64),
    #[error("time step {0} s outside (0, {MAX_STEP}]")]
    InvalidTimeStep(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
    #[error("integration produced an invalid state at t = {0} s")]
    IntegrationFault(f64),
    #[error("no trim angle of attack within the allowed range")]
    NoTrim,
}

/// Exponential atmosphere, kg/m³.
pub fn air_density(altitude: f64) -> Result<f64, SimError> {
    if !(MIN_ALTITUDE..=MAX_ALTITUDE).contains(&altitude) {
        return Err(SimError::AltitudeOutOfRange(altitude));
    }
    Ok(SEA_LEVEL_DENSITY * math::exp(-altitude / SCALE_HEIGHT))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroParams {
    pub mass: f64,
    pub wing_area: f64,
    pub c_l0: f64,
    pub c_l_alpha: f64,
    pub c_d0: f64,
    pub k_induced: f64,
    /// Additive lift acceleration, m/s².
    pub a_l0: f64,
    /// Maximum thrust, N.
    pub thrust_max: f64,
    pub phi_limit: f64,
}

impl Default for AeroParams {
    /// Bixler-class foam trainer.
    fn default() -> Self {
        Self {
            mass: 1.1,
            wing_area: 0.3,
            c_l0: 0.28,
            c_l_alpha: 4.5,
            c_d0: 0.04,
            k_induced: 0.05,
            a_l0: 0.0,
            thrust_max: 15.0,
            phi_limit: 1.0,
        }
    }
}

impl AeroParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            (self.mass, "mass must be positive"),
            (self.wing_area, "wing_area must be positive"),
            (self.c_l0, "c_l0 must be positive"),
            (self.c_l_alpha, "c_l_alpha must be positive"),
            (self.c_d0, "c_d0 must be positive"),
            (self.k_induced, "k_induced must be positive"),
            (self.thrust_max, "thrust_max must be positive"),
            (self.phi_limit, "phi_limit must be positive"),
        ];
        for (v, msg) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParams(msg));
            }
        }
        if !(self.a_l0 >= 0.0) {
            return Err(SimError::InvalidParams("a_l0 must be non-negative"));
        }
        Ok(())
    }

    /// Maximum thrust acceleration, m/s².
    pub fn max_thrust_accel(&self) -> f64 {
        self.thrust_max / self.mass
    }

    fn dynamic_factor(&self, density: f64, airspeed: f64) -> f64 {
        0.5 * density * airspeed * airspeed * self.wing_area / self.mass
    }

    /// Lift and drag accelerations for the given air density, airspeed and
    /// angle of attack.
    pub fn lift_drag(&self, density: f64, airspeed: f64, alpha: f64) -> (f64, f64) {
        let q = self.dynamic_factor(density, airspeed);
        let c_l = self.c_l0 + self.c_l_alpha * alpha;
        let c_d = self.c_d0 + self.k_induced * c_l * c_l;
        (q * c_l + self.a_l0, q * c_d)
    }

    /// Angle of attack giving lift acceleration `lift`, clamped to the
    /// allowed range.
    pub fn alpha_for_lift(&self, density: f64, airspeed: f64, lift: f64) -> f64 {
        let q = self.dynamic_factor(density, airspeed);
        if q <= 0.0 {
            return ALPHA_LIMIT;
        }
        let c_l = (lift - self.a_l0) / q;
        ((c_l - self.c_l0) / self.c_l_alpha).clamp(-ALPHA_LIMIT, ALPHA_LIMIT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindField {
    pub mean: Vector3<f64>,
    pub gust_amplitude: f64,
    pub gust_period: f64,
    pub seed: u64,
}

impl Default for WindField {
    fn default() -> Self {
        Self { mean: Vector3::zeros(), gust_amplitude: 0.0, gust_period: 10.0, seed: 0 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_angle(bits: u64) -> f64 {
    (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * math::PI
}

impl WindField {
    pub fn constant(mean: Vector3<f64>) -> Self {
        Self { mean, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.gust_amplitude >= 0.0) {
            return Err(SimError::InvalidParams("gust_amplitude must be non-negative"));
        }
        if self.gust_amplitude > 0.0 && !(self.gust_period > 0.0) {
            return Err(SimError::InvalidParams("gust_period must be positive"));
        }
        Ok(())
    }

    /// Wind velocity at time `t`: the mean plus a horizontal sinusoidal gust
    /// whose phase and direction derive from the seed.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        if self.gust_amplitude == 0.0 {
            return self.mean;
        }
        let a = splitmix64(self.seed);
        let phase = unit_angle(a);
        let heading = unit_angle(splitmix64(a));
        let g = self.gust_amplitude * math::sin(2.0 * math::PI * t / self.gust_period + phase);
        self.mean + Vector3::new(math::cos(heading), math::sin(heading), 0.0) * g
    }
}

pub fn wind_at(wind: &WindField, t: f64) -> Vector3<f64> {
    wind.at(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AircraftState {
    pub position: Vector3<f64>,
    /// Inertial velocity, `V R e₁ + w`.
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub alpha: f64,
    pub airspeed: f64,
}

impl AircraftState {
    /// State flying along `rotation`'s first column at `airspeed`.
    pub fn new(
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        airspeed: f64,
        alpha: f64,
        wind: &Vector3<f64>,
    ) -> Result<Self, SimError> {
        if !(airspeed > 0.0) {
            return Err(SimError::NonPositiveSpeed(airspeed));
        }
        let velocity = rotation.column(0) * airspeed + wind;
        Ok(Self { position, velocity, rotation, alpha, airspeed })
    }

    pub fn air_velocity(&self) -> Vector3<f64> {
        self.rotation.column(0) * self.airspeed
    }

    pub fn attitude(&self) -> flatness::EulerAngles {
        flatness::attitude(&self.rotation, self.alpha)
    }
}

/// Lift and drag accelerations at the current state.
pub fn aero_accels(state: &AircraftState, params: &AeroParams) -> Result<(f64, f64), SimError> {
    if !(state.airspeed >= 0.0) {
        return Err(SimError::NonPositiveSpeed(state.airspeed));
    }
    let rho = air_density(state.position.z)?;
    Ok(params.lift_drag(rho, state.airspeed, state.alpha))
}

/// Axial and normal accelerations in the velocity frame.
pub fn input_accels(thrust: f64, drag: f64, lift: f64, alpha: f64) -> (f64, f64) {
    (thrust * math::cos(alpha) - drag, -thrust * math::sin(alpha) - lift)
}

/// Body rates requested by the emulated autopilot: feed-forward rates plus
/// first-order attitude correction, with the yaw rate set by coordination.
pub fn attitude_inner_loop(
    state: &AircraftState,
    cmd: &CommandedInput,
    tau: f64,
    gravity: &Vector3<f64>,
) -> Vector3<f64> {
    let att = state.attitude();
    let p = cmd.omega_vx + math::wrap_angle(cmd.phi - att.roll) / tau;
    let q = cmd.omega_vy + (cmd.theta - att.pitch) / tau;
    let g_v = state.rotation.transpose() * gravity;
    let r = g_v.y / state.airspeed;
    Vector3::new(p, q, r).map(|w| w.clamp(-RATE_LIMIT, RATE_LIMIT))
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Projects onto the nearest rotation by Newton iteration on the polar
/// decomposition.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut m = *r;
    for _ in 0..3 {
        let Some(inv) = m.try_inverse() else { break };
        m = (m + inv.transpose()) * 0.5;
    }
    m
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

#[derive(Clone, Copy)]
struct Deriv {
    dx: Vector3<f64>,
    dv: f64,
    dr: Matrix3<f64>,
}

/// One RK4 step of the coordinated kinematics with fixed roll rate and
/// accelerations; pitch and yaw rates follow the coordination constraint at
/// every stage.
pub fn step(
    state: &AircraftState,
    roll_rate: f64,
    a_vx: f64,
    a_vz: f64,
    wind: &Vector3<f64>,
    gravity: &Vector3<f64>,
    dt: f64,
) -> Result<AircraftState, SimError> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(SimError::InvalidTimeStep(dt));
    }
    if !(state.airspeed > 0.0) {
        return Err(SimError::NonPositiveSpeed(state.airspeed));
    }
    let f = |v: f64, r: &Matrix3<f64>| {
        let g_v = r.transpose() * gravity;
        let omega = Vector3::new(roll_rate, -(a_vz + g_v.z) / v, g_v.y / v);
        Deriv { dx: r.column(0) * v + wind, dv: a_vx + g_v.x, dr: r * skew(&omega) }
    };
    let (v0, r0) = (state.airspeed, state.rotation);
    let k1 = f(v0, &r0);
    let k2 = f(v0 + 0.5 * dt * k1.dv, &(r0 + k1.dr * (0.5 * dt)));
    let k3 = f(v0 + 0.5 * dt * k2.dv, &(r0 + k2.dr * (0.5 * dt)));
    let k4 = f(v0 + dt * k3.dv, &(r0 + k3.dr * dt));
    let w = dt / 6.0;
    let position = state.position + (k1.dx + (k2.dx + k3.dx) * 2.0 + k4.dx) * w;
    let airspeed = v0 + (k1.dv + 2.0 * (k2.dv + k3.dv) + k4.dv) * w;
    let rotation = orthonormalize(&(r0 + (k1.dr + (k2.dr + k3.dr) * 2.0 + k4.dr) * w));
    let next = AircraftState {
        position,
        velocity: rotation.column(0) * airspeed + wind,
        rotation,
        alpha: state.alpha,
        airspeed,
    };
    let finite = next.position.iter().chain(next.rotation.iter()).all(|v| v.is_finite());
    if !finite || !(airspeed > 0.0) || orthonormality_error(&rotation) > 1e-6 {
        return Err(SimError::IntegrationFault(0.0));
    }
    Ok(next)
}

/// Angle of attack for steady level flight, found by bisection on the lift.
pub fn trim_alpha(params: &AeroParams, airspeed: f64, altitude: f64) -> Result<f64, SimError> {
    let rho = air_density(altitude)?;
    let residual = |a: f64| params.lift_drag(rho, airspeed, a).0 - crate::GRAVITY;
    let (mut lo, mut hi) = (-ALPHA_LIMIT, ALPHA_LIMIT);
    if residual(lo) > 0.0 || residual(hi) < 0.0 {
        return Err(SimError::NoTrim);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Reduced flatness model: the state of the inversion with accelerations as
/// states and their rates as inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    pub position: Vector3<f64>,
    pub speed: f64,
    pub rotation: Matrix3<f64>,
    pub a_vx: f64,
    pub a_vz: f64,
}

impl ReducedState {
    pub fn from_frame(position: Vector3<f64>, frame: &flatness::CoordinatedFrame) -> Self {
        Self {
            position,
            speed: frame.speed,
            rotation: frame.rotation,
            a_vx: frame.a_vx,
            a_vz: frame.a_vz,
        }
    }
}

/// RK4 step of the reduced model with inputs given as a function of time.
pub fn reduced_step<F: Fn(f64) -> FlatInputs>(
    state: &ReducedState,
    t: f64,
    dt: f64,
    gravity: &Vector3<f64>,
    inputs: F,
) -> ReducedState {
    #[derive(Clone, Copy)]
    struct D {
        dx: Vector3<f64>,
        dv: f64,
        dr: Matrix3<f64>,
        dax: f64,
        daz: f64,
    }
    let f = |tt: f64, s: &ReducedState| {
        let u = inputs(tt);
        let g_v = s.rotation.transpose() * gravity;
        let omega = Vector3::new(u.omega_vx, -(s.a_vz + g_v.z) / s.speed, g_v.y / s.speed);
        D {
            dx: s.rotation.column(0) * s.speed,
            dv: s.a_vx + g_v.x,
            dr: s.rotation * skew(&omega),
            dax: u.a_vx_dot,
            daz: u.a_vz_dot,
        }
    };
    let add = |s: &ReducedState, d: &D, h: f64| ReducedState {
        position: s.position + d.dx * h,
        speed: s.speed + d.dv * h,
        rotation: s.rotation + d.dr * h,
        a_vx: s.a_vx + d.dax * h,
        a_vz: s.a_vz + d.daz * h,
    };
    let k1 = f(t, state);
    let k2 = f(t + 0.5 * dt, &add(state, &k1, 0.5 * dt));
    let k3 = f(t + 0.5 * dt, &add(state, &k2, 0.5 * dt));
    let k4 = f(t + dt, &add(state, &k3, dt));
    let w = dt / 6.0;
    let comb = D {
        dx: k1.dx + (k2.dx + k3.dx) * 2.0 + k4.dx,
        dv: k1.dv + 2.0 * (k2.dv + k3.dv) + k4.dv,
        dr: k1.dr + (k2.dr + k3.dr) * 2.0 + k4.dr,
        dax: k1.dax + 2.0 * (k2.dax + k3.dax) + k4.dax,
        daz: k1.daz + 2.0 * (k2.daz + k3.daz) + k4.daz,
    };
    let mut next = add(state, &comb, w);
    next.rotation = orthonormalize(&next.rotation);
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub tau_att: f64,
    pub gravity: Vector3<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.001, tau_att: 0.3, gravity: crate::gravity_vector() }
    }
}

/// Aircraft plus autopilot emulation advanced in fixed internal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub params: AeroParams,
    pub wind: WindField,
    pub config: SimConfig,
    state: AircraftState,
    t0: f64,
    time: f64,
    steps: u64,
    acceleration: Vector3<f64>,
    thrust: f64,
}

impl Simulator {
    pub fn new(
        params: AeroParams,
        wind: WindField,
        config: SimConfig,
        state: AircraftState,
        t0: f64,
    ) -> Result<Self, SimError> {
        params.validate()?;
        wind.validate()?;
        if !(config.dt > 0.0 && config.dt <= MAX_STEP) {
            return Err(SimError::InvalidTimeStep(config.dt));
        }
        if !(config.tau_att > 0.0) {
            return Err(SimError::InvalidParams("tau_att must be positive"));
        }
        Ok(Self {
            params,
            wind,
            config,
            state,
            t0,
            time: t0,
            steps: 0,
            acceleration: Vector3::zeros(),
            thrust: 0.0,
        })
    }

    pub fn state(&self) -> &AircraftState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Inertial acceleration over the most recent internal step.
    pub fn acceleration(&self) -> Vector3<f64> {
        self.acceleration
    }

    pub fn thrust(&self) -> f64 {
        self.thrust
    }

    /// Estimates handed to the controller for the thrust inversion.
    pub fn propulsion_estimate(&self) -> Result<PropulsionEstimate, SimError> {
        let (_, drag) = aero_accels(&self.state, &self.params)?;
        Ok(PropulsionEstimate {
            alpha: self.state.alpha,
            drag,
            max_thrust: self.params.max_thrust_accel(),
        })
    }

    /// Holds `cmd` for `n_steps` internal steps.
    pub fn advance(&mut self, cmd: &CommandedInput, n_steps: usize) -> Result<(), SimError> {
        let g = self.config.gravity;
        let thrust = cmd.thrust.clamp(0.0, self.params.max_thrust_accel());
        for _ in 0..n_steps {
            let s = self.state;
            let rates = attitude_inner_loop(&s, cmd, self.config.tau_att, &g);
            let rho = air_density(s.position.z)?;
            let g_v = s.rotation.transpose() * g;
            // normal acceleration that realizes the requested pitch rate
            let a_vz_req = -s.airspeed * rates.y - g_v.z;
            let mut alpha = s.alpha;
            for _ in 0..2 {
                let lift = -a_vz_req - thrust * math::sin(alpha);
                alpha = self.params.alpha_for_lift(rho, s.airspeed, lift);
            }
            let (lift, drag) = self.params.lift_drag(rho, s.airspeed, alpha);
            let (a_vx, a_vz) = input_accels(thrust, drag, lift, alpha);
            let with_alpha = AircraftState { alpha, ..s };
            let t_mid = self.time + 0.5 * self.config.dt;
            let wind = self.wind.at(t_mid);
            let mut next = step(&with_alpha, rates.x, a_vx, a_vz, &wind, &g, self.config.dt)
                .map_err(|e| match e {
                    SimError::IntegrationFault(_) => SimError::IntegrationFault(self.time),
                    other => other,
                })?;
            self.acceleration = g + s.rotation * Vector3::new(a_vx, 0.0, a_vz);
            self.steps += 1;
            self.time = self.t0 + self.steps as f64 * self.config.dt;
            next.velocity = next.rotation.column(0) * next.airspeed + self.wind.at(self.time);
            self.state = next;
        }
        self.thrust = thrust;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn density_values() {
        assert_eq!(air_density(0.0).unwrap(), 1.225);
        assert_relative_eq!(air_density(8500.0).unwrap(), 1.225 / core::f64::consts::E, epsilon = 1e-12);
        assert!((air_density(100.0).unwrap() - 1.2106).abs() < 1e-4);
        assert!(air_density(10001.0).is_err());
    }

    #[test]
    fn zero_airspeed_gives_baseline_lift() {
        let p = AeroParams { a_l0: 0.7, ..Default::default() };
        assert_eq!(p.lift_drag(1.225, 0.0, 0.1), (0.7, 0.0));
        let (_, d1) = p.lift_drag(1.225, 10.0, 0.05);
        let (_, d2) = p.lift_drag(1.225, 20.0, 0.05);
        assert_relative_eq!(d2, 4.0 * d1, epsilon = 1e-12);
    }

    #[test]
    fn input_accel_cases() {
        assert_eq!(input_accels(3.0, 1.0, 9.81, 0.0), (2.0, -9.81));
        assert_eq!(input_accels(0.0, 0.0, 9.81, 0.0), (0.0, -9.81));
    }

    #[test]
    fn trim_lift_is_gravity() {
        let p = AeroParams::default();
        let a = trim_alpha(&p, 14.0, 0.0).unwrap();
        assert!((p.lift_drag(1.225, 14.0, a).0 - 9.81).abs() < 1e-6);
    }

    #[test]
    fn wind_is_deterministic_and_bounded() {
        let w = WindField { mean: Vector3::new(1.0, 1.0, 0.0), gust_amplitude: 1.0, gust_period: 7.0, seed: 42 };
        for i in 0..100 {
            let t = i as f64 * 0.37;
            assert_eq!(w.at(t), w.at(t));
            assert!((w.at(t) - w.mean).norm() <= 1.0 + 1e-12);
        }
        assert_ne!(w.at(1.0), WindField { seed: 43, ..w }.at(1.0));
    }

    #[test]
    fn inner_loop_roll_feedback() {
        let s = AircraftState::new(Vector3::zeros(), Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0), 14.0, 0.0, &Vector3::zeros()).unwrap();
        let cmd = CommandedInput {
            theta: 0.0,
            phi: 0.1,
            omega_vx: 0.0,
            omega_vy: 0.0,
            thrust: 0.0,
            phi_clamped: false,
            thrust_clamped: false,
        };
        let w = attitude_inner_loop(&s, &cmd, 0.3, &crate::gravity_vector());
        assert_relative_eq!(w.x, 0.1 / 0.3, epsilon = 1e-12);
        assert_eq!(w.y, 0.0);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let s = AircraftState {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            alpha: 0.0,
            airspeed: 0.0,
        };
        let g = crate::gravity_vector();
        assert!(matches!(step(&s, 0.0, 0.0, -9.81, &Vector3::zeros(), &g, 0.01), Err(SimError::NonPositiveSpeed(_))));
        let s = AircraftState { airspeed: 14.0, ..s };
        assert!(matches!(step(&s, 0.0, 0.0, -9.81, &Vector3::zeros(), &g, 0.05), Err(SimError::InvalidTimeStep(_))));
    }
}
