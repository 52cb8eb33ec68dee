//! Differential-flatness maps for a fixed-wing aircraft in coordinated flight.
//!
//! The velocity frame `R = [r_x r_y r_z]` has `r_x` along the air-relative
//! velocity, `r_z` opposite to the normal (lift) acceleration and
//! `r_y = r_z × r_x`. The inputs are the axial and normal accelerations
//! `a_v = (a_vx, 0, a_vz)` with `a_vz < 0`, so `ẍ = g + R a_v`.

use nalgebra::{Matrix3, Vector3};

use crate::math;

/// Smallest speed accepted by the inversion, m/s.
pub const V_EPS: f64 = 1.0;
/// Smallest normal acceleration magnitude, m/s².
pub const A_EPS: f64 = 0.5;
/// Smallest axial component of the path tangent in the velocity frame.
pub const M_EPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum FlatnessError {
    #[error("speed {0} m/s is below the flatness limit")]
    LowSpeed(f64),
    #[error("normal acceleration {0} m/s² is below the flatness limit")]
    LowNormalAcceleration(f64),
    #[error("path tangent component {0} along the velocity axis is too small")]
    SingularDecoupling(f64),
    #[error("gain k2 must be positive for the cascade command")]
    NonPositiveGain,
}

/// Flat output: position and its first three time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

/// Velocity frame and accelerations reconstructed from the flat output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinatedFrame {
    pub rotation: Matrix3<f64>,
    pub a_vx: f64,
    pub a_vz: f64,
    pub speed: f64,
    pub omega_vy: f64,
    pub omega_vz: f64,
    /// Gravity expressed in the velocity frame, `Rᵀg`.
    pub gravity_v: Vector3<f64>,
}

/// Right-hand side of the flatness inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatInputs {
    pub a_vx_dot: f64,
    pub omega_vx: f64,
    pub a_vz_dot: f64,
}

pub fn frame_from_flat(
    velocity: &Vector3<f64>,
    acceleration: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Result<CoordinatedFrame, FlatnessError> {
    let speed = velocity.norm();
    if !(speed >= V_EPS) {
        return Err(FlatnessError::LowSpeed(speed));
    }
    let r_x = velocity / speed;
    let specific = acceleration - gravity;
    let a_vx = r_x.dot(&specific);
    let a_n = specific - r_x * a_vx;
    let a_n_norm = a_n.norm();
    if !(a_n_norm >= A_EPS) {
        return Err(FlatnessError::LowNormalAcceleration(a_n_norm));
    }
    let a_vz = -a_n_norm;
    let r_z = a_n / a_vz;
    let r_y = r_z.cross(&r_x);
    let rotation = Matrix3::from_columns(&[r_x, r_y, r_z]);
    let gravity_v = rotation.transpose() * gravity;
    let (omega_vy, omega_vz) = rates(a_vz, speed, &gravity_v);
    Ok(CoordinatedFrame { rotation, a_vx, a_vz, speed, omega_vy, omega_vz, gravity_v })
}

fn rates(a_vz: f64, speed: f64, gravity_v: &Vector3<f64>) -> (f64, f64) {
    (-(a_vz + gravity_v.z) / speed, gravity_v.y / speed)
}

/// Pitch and yaw rates that keep the flight coordinated.
pub fn coordinated_rates(frame: &CoordinatedFrame) -> Result<(f64, f64), FlatnessError> {
    if !(frame.speed >= V_EPS) {
        return Err(FlatnessError::LowSpeed(frame.speed));
    }
    Ok(rates(frame.a_vz, frame.speed, &frame.gravity_v))
}

/// Inverts `x⁽³⁾ = R(ω × a_v + ȧ_v)` for the model inputs.
pub fn flat_inputs(jerk: &Vector3<f64>, frame: &CoordinatedFrame) -> Result<FlatInputs, FlatnessError> {
    if !(frame.a_vz <= -A_EPS) {
        return Err(FlatnessError::LowNormalAcceleration(-frame.a_vz));
    }
    let j = frame.rotation.transpose() * jerk;
    Ok(FlatInputs {
        a_vx_dot: j.x - frame.omega_vy * frame.a_vz,
        omega_vx: frame.omega_vz * frame.a_vx / frame.a_vz - j.y / frame.a_vz,
        a_vz_dot: j.z + frame.omega_vy * frame.a_vx,
    })
}

/// Jerk produced by the inputs at the given frame.
pub fn forward_jerk(frame: &CoordinatedFrame, inputs: &FlatInputs) -> Vector3<f64> {
    let omega = Vector3::new(inputs.omega_vx, frame.omega_vy, frame.omega_vz);
    let a_v = Vector3::new(frame.a_vx, 0.0, frame.a_vz);
    let a_v_dot = Vector3::new(inputs.a_vx_dot, 0.0, inputs.a_vz_dot);
    frame.rotation * (omega.cross(&a_v) + a_v_dot)
}

/// Feedback gains on position, velocity and acceleration error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for Gains {
    /// Triple pole at -2 rad/s.
    fn default() -> Self {
        Self { k0: 8.0, k1: 12.0, k2: 6.0 }
    }
}

/// Measured translational state used for feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Velocity relative to the air mass.
    pub air_velocity: Vector3<f64>,
}

impl TrackingState {
    pub fn from_flat(flat: &FlatState) -> Self {
        Self {
            position: flat.position,
            velocity: flat.velocity,
            acceleration: flat.acceleration,
            air_velocity: flat.velocity,
        }
    }
}

/// `x_c⁽³⁾ = x_r⁽³⁾ + k₂ë + k₁ė + k₀e` with `e = x_r − x`.
pub fn tracking_jerk(reference: &FlatState, actual: &TrackingState, gains: &Gains) -> Vector3<f64> {
    let e = reference.position - actual.position;
    let e_dot = reference.velocity - actual.velocity;
    let e_ddot = reference.acceleration - actual.acceleration;
    reference.jerk + e_ddot * gains.k2 + e_dot * gains.k1 + e * gains.k0
}

/// Roll, pitch and yaw of a rotation in the Z-Y-X convention, measured
/// against north-east-down axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

pub fn euler_zyx(rotation: &Matrix3<f64>) -> EulerAngles {
    // ENU inertial axes to NED, then read the angles off the NED matrix.
    let ned = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0) * rotation;
    EulerAngles {
        roll: math::atan2(ned[(2, 1)], ned[(2, 2)]),
        pitch: -math::asin(ned[(2, 0)].clamp(-1.0, 1.0)),
        yaw: math::atan2(ned[(1, 0)], ned[(0, 0)]),
    }
}

/// Attitude of the aircraft: bank of the velocity frame, flight-path angle
/// plus angle of attack, and heading.
pub fn attitude(rotation: &Matrix3<f64>, alpha: f64) -> EulerAngles {
    let e = euler_zyx(rotation);
    EulerAngles { roll: e.roll, pitch: e.pitch + alpha, yaw: e.yaw }
}

/// Propulsion and aerodynamic estimates needed to turn axial acceleration
/// into thrust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropulsionEstimate {
    pub alpha: f64,
    pub drag: f64,
    /// Largest available thrust acceleration, m/s².
    pub max_thrust: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    pub gains: Gains,
    pub phi_limit: f64,
    pub gravity: Vector3<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { gains: Gains::default(), phi_limit: 1.0, gravity: crate::gravity_vector() }
    }
}

/// Commanded input `u_c = [θ_c φ_c ω_vx ω_vy a_T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandedInput {
    pub theta: f64,
    pub phi: f64,
    pub omega_vx: f64,
    pub omega_vy: f64,
    pub thrust: f64,
    pub phi_clamped: bool,
    pub thrust_clamped: bool,
}

/// Cascade command: the feedback-corrected acceleration
/// `a_c = ẍ_r + (k₁ė + k₀e)/k₂` defines the commanded frame, and
/// `x_c⁽³⁾ = x_r⁽³⁾ + k₂(a_c − ẍ)` drives the roll rate.
pub fn command_from_flat(
    reference: &FlatState,
    actual: &TrackingState,
    config: &ControlConfig,
    propulsion: &PropulsionEstimate,
) -> Result<CommandedInput, FlatnessError> {
    let g = &config.gains;
    if !(g.k2 > 0.0) {
        return Err(FlatnessError::NonPositiveGain);
    }
    let e = reference.position - actual.position;
    let e_dot = reference.velocity - actual.velocity;
    let accel_c = reference.acceleration + (e_dot * g.k1 + e * g.k0) / g.k2;
    let jerk_c = tracking_jerk(reference, actual, g);

    let frame = frame_from_flat(&actual.air_velocity, &accel_c, &config.gravity)?;
    let inputs = flat_inputs(&jerk_c, &frame)?;
    let angles = attitude(&frame.rotation, propulsion.alpha);

    let phi_clamped = angles.roll.abs() > config.phi_limit;
    let phi = angles.roll.clamp(-config.phi_limit, config.phi_limit);
    let thrust_raw = (frame.a_vx + propulsion.drag) / math::cos(propulsion.alpha);
    let thrust = thrust_raw.clamp(0.0, propulsion.max_thrust);
    Ok(CommandedInput {
        theta: angles.pitch,
        phi,
        omega_vx: inputs.omega_vx,
        omega_vy: frame.omega_vy,
        thrust,
        phi_clamped,
        thrust_clamped: thrust != thrust_raw,
    })
}

/// Progress variable along a geometric path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParamState {
    pub s: f64,
    pub s_dot: f64,
    pub s_ddot: f64,
}

/// Path point and derivatives with respect to `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathDerivatives {
    pub position: Vector3<f64>,
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
    pub d3: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParamInputs {
    pub s_jerk: f64,
    pub omega_vx: f64,
    pub a_vz_dot: f64,
}

/// Decoupling matrix with columns `Rᵀ δx/δs`, `(0, a_vz, 0)` and `(0, 0, −1)`.
pub fn decoupling_matrix(tangent: &Vector3<f64>, frame: &CoordinatedFrame) -> Matrix3<f64> {
    let t = frame.rotation.transpose() * tangent;
    Matrix3::from_columns(&[t, Vector3::new(0.0, frame.a_vz, 0.0), Vector3::new(0.0, 0.0, -1.0)])
}

/// Solves for `(s⁽³⁾, ω_vx, ȧ_vz)` so that the vehicle jerk matches the
/// path-parameterized reference jerk plus feedback, with the axial input
/// `ȧ_vx` prescribed.
pub fn path_param_inputs(
    pp: &PathParamState,
    path: &PathDerivatives,
    actual: &TrackingState,
    frame: &CoordinatedFrame,
    gains: &Gains,
    a_vx_dot: f64,
) -> Result<PathParamInputs, FlatnessError> {
    let m = decoupling_matrix(&path.d1, frame);
    if !(m[(0, 0)].abs() >= M_EPS) {
        return Err(FlatnessError::SingularDecoupling(m[(0, 0)]));
    }
    if !(frame.a_vz <= -A_EPS) {
        return Err(FlatnessError::LowNormalAcceleration(-frame.a_vz));
    }
    let (sd, sdd) = (pp.s_dot, pp.s_ddot);
    let ref_vel = path.d1 * sd;
    let ref_acc = path.d2 * (sd * sd) + path.d1 * sdd;
    let e = path.position - actual.position;
    let e_dot = ref_vel - actual.velocity;
    let e_ddot = ref_acc - actual.acceleration;
    let known = path.d2 * (3.0 * sd * sdd)
        + path.d3 * (sd * sd * sd)
        + e_ddot * gains.k2
        + e_dot * gains.k1
        + e * gains.k0;
    let affine = Vector3::new(
        frame.omega_vy * frame.a_vz + a_vx_dot,
        frame.omega_vz * frame.a_vx,
        -frame.omega_vy * frame.a_vx,
    );
    let rhs = affine - frame.rotation.transpose() * known;
    // M is lower-triangular up to the first column, so solve by substitution.
    let s_jerk = rhs.x / m[(0, 0)];
    let omega_vx = (rhs.y - m[(1, 0)] * s_jerk) / frame.a_vz;
    let a_vz_dot = m[(2, 0)] * s_jerk - rhs.z;
    Ok(PathParamInputs { s_jerk, omega_vx, a_vz_dot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g() -> Vector3<f64> {
        crate::gravity_vector()
    }

    #[test]
    fn level_flight_frame() {
        let f = frame_from_flat(&Vector3::new(14.0, 0.0, 0.0), &Vector3::zeros(), &g()).unwrap();
        assert_eq!(f.a_vx, 0.0);
        assert_relative_eq!(f.a_vz, -9.81, epsilon = 1e-12);
        assert_relative_eq!(f.rotation.column(2).into_owned(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_eq!(coordinated_rates(&f).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn level_turn_bank() {
        let f = frame_from_flat(&Vector3::new(14.0, 0.0, 0.0), &Vector3::new(0.0, -4.3556, 0.0), &g())
            .unwrap();
        assert_relative_eq!(f.a_vz, -(4.3556_f64.powi(2) + 9.81 * 9.81).sqrt(), epsilon = 1e-12);
        let e = euler_zyx(&f.rotation);
        assert_relative_eq!(e.roll, (4.3556_f64 / 9.81).atan(), epsilon = 1e-12);
        assert!(e.roll > 0.0, "right turn banks right");
        let rot = f.rotation;
        assert_relative_eq!(rot.transpose() * rot, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(rot.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_cases() {
        let dive = frame_from_flat(&Vector3::new(0.0, 0.0, -14.0), &Vector3::zeros(), &g());
        assert!(matches!(dive, Err(FlatnessError::LowNormalAcceleration(_))));
        let slow = frame_from_flat(&Vector3::new(0.5, 0.0, 0.0), &Vector3::zeros(), &g());
        assert!(matches!(slow, Err(FlatnessError::LowSpeed(_))));
    }

    #[test]
    fn inverse_and_forward_agree() {
        let f = frame_from_flat(&Vector3::new(12.0, 3.0, -1.0), &Vector3::new(0.5, 2.0, 1.0), &g())
            .unwrap();
        let jerk = Vector3::new(0.3, -1.2, 0.7);
        let inputs = flat_inputs(&jerk, &f).unwrap();
        assert_relative_eq!(forward_jerk(&f, &inputs), jerk, epsilon = 1e-12);
    }

    #[test]
    fn tracking_jerk_substitution() {
        let r = FlatState { jerk: Vector3::new(0.1, 0.2, 0.3), ..Default::default() };
        let mut a = TrackingState::from_flat(&r);
        assert_eq!(tracking_jerk(&r, &a, &Gains::default()), r.jerk);
        a.position = Vector3::new(-1.0, 0.0, 0.0);
        assert_relative_eq!(
            tracking_jerk(&r, &a, &Gains::default()),
            Vector3::new(8.1, 0.2, 0.3),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bank_is_clamped() {
        let r = FlatState {
            velocity: Vector3::new(14.0, 0.0, 0.0),
            acceleration: Vector3::new(0.0, 20.0, 0.0),
            ..Default::default()
        };
        let prop = PropulsionEstimate { alpha: 0.0, drag: 0.5, max_thrust: 10.0 };
        let cmd = command_from_flat(&r, &TrackingState::from_flat(&r), &ControlConfig::default(), &prop)
            .unwrap();
        assert!(cmd.phi_clamped);
        assert_eq!(cmd.phi, -1.0);
    }

    #[test]
    fn path_param_trim_is_zero() {
        let f = frame_from_flat(&Vector3::new(14.0, 0.0, 0.0), &Vector3::zeros(), &g()).unwrap();
        let pp = PathParamState { s: 0.0, s_dot: 14.0, s_ddot: 0.0 };
        let path = PathDerivatives {
            position: Vector3::zeros(),
            d1: Vector3::x(),
            d2: Vector3::zeros(),
            d3: Vector3::zeros(),
        };
        let actual = TrackingState {
            position: Vector3::zeros(),
            velocity: Vector3::new(14.0, 0.0, 0.0),
            acceleration: Vector3::zeros(),
            air_velocity: Vector3::new(14.0, 0.0, 0.0),
        };
        let out = path_param_inputs(&pp, &path, &actual, &f, &Gains::default(), 0.0).unwrap();
        assert_eq!((out.s_jerk, out.omega_vx, out.a_vz_dot), (0.0, 0.0, 0.0));
        let m = decoupling_matrix(&path.d1, &f);
        assert_relative_eq!(m.determinant(), -f.a_vz * m[(0, 0)], epsilon = 1e-12);
    }
}
