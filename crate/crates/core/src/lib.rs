//! Trajectory planning and control for fixed-wing aircraft in coordinated flight.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! machinery:
//!
//! - [`bernstein`]: Bernstein segments, piecewise trajectories, difference and
//!   Gram matrices.
//! - [`qp`]: a dense-interface ADMM solver for convex quadratic programs.
//! - [`planner`]: minimum-jerk piecewise Bernstein planning with endpoint,
//!   continuity, derivative-hull and linearized curvature constraints, plus
//!   the replanning handoff.
//! - [`flatness`]: flat-output inversion, the cascade jerk law and the
//!   arc-length parameterized inversion.
//! - [`sim`]: a coordinated-flight point-mass simulator with aero and
//!   propulsion model, wind and an emulated attitude loop.
//! - [`mission`]: loiter/Bernstein missions, the closed-loop executive and
//!   tracking metrics.
//!
//! File formats, wall-clock timing and the command line live in the `fwplan`
//! crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bernstein;
pub mod flatness;
pub mod math;
pub mod mission;
pub mod planner;
pub mod qp;
pub mod sim;

pub use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the local ENU inertial frame.
pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}
