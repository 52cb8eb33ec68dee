//! TOML parameter files: airframe, wind, planner, controller and simulator
//! settings. Every section and key is optional and falls back to the
//! library defaults.
//!
//! ```toml
//! version = 1
//! [aero]
//! mass_kg = 1.1
//! [wind]
//! mean_mps = [1.414213562, 1.414213562, 0.0]
//! [planner]
//! kappa_max_per_m = 0.025
//! ```

use std::path::Path;

use fwplan_core::flatness::{ControlConfig, Gains};
use fwplan_core::mission::MissionConfig;
use fwplan_core::planner::PlannerConfig;
use fwplan_core::sim::{AeroParams, SimConfig, WindField};
use fwplan_core::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{in_file, read_file, FileError, FormatError};

pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AeroText {
    mass_kg: f64,
    wing_area_m2: f64,
    c_l0: f64,
    c_l_alpha_per_rad: f64,
    c_d0: f64,
    k_induced: f64,
    a_l0_mps2: f64,
    thrust_max_n: f64,
    phi_limit_rad: f64,
}

impl Default for AeroText {
    fn default() -> Self {
        let a = AeroParams::default();
        Self {
            mass_kg: a.mass,
            wing_area_m2: a.wing_area,
            c_l0: a.c_l0,
            c_l_alpha_per_rad: a.c_l_alpha,
            c_d0: a.c_d0,
            k_induced: a.k_induced,
            a_l0_mps2: a.a_l0,
            thrust_max_n: a.thrust_max,
            phi_limit_rad: a.phi_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WindText {
    mean_mps: [f64; 3],
    gust_amplitude_mps: f64,
    gust_period_s: f64,
    seed: u64,
}

impl Default for WindText {
    fn default() -> Self {
        let w = WindField::default();
        Self {
            mean_mps: [w.mean.x, w.mean.y, w.mean.z],
            gust_amplitude_mps: w.gust_amplitude,
            gust_period_s: w.gust_period,
            seed: w.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlannerText {
    degree: usize,
    v_min_mps: f64,
    v_max_mps: f64,
    a_max_mps2: f64,
    kappa_min_per_m: f64,
    kappa_max_per_m: f64,
    curvature_samples: usize,
    continuity_order: usize,
    eps_abs: f64,
    eps_rel: f64,
    max_iter: usize,
    rho: f64,
    adaptive_rho: bool,
    polish: bool,
}

impl Default for PlannerText {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self {
            degree: p.degree,
            v_min_mps: p.v_min,
            v_max_mps: p.v_max,
            a_max_mps2: p.a_max,
            kappa_min_per_m: p.kappa_min,
            kappa_max_per_m: p.kappa_max,
            curvature_samples: p.n_curv_samples,
            continuity_order: p.continuity_order,
            eps_abs: p.qp.eps_abs,
            eps_rel: p.qp.eps_rel,
            max_iter: p.qp.max_iter,
            rho: p.qp.rho,
            adaptive_rho: p.qp.adaptive_rho,
            polish: p.qp.polish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ControlText {
    k0: f64,
    k1: f64,
    k2: f64,
    phi_limit_rad: f64,
}

impl Default for ControlText {
    fn default() -> Self {
        let c = ControlConfig::default();
        Self { k0: c.gains.k0, k1: c.gains.k1, k2: c.gains.k2, phi_limit_rad: c.phi_limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimText {
    dt_s: f64,
    tau_att_s: f64,
    control_dt_s: f64,
    replan_every_ticks: usize,
    initial_t_opt_s: f64,
}

impl Default for SimText {
    fn default() -> Self {
        let m = MissionConfig::default();
        Self {
            dt_s: m.sim.dt,
            tau_att_s: m.sim.tau_att,
            control_dt_s: m.control_dt,
            replan_every_ticks: m.replan_every,
            initial_t_opt_s: m.initial_t_opt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsText {
    version: u32,
    #[serde(default)]
    aero: AeroText,
    #[serde(default)]
    wind: WindText,
    #[serde(default)]
    planner: PlannerText,
    #[serde(default)]
    control: ControlText,
    #[serde(default)]
    sim: SimText,
}

/// Everything a closed-loop run needs besides the mission.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub aero: AeroParams,
    pub wind: WindField,
    pub mission: MissionConfig,
}

impl Default for Params {
    fn default() -> Self {
        Self { aero: AeroParams::default(), wind: WindField::default(), mission: MissionConfig::default() }
    }
}

impl Params {
    /// Sets the planner's cruise speed, which missions carry themselves.
    pub fn with_cruise_speed(mut self, speed: f64) -> Self {
        self.mission.planner.cruise_speed = speed;
        self
    }
}

pub fn parse_params(text: &str) -> Result<Params, FormatError> {
    let p: ParamsText = toml::from_str(text)?;
    if p.version != PARAMS_VERSION {
        return Err(FormatError::Version { found: p.version, expected: PARAMS_VERSION });
    }
    let aero = AeroParams {
        mass: p.aero.mass_kg,
        wing_area: p.aero.wing_area_m2,
        c_l0: p.aero.c_l0,
        c_l_alpha: p.aero.c_l_alpha_per_rad,
        c_d0: p.aero.c_d0,
        k_induced: p.aero.k_induced,
        a_l0: p.aero.a_l0_mps2,
        thrust_max: p.aero.thrust_max_n,
        phi_limit: p.aero.phi_limit_rad,
    };
    aero.validate().map_err(|e| FormatError::field("aero", e))?;
    let m = p.wind.mean_mps;
    let wind = WindField {
        mean: Vector3::new(m[0], m[1], m[2]),
        gust_amplitude: p.wind.gust_amplitude_mps,
        gust_period: p.wind.gust_period_s,
        seed: p.wind.seed,
    };
    wind.validate().map_err(|e| FormatError::field("wind", e))?;

    let mut planner = PlannerConfig {
        degree: p.planner.degree,
        v_min: p.planner.v_min_mps,
        v_max: p.planner.v_max_mps,
        a_max: p.planner.a_max_mps2,
        kappa_min: p.planner.kappa_min_per_m,
        kappa_max: p.planner.kappa_max_per_m,
        n_curv_samples: p.planner.curvature_samples,
        continuity_order: p.planner.continuity_order,
        ..PlannerConfig::default()
    };
    planner.qp.eps_abs = p.planner.eps_abs;
    planner.qp.eps_rel = p.planner.eps_rel;
    planner.qp.max_iter = p.planner.max_iter;
    planner.qp.rho = p.planner.rho;
    planner.qp.adaptive_rho = p.planner.adaptive_rho;
    planner.qp.polish = p.planner.polish;
    planner.validate().map_err(|e| FormatError::field("planner", e))?;

    let control = ControlConfig {
        gains: Gains { k0: p.control.k0, k1: p.control.k1, k2: p.control.k2 },
        phi_limit: p.control.phi_limit_rad,
        ..ControlConfig::default()
    };
    if !(control.gains.k2 > 0.0) {
        return Err(FormatError::field("control.k2", "must be positive"));
    }
    let mission = MissionConfig {
        planner,
        control,
        sim: SimConfig { dt: p.sim.dt_s, tau_att: p.sim.tau_att_s, ..SimConfig::default() },
        control_dt: p.sim.control_dt_s,
        replan_every: p.sim.replan_every_ticks,
        initial_t_opt: p.sim.initial_t_opt_s,
    };
    Ok(Params { aero, wind, mission })
}

pub fn read_params(path: &Path) -> Result<Params, FileError> {
    let text = read_file(path)?;
    in_file(path, parse_params(&text))
}

/// Parameters matching the bundled example mission: library defaults with
/// a steady 2 m/s north-east wind.
pub const EXAMPLE_PARAMS: &str = include_str!("../missions/params.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gives_defaults() {
        assert_eq!(parse_params("version = 1\n").unwrap(), Params::default());
    }

    #[test]
    fn example_has_north_east_wind() {
        let p = parse_params(EXAMPLE_PARAMS).unwrap();
        assert!((p.wind.mean.norm() - 2.0).abs() < 1e-8);
        assert!((p.wind.mean.x - p.wind.mean.y).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_reported() {
        let err = parse_params("version = 1\n[aero]\nmass = 2.0\n").unwrap_err().to_string();
        assert!(err.contains("mass"), "{err}");
        let err = parse_params("version = 1\n[aero]\nmass_kg = -2.0\n").unwrap_err().to_string();
        assert!(err.contains("aero"), "{err}");
    }
}
