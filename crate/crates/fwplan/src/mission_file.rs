//! TOML mission files.
//!
//! ```toml
//! version = 1
//! cruise_speed_mps = 14.0
//!
//! [origin]            # documentation only
//! lat_deg = 47.0
//! lon_deg = 8.0
//! alt_m = 400.0
//!
//! [[legs]]
//! type = "loiter"
//! center_m = [0.0, 0.0, 50.0]
//! radius_m = 45.0
//! direction = "ccw"
//! min_laps = 1
//!
//! [[legs]]
//! type = "bernstein"
//! waypoints_m = [[65.0, -55.0, 50.0], [115.0, -45.0, 50.0]]
//! ```

use std::path::Path;

use fwplan_core::mission::{Direction, GeodeticOrigin, Leg, Loiter, MissionPlan};
use fwplan_core::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{in_file, read_file, FileError, FormatError};

pub const MISSION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DirectionText {
    Cw,
    Ccw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LegText {
    Loiter {
        center_m: [f64; 3],
        radius_m: f64,
        direction: DirectionText,
        #[serde(default = "one_lap")]
        min_laps: u32,
    },
    Bernstein {
        waypoints_m: Vec<[f64; 3]>,
    },
}

fn one_lap() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OriginText {
    lat_deg: f64,
    lon_deg: f64,
    alt_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MissionText {
    version: u32,
    cruise_speed_mps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_m: Option<[f64; 3]>,
    #[serde(default)]
    origin: OriginText,
    legs: Vec<LegText>,
}

fn vec3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn parse_mission(text: &str) -> Result<MissionPlan, FormatError> {
    let m: MissionText = toml::from_str(text)?;
    if m.version != MISSION_VERSION {
        return Err(FormatError::Version { found: m.version, expected: MISSION_VERSION });
    }
    if !(m.cruise_speed_mps > 0.0) {
        return Err(FormatError::field("cruise_speed_mps", "must be positive"));
    }
    let legs = m
        .legs
        .iter()
        .map(|leg| match leg {
            LegText::Loiter { center_m, radius_m, direction, min_laps } => Leg::Loiter(Loiter {
                center: vec3(center_m),
                radius: *radius_m,
                direction: match direction {
                    DirectionText::Cw => Direction::Clockwise,
                    DirectionText::Ccw => Direction::CounterClockwise,
                },
                min_laps: *min_laps,
            }),
            LegText::Bernstein { waypoints_m } => {
                Leg::Bernstein { waypoints: waypoints_m.iter().map(vec3).collect() }
            }
        })
        .collect();
    Ok(MissionPlan {
        legs,
        cruise_speed: m.cruise_speed_mps,
        origin: GeodeticOrigin { lat_deg: m.origin.lat_deg, lon_deg: m.origin.lon_deg, alt_m: m.origin.alt_m },
        start: m.start_m.as_ref().map(vec3),
    })
}

pub fn format_mission(mission: &MissionPlan) -> String {
    let text = MissionText {
        version: MISSION_VERSION,
        cruise_speed_mps: mission.cruise_speed,
        start_m: mission.start.as_ref().map(arr),
        origin: OriginText {
            lat_deg: mission.origin.lat_deg,
            lon_deg: mission.origin.lon_deg,
            alt_m: mission.origin.alt_m,
        },
        legs: mission
            .legs
            .iter()
            .map(|leg| match leg {
                Leg::Loiter(l) => LegText::Loiter {
                    center_m: arr(&l.center),
                    radius_m: l.radius,
                    direction: match l.direction {
                        Direction::Clockwise => DirectionText::Cw,
                        Direction::CounterClockwise => DirectionText::Ccw,
                    },
                    min_laps: l.min_laps,
                },
                Leg::Bernstein { waypoints } => {
                    LegText::Bernstein { waypoints_m: waypoints.iter().map(arr).collect() }
                }
            })
            .collect(),
    };
    toml::to_string(&text).expect("mission serializes to TOML")
}

pub fn read_mission(path: &Path) -> Result<MissionPlan, FileError> {
    let text = read_file(path)?;
    in_file(path, parse_mission(&text))
}

/// The two-loiter example mission shipped with the crate.
pub const EXAMPLE_MISSION: &str = include_str!("../missions/two_loiters.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_parses_and_round_trips() {
        let m = parse_mission(EXAMPLE_MISSION).unwrap();
        assert_eq!(m.legs.len(), 5);
        assert_eq!(parse_mission(&format_mission(&m)).unwrap(), m);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = EXAMPLE_MISSION.replacen("radius_m", "radius", 1);
        let err = parse_mission(&bad).unwrap_err().to_string();
        assert!(err.contains("radius"), "{err}");
        assert!(err.contains("line"), "{err}");
        let bad = EXAMPLE_MISSION.replacen("version = 1", "version = 7", 1);
        assert!(matches!(parse_mission(&bad), Err(FormatError::Version { found: 7, .. })));
    }
}
