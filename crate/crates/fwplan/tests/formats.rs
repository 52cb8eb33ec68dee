use fwplan::core::mission::{schedule_mission, IterationModel, Leg, ScheduledLeg};
use fwplan::core::planner::PlannerConfig;
use fwplan::mission_file::{format_mission, parse_mission, EXAMPLE_MISSION};
use fwplan::params::{parse_params, EXAMPLE_PARAMS};
use fwplan::trajectory::{format_trajectory, parse_trajectory};

#[test]
fn planned_legs_survive_the_trajectory_format_bit_for_bit() {
    let mission = parse_mission(EXAMPLE_MISSION).unwrap();
    let schedule = schedule_mission(&mission, &PlannerConfig::default(), &mut IterationModel::default()).unwrap();
    let mut seen = 0;
    for leg in &schedule.legs {
        if let ScheduledLeg::Bernstein(b) = leg {
            let text = format_trajectory(&b.trajectory);
            let back = parse_trajectory(&text).unwrap();
            assert_eq!(back, b.trajectory);
            assert_eq!(format_trajectory(&back), text);
            seen += 1;
        }
    }
    assert_eq!(seen, 2);
}

#[test]
fn example_mission_round_trips() {
    let mission = parse_mission(EXAMPLE_MISSION).unwrap();
    assert_eq!(mission.legs.len(), 5);
    assert!(matches!(mission.legs[0], Leg::Loiter(_)));
    assert_eq!(parse_mission(&format_mission(&mission)).unwrap(), mission);
}

#[test]
fn params_errors_name_their_location() {
    let err = parse_params("version = 1\n[planner]\ndegree = \"seven\"\n").unwrap_err().to_string();
    assert!(err.contains("degree"), "{err}");
    let err = parse_params("version = 2\n").unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
    let err = parse_params("version = 1\n[planner]\nkappa_min_per_m = 0.1\nkappa_max_per_m = 0.0\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("planner"), "{err}");
    assert!(parse_params(EXAMPLE_PARAMS).is_ok());
}

#[test]
fn trajectory_comments_and_blank_lines_are_ignored() {
    let text = "# header\nfwplan-trajectory 1\n\nsegments 1\nsegment 1 0.0 2.0\n# p0\n0 0 0\n2 0 0\n";
    let traj = parse_trajectory(text).unwrap();
    assert_eq!(traj.eval(1.0).unwrap().position.x, 1.0);
    assert!(parse_trajectory("fwplan-trajectory 1\nsegments 2\nsegment 1 0 1\n0 0 0\n1 0 0\n").is_err());
}
