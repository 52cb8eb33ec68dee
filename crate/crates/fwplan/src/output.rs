//! Simulation logs, summaries, planner diagnostics and QP dumps.

use std::io::{self, Write};

use fwplan_core::mission::{Metrics, SimLog};
use fwplan_core::planner::PlanDiagnostics;
use fwplan_core::qp::QpProblem;

pub const LOG_HEADER: [&str; 25] = [
    "t", "ref_x", "ref_y", "ref_z", "ref_vx", "ref_vy", "ref_vz", "ref_ax", "ref_ay", "ref_az",
    "act_x", "act_y", "act_z", "act_vx", "act_vy", "act_vz", "phi", "theta", "psi", "phi_c",
    "theta_c", "a_T", "leg_id", "replan_flag", "t_opt",
];

fn num(x: f64) -> String {
    format!("{x:.10e}")
}

/// One header row and one row per control tick. `replan_flag` is 0 when no
/// replan started on the tick, else 1 (scheduled), 2 (late) or 3 (failed);
/// `t_opt` is empty on ticks without a replan.
pub fn write_log_csv<W: Write>(w: W, log: &SimLog) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOG_HEADER)?;
    for r in &log.rows {
        let s = &r.reference;
        let mut rec: Vec<String> = [
            r.t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
            s.acceleration.x,
            s.acceleration.y,
            s.acceleration.z,
            r.position.x,
            r.position.y,
            r.position.z,
            r.velocity.x,
            r.velocity.y,
            r.velocity.z,
            r.attitude.roll,
            r.attitude.pitch,
            r.attitude.yaw,
            r.command.phi,
            r.command.theta,
            r.command.thrust,
        ]
        .into_iter()
        .map(num)
        .collect();
        rec.push(r.leg.to_string());
        rec.push(r.replan.map_or(0, |s| s.code()).to_string());
        rec.push(r.t_opt.map(num).unwrap_or_default());
        out.write_record(&rec)?;
    }
    out.flush()
}

/// `key=value` lines with every metric.
pub fn write_summary<W: Write>(mut w: W, metrics: &Metrics, complete: bool) -> io::Result<()> {
    let fields: [(&str, String); 16] = [
        ("complete", complete.to_string()),
        ("duration_s", num(metrics.duration)),
        ("rmse_pos_m", num(metrics.rmse_pos)),
        ("rmse_vel_mps", num(metrics.rmse_vel)),
        ("roll_max_rad", num(metrics.roll_max)),
        ("roll_min_rad", num(metrics.roll_min)),
        ("t_opt_mean_s", num(metrics.t_opt_mean)),
        ("t_opt_max_s", num(metrics.t_opt_max)),
        ("path_length_m", num(metrics.path_length)),
        ("replans", metrics.replans.to_string()),
        ("replans_failed", metrics.replans_failed.to_string()),
        ("replans_late", metrics.replans_late.to_string()),
        ("swaps", metrics.swaps.to_string()),
        ("max_swap_position_jump_m", num(metrics.max_swap_position_jump)),
        ("max_swap_velocity_jump_mps", num(metrics.max_swap_velocity_jump)),
        ("roll_saturated_ticks", metrics.roll_saturated_ticks.to_string()),
    ];
    for (k, v) in fields {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

/// Single-line `key=value` record for one plan.
pub fn diagnostics_record(label: &str, d: &PlanDiagnostics) -> String {
    format!(
        "plan={label} status={} iterations={} objective={} primal_residual={} dual_residual={} \
         variables={} constraints={} polished={} solve_time_s={}",
        d.status.as_str(),
        d.iterations,
        num(d.objective),
        num(d.primal_residual),
        num(d.dual_residual),
        d.variables,
        d.constraints,
        d.polished,
        num(d.solve_time),
    )
}

/// Dense text dump of a QP: dimensions, then `Q`, `q`, `A`, `l`, `u`, one
/// matrix row per line.
pub fn write_qp_dump<W: Write>(mut w: W, prob: &QpProblem) -> io::Result<()> {
    let n = prob.num_variables();
    let m = prob.num_constraints();
    writeln!(w, "# minimize 1/2 x'Qx + q'x subject to l <= Ax <= u")?;
    writeln!(w, "variables {n}")?;
    writeln!(w, "constraints {m}")?;
    let row = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ");
    let q = prob.cost().to_dense();
    writeln!(w, "Q")?;
    for i in 0..n {
        writeln!(w, "{}", row(&mut q.row(i).iter().copied()))?;
    }
    writeln!(w, "q")?;
    writeln!(w, "{}", row(&mut prob.linear().iter().copied()))?;
    let a = prob.constraints().to_dense();
    writeln!(w, "A")?;
    for i in 0..m {
        writeln!(w, "{}", row(&mut a.row(i).iter().copied()))?;
    }
    writeln!(w, "l")?;
    writeln!(w, "{}", row(&mut prob.lower().iter().copied()))?;
    writeln!(w, "u")?;
    writeln!(w, "{}", row(&mut prob.upper().iter().copied()))?;
    Ok(())
}
