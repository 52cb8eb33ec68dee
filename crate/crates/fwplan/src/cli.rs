//! `fwplan plan | simulate | bench`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fwplan_core::bernstein::PiecewiseTrajectory;
use fwplan_core::mission::{
    self, IterationModel, MissionError, MissionSchedule, ReplanTimer, ScheduledLeg, SimLog,
};
use fwplan_core::planner::{self, Linearization};
use fwplan_core::Vector3;

use crate::error::{read_file, FileError};
use crate::mission_file::parse_mission;
use crate::output::{diagnostics_record, write_log_csv, write_qp_dump, write_summary};
use crate::params::{read_params, Params};
use crate::timing::{bench_waypoints, linear_fit, WallClock};
use crate::trajectory::{format_trajectory, parse_trajectory, write_trajectory};

#[derive(Debug, Parser)]
#[command(name = "fwplan", version, about = "Fixed-wing Bernstein trajectory planning and simulation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Timing {
    /// Deterministic solve-time model from iteration counts.
    Model,
    /// Measured wall-clock time; logs differ run to run.
    Wall,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan every Bernstein leg of a mission and emit the trajectories.
    Plan {
        mission: PathBuf,
        /// Parameter file for planner settings.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Trajectory output; with several Bernstein legs, `_leg<N>` is
        /// appended to the file stem.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory receiving a dense dump of each leg's QP.
        #[arg(long)]
        dump_qp: Option<PathBuf>,
    },
    /// Fly a mission (or a trajectory file) in closed loop.
    Simulate {
        mission: PathBuf,
        params: PathBuf,
        /// Mean wind `east,north,up` in m/s, overriding the parameter file.
        #[arg(long, value_parser = parse_wind, allow_hyphen_values = true)]
        wind: Option<Vector3<f64>>,
        /// Simulated seconds; by default the run ends when the mission does.
        #[arg(long)]
        duration: Option<f64>,
        /// Directory for `log.csv` and `summary.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Timing::Model)]
        timing: Timing,
    },
    /// Plan-time sweep over waypoint counts.
    Bench {
        /// `a..b` doubles from a to b; otherwise a comma-separated list.
        #[arg(long, default_value = "4..64", value_parser = parse_counts)]
        waypoints: Counts,
        /// Distance between consecutive waypoints, m.
        #[arg(long, default_value_t = 65.0)]
        spacing: f64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn parse_wind(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [e, n, u] => Ok(Vector3::new(*e, *n, *u)),
        _ => Err("expected three comma-separated components".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> Result<Counts, String> {
    let bad = |e: std::num::ParseIntError| e.to_string();
    let counts: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.parse().map_err(bad)?, b.parse().map_err(bad)?);
        if a < 2 || b < a {
            return Err("range must satisfy 2 <= a <= b".into());
        }
        std::iter::successors(Some(a), |&n| Some(n * 2)).take_while(|&n| n <= b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<Result<_, _>>()?
    };
    if counts.iter().any(|&c| c < 2) {
        return Err("every count must be at least 2".into());
    }
    Ok(Counts(counts))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error("benchmark failed: {0}")]
    Bench(#[from] crate::timing::TimingError),
    #[error("{}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::File(_) | CliError::Usage(_) => 2,
            CliError::Mission(MissionError::Planning { .. }) => 1,
            CliError::Mission(
                MissionError::Empty
                | MissionError::InvalidLeg { .. }
                | MissionError::InsideLoiter { .. }
                | MissionError::InvalidConfig(_),
            ) => 2,
            CliError::Mission(_) | CliError::Bench(_) | CliError::Write { .. } => 1,
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Write { path: path.to_owned(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(write_err(path))
}

/// What `simulate` flies: a mission or a bare trajectory file.
enum Flight {
    Mission(mission::MissionPlan),
    Trajectory(PiecewiseTrajectory),
}

fn read_flight(path: &Path) -> Result<Flight, FileError> {
    let text = read_file(path)?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    let fmt = |source| FileError::Format { path: path.to_owned(), source };
    if first.is_some_and(|l| l.starts_with("fwplan-trajectory")) {
        parse_trajectory(&text).map(Flight::Trajectory).map_err(fmt)
    } else {
        parse_mission(&text).map(Flight::Mission).map_err(fmt)
    }
}

fn leg_path(out: &Path, leg: usize, several: bool) -> PathBuf {
    if !several {
        return out.to_owned();
    }
    let stem = out.file_stem().map_or_else(|| "trajectory".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(ext) => format!("{stem}_leg{leg}.{}", ext.to_string_lossy()),
        None => format!("{stem}_leg{leg}"),
    };
    out.with_file_name(name)
}

fn run_plan(
    mission_path: &Path,
    params: Option<&Path>,
    out: Option<&Path>,
    dump_qp: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mission = crate::mission_file::read_mission(mission_path)?;
    let params = match params {
        Some(p) => read_params(p)?,
        None => Params::default(),
    }
    .with_cruise_speed(mission.cruise_speed);
    let schedule = mission::schedule_mission(&mission, &params.mission.planner, &mut WallClock::default())?;
    let legs: Vec<_> = schedule
        .legs
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            ScheduledLeg::Bernstein(b) => Some((i, b)),
            ScheduledLeg::Loiter(_) => None,
        })
        .collect();
    let several = legs.len() > 1;
    let so = |e| CliError::Write { path: "<stdout>".into(), source: e };
    if let Some(dir) = dump_qp {
        fs::create_dir_all(dir).map_err(write_err(dir))?;
    }
    for (id, leg) in &legs {
        if let Some(d) = &leg.diagnostics {
            writeln!(stdout, "{}", diagnostics_record(&format!("leg{id}"), d)).map_err(so)?;
        }
        match out {
            Some(path) => {
                let path = leg_path(path, *id, several);
                let mut w = create(&path)?;
                write_trajectory(&mut w, &leg.trajectory).map_err(write_err(&path))?;
                w.flush().map_err(write_err(&path))?;
            }
            None => write!(stdout, "{}", format_trajectory(&leg.trajectory)).map_err(so)?,
        }
        if let (Some(dir), Some(wps)) = (dump_qp, &leg.sequence) {
            let mut times = vec![leg.trajectory.start_time()];
            times.extend(leg.trajectory.junction_times());
            let lin = Linearization::Polyline { waypoints: wps.waypoints(), times: &times };
            let problem = planner::build_problem(wps, &times, &params.mission.planner, &lin)
                .map_err(|source| MissionError::Planning { leg: *id, source })?;
            let path = dir.join(format!("leg{id}_qp.txt"));
            let mut w = create(&path)?;
            write_qp_dump(&mut w, &problem.qp).map_err(write_err(&path))?;
            w.flush().map_err(write_err(&path))?;
        }
    }
    Ok(())
}

struct SimulateArgs<'a> {
    mission: &'a Path,
    params: &'a Path,
    wind: Option<Vector3<f64>>,
    duration: Option<f64>,
    out: Option<&'a Path>,
    timing: Timing,
}

fn run_simulate(args: SimulateArgs<'_>, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(d) = args.duration {
        if !(d > 0.0 && d.is_finite()) {
            return Err(CliError::Usage(format!("--duration must be positive, got {d}")));
        }
    }
    let flight = read_flight(args.mission)?;
    let mut params = read_params(args.params)?;
    if let Some(w) = args.wind {
        params.wind.mean = w;
    }
    if let Flight::Mission(m) = &flight {
        params = params.with_cruise_speed(m.cruise_speed);
    }
    let log = match args.timing {
        Timing::Model => fly(flight, &params, args.duration, &mut IterationModel::default())?,
        Timing::Wall => fly(flight, &params, args.duration, &mut WallClock::default())?,
    };
    let metrics = mission::metrics(&log)?;

    let so = |e| CliError::Write { path: "<stdout>".into(), source: e };
    write_summary(&mut *stdout, &metrics, log.complete).map_err(so)?;
    if let Some(dir) = args.out {
        fs::create_dir_all(dir).map_err(write_err(dir))?;
        let path = dir.join("log.csv");
        let w = create(&path)?;
        write_log_csv(w, &log).map_err(write_err(&path))?;
        let path = dir.join("summary.txt");
        let mut w = create(&path)?;
        write_summary(&mut w, &metrics, log.complete).map_err(write_err(&path))?;
        w.flush().map_err(write_err(&path))?;
    }
    Ok(())
}

fn fly<T: ReplanTimer>(
    flight: Flight,
    params: &Params,
    duration: Option<f64>,
    timer: &mut T,
) -> Result<SimLog, MissionError> {
    let schedule = match flight {
        Flight::Mission(m) => mission::schedule_mission(&m, &params.mission.planner, timer)?,
        Flight::Trajectory(t) => {
            let speed = t.eval(t.start_time()).map_or(0.0, |s| s.velocity.norm());
            MissionSchedule::from_trajectory(t, speed)
        }
    };
    mission::run_schedule(&schedule, &params.mission, &params.aero, &params.wind, duration, timer)
}

fn run_bench(
    counts: &[usize],
    spacing: f64,
    repeats: usize,
    params: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    if !(spacing > 0.0) || repeats == 0 {
        return Err(CliError::Usage("--spacing and --repeats must be positive".into()));
    }
    let params = match params {
        Some(p) => read_params(p)?,
        None => Params::default(),
    };
    let rows = bench_waypoints(counts, spacing, repeats, &params.mission.planner)?;
    let so = |e| CliError::Write { path: "<stdout>".into(), source: e };
    writeln!(stdout, "waypoints path_m mean_ms max_ms iterations variables constraints").map_err(so)?;
    for r in &rows {
        writeln!(
            stdout,
            "{} {:.1} {:.3} {:.3} {} {} {}",
            r.waypoints,
            r.path_length,
            r.mean_time * 1e3,
            r.max_time * 1e3,
            r.iterations,
            r.variables,
            r.constraints
        )
        .map_err(so)?;
    }
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.waypoints as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_time * 1e3).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        writeln!(stdout, "fit slope_ms_per_waypoint={slope:.4} intercept_ms={intercept:.4} r2={r2:.4}")
            .map_err(so)?;
    }
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 when planning or flight fails, 2 on bad arguments or input files.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Plan { mission, params, out, dump_qp } => {
            run_plan(mission, params.as_deref(), out.as_deref(), dump_qp.as_deref(), stdout)
        }
        Command::Simulate { mission, params, wind, duration, out, timing } => run_simulate(
            SimulateArgs {
                mission,
                params,
                wind: *wind,
                duration: *duration,
                out: out.as_deref(),
                timing: *timing,
            },
            stdout,
        ),
        Command::Bench { waypoints, spacing, repeats, params } => {
            run_bench(&waypoints.0, *spacing, *repeats, params.as_deref(), stdout)
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
