//! Wall-clock timing of solves and the waypoint-count benchmark.

use std::collections::BTreeMap;
use std::time::Instant;

use fwplan_core::mission::ReplanTimer;
use fwplan_core::planner::{self, PlanDiagnostics, PlanOutput, PlannerConfig, PlannerError, WaypointSequence};
use fwplan_core::qp::{self, QpError, QpProblem, QpSettings, QpSolution};
use fwplan_core::Vector3;

/// Measures replans with the monotonic clock. Logs made with it are not
/// reproducible run to run.
#[derive(Debug, Default)]
pub struct WallClock {
    started: Option<Instant>,
}

impl ReplanTimer for WallClock {
    fn start(&mut self) {
        self.started = Some(Instant::now());
    }

    fn stop(&mut self, _: Option<&PlanDiagnostics>) -> f64 {
        self.started.take().map_or(0.0, |s| s.elapsed().as_secs_f64())
    }
}

/// Solves and records the elapsed wall-clock time in the solution.
pub fn timed_solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let start = Instant::now();
    let mut sol = qp::solve(prob, settings)?;
    sol.solve_time = start.elapsed().as_secs_f64();
    Ok(sol)
}

/// Plans and records the elapsed wall-clock time in the diagnostics.
pub fn timed_plan(wps: &WaypointSequence, config: &PlannerConfig) -> Result<PlanOutput, PlannerError> {
    let start = Instant::now();
    let mut out = planner::plan(wps, config, None)?;
    let elapsed = start.elapsed().as_secs_f64();
    out.diagnostics.solve_time = elapsed;
    out.solution.solve_time = elapsed;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    /// Seconds per solve, in input order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Mean seconds keyed by number of variables.
    pub per_size: BTreeMap<usize, f64>,
}

impl TimingStats {
    fn from_samples(samples: Vec<f64>, sizes: &[usize]) -> Self {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let max = samples.iter().copied().fold(0.0, f64::max);
        let mut grouped: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (s, &n) in samples.iter().zip(sizes) {
            let e = grouped.entry(n).or_default();
            e.0 += s;
            e.1 += 1;
        }
        let per_size = grouped.into_iter().map(|(n, (sum, c))| (n, sum / c as f64)).collect();
        Self { samples, mean, max, per_size }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TimingError {
    #[error("no problems to time")]
    Empty,
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Bernstein(#[from] fwplan_core::bernstein::BernsteinError),
}

/// Wall-clock time of solving each problem once.
pub fn solve_time_series(probs: &[QpProblem], settings: &QpSettings) -> Result<TimingStats, TimingError> {
    if probs.is_empty() {
        return Err(TimingError::Empty);
    }
    let mut samples = Vec::with_capacity(probs.len());
    for p in probs {
        samples.push(timed_solve(p, settings)?.solve_time);
    }
    let sizes: Vec<usize> = probs.iter().map(QpProblem::num_variables).collect();
    Ok(TimingStats::from_samples(samples, &sizes))
}

/// A level meandering route of `count` waypoints spaced `spacing` metres
/// apart, flown at the configured cruise speed from end to end.
pub fn meander(count: usize, spacing: f64, speed: f64) -> Result<WaypointSequence, PlannerError> {
    let points: Vec<Vector3<f64>> = (0..count)
        .map(|i| {
            let side = match i % 4 {
                1 => 1.0,
                3 => -1.0,
                _ => 0.0,
            };
            Vector3::new(i as f64 * spacing, 0.15 * spacing * side, 50.0)
        })
        .collect();
    let v = Vector3::new(speed, 0.0, 0.0);
    WaypointSequence::new(points, v, Vector3::zeros(), v, Vector3::zeros())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub waypoints: usize,
    pub path_length: f64,
    pub mean_time: f64,
    pub max_time: f64,
    pub iterations: usize,
    pub variables: usize,
    pub constraints: usize,
}

/// Cold-start plan times of [`meander`] routes of each waypoint count.
pub fn bench_waypoints(
    counts: &[usize],
    spacing: f64,
    repeats: usize,
    config: &PlannerConfig,
) -> Result<Vec<BenchRow>, TimingError> {
    if counts.is_empty() || repeats == 0 {
        return Err(TimingError::Empty);
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let wps = meander(count, spacing, config.cruise_speed)?;
        let mut samples = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let out = timed_plan(&wps, config)?;
            samples.push(out.diagnostics.solve_time);
            last = Some(out);
        }
        let out = last.expect("repeats is positive");
        let stats = TimingStats::from_samples(samples, &vec![count; repeats]);
        rows.push(BenchRow {
            waypoints: count,
            path_length: out.trajectory.arc_length(64)?,
            mean_time: stats.mean,
            max_time: stats.max,
            iterations: out.diagnostics.iterations,
            variables: out.diagnostics.variables,
            constraints: out.diagnostics.constraints,
        });
    }
    Ok(rows)
}

/// Least-squares line `y = slope x + intercept` and its coefficient of
/// determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
