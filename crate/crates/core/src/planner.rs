//! Minimum-jerk piecewise Bernstein planning.
//!
//! The decision vector stacks the control points segment by segment, then
//! axis by axis: index `j·3(n+1) + d(n+1) + i` holds control point `i` of
//! axis `d` in segment `j`. Positions are expressed relative to the first
//! waypoint so the problem data stay well scaled far from the origin.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DVector, Vector2, Vector3};

use crate::bernstein::{
    derivative_weights, gram_matrix, BernsteinError, BernsteinSegment, DifferenceMatrix,
    PiecewiseTrajectory, MAX_DEGREE,
};
use crate::flatness::V_EPS;
use crate::math;
use crate::qp::{self, QpError, QpProblem, QpSettings, QpSolution, QpStatus, SparseMatrix, WarmStart};

/// Smallest distance between consecutive waypoints, m.
pub const MIN_SEPARATION: f64 = 1.0;
/// Shortest first segment accepted after a replanning handoff, s.
pub const MIN_HANDOFF_SEGMENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("at least two waypoints are required, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {index} and {next} are closer than {MIN_SEPARATION} m")]
    CoincidentWaypoints { index: usize, next: usize },
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("segment times must be strictly increasing and match the waypoints")]
    InvalidTimes,
    #[error("planar speed {speed} m/s at t = {t} s is too low to linearize curvature")]
    Singularity { t: f64, speed: f64 },
    #[error("QP solver stopped with status {}", .0.status.as_str())]
    SolveFailed(PlanDiagnostics),
    #[error("handoff time {handoff} s is too close to the trajectory end {end} s")]
    HandoffTooLate { handoff: f64, end: f64 },
    #[error("replan needs one waypoint per remaining segment ({expected}), got {got}")]
    WaypointMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Bernstein(#[from] BernsteinError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub degree: usize,
    pub cruise_speed: f64,
    /// Floor on the velocity control points projected on the direction of
    /// the linearization trajectory; 0 disables it.
    pub v_min: f64,
    /// Per-axis bound on velocity control points; infinite disables it.
    pub v_max: f64,
    /// Per-axis bound on acceleration control points; infinite disables it.
    pub a_max: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub n_curv_samples: usize,
    pub continuity_order: usize,
    pub qp: QpSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            degree: 7,
            cruise_speed: 14.0,
            v_min: 1.0,
            v_max: 20.0,
            a_max: 8.0,
            kappa_min: -0.025,
            kappa_max: 0.025,
            n_curv_samples: 20,
            continuity_order: 3,
            qp: QpSettings::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.degree < 3 {
            return Err(PlannerError::InvalidConfig("degree must be at least 3 for a jerk cost"));
        }
        if self.degree > 12 {
            return Err(PlannerError::InvalidConfig("degree must not exceed 12"));
        }
        if self.continuity_order >= self.degree {
            return Err(PlannerError::InvalidConfig("continuity order must be below the degree"));
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed.is_finite()) {
            return Err(PlannerError::InvalidConfig("cruise speed must be positive"));
        }
        if !(self.v_min >= 0.0) || !(self.v_max > 0.0) || !(self.a_max > 0.0) {
            return Err(PlannerError::InvalidConfig("speed and acceleration bounds must be positive"));
        }
        if self.v_min > self.v_max {
            return Err(PlannerError::InvalidConfig("v_min exceeds v_max"));
        }
        if !(self.kappa_min <= self.kappa_max) {
            return Err(PlannerError::InvalidConfig("kappa_min exceeds kappa_max"));
        }
        if self.n_curv_samples == 0 && self.has_curvature_bounds() {
            return Err(PlannerError::InvalidConfig("curvature bounds need collocation samples"));
        }
        Ok(())
    }

    fn has_curvature_bounds(&self) -> bool {
        self.kappa_min.is_finite() || self.kappa_max.is_finite()
    }

    fn block(&self) -> usize {
        3 * (self.degree + 1)
    }

    fn var(&self, segment: usize, axis: usize, point: usize) -> usize {
        segment * self.block() + axis * (self.degree + 1) + point
    }
}

/// Position, velocity and acceleration at a trajectory end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSequence {
    waypoints: Vec<Vector3<f64>>,
    start: BoundaryState,
    end: BoundaryState,
}

impl WaypointSequence {
    pub fn new(
        waypoints: Vec<Vector3<f64>>,
        start_velocity: Vector3<f64>,
        start_acceleration: Vector3<f64>,
        end_velocity: Vector3<f64>,
        end_acceleration: Vector3<f64>,
    ) -> Result<Self, PlannerError> {
        if waypoints.len() < 2 {
            return Err(PlannerError::TooFewWaypoints(waypoints.len()));
        }
        for (index, w) in waypoints.windows(2).enumerate() {
            if !((w[1] - w[0]).norm() >= MIN_SEPARATION) {
                return Err(PlannerError::CoincidentWaypoints { index, next: index + 1 });
            }
        }
        let start = BoundaryState {
            position: waypoints[0],
            velocity: start_velocity,
            acceleration: start_acceleration,
        };
        let end = BoundaryState {
            position: waypoints[waypoints.len() - 1],
            velocity: end_velocity,
            acceleration: end_acceleration,
        };
        Ok(Self { waypoints, start, end })
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }

    pub fn start(&self) -> &BoundaryState {
        &self.start
    }

    pub fn end(&self) -> &BoundaryState {
        &self.end
    }

    pub fn segment_count(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.waypoints.iter_mut().for_each(|w| *w += offset);
        out.start.position += offset;
        out.end.position += offset;
        out
    }
}

/// Segment boundary times `[t0, T_1, …, T_M]`, one segment per waypoint pair,
/// each lasting its chord length over the cruise speed.
pub fn allocate_times(
    wps: &WaypointSequence,
    cruise_speed: f64,
    t0: f64,
) -> Result<Vec<f64>, PlannerError> {
    if !(cruise_speed > 0.0) {
        return Err(PlannerError::InvalidConfig("cruise speed must be positive"));
    }
    let mut times = Vec::with_capacity(wps.waypoints.len());
    times.push(t0);
    let mut t = t0;
    for w in wps.waypoints.windows(2) {
        t += (w[1] - w[0]).norm() / cruise_speed;
        times.push(t);
    }
    Ok(times)
}

fn check_times(times: &[f64], segments: usize) -> Result<(), PlannerError> {
    if times.len() != segments + 1 || times.windows(2).any(|w| !(w[1] - w[0] >= 1e-6)) {
        return Err(PlannerError::InvalidTimes);
    }
    Ok(())
}

/// Quadratic form with `pᵀQp = ∫‖x⁽³⁾‖² dt` over all segments.
pub fn build_cost(config: &PlannerConfig, times: &[f64]) -> Result<SparseMatrix, PlannerError> {
    if config.degree < 3 {
        return Err(PlannerError::InvalidConfig("degree must be at least 3 for a jerk cost"));
    }
    let n = config.degree;
    let segments = times.len().saturating_sub(1);
    let mut triplets = Vec::new();
    for j in 0..segments {
        let duration = times[j + 1] - times[j];
        let d3 = DifferenceMatrix::new(n, 3, duration)?;
        let g = gram_matrix(n - 3, duration)?;
        let block = d3.matrix() * g * d3.matrix().transpose();
        for axis in 0..3 {
            for r in 0..=n {
                for c in 0..=n {
                    let v = block[(r, c)];
                    if v != 0.0 {
                        triplets.push((config.var(j, axis, r), config.var(j, axis, c), v));
                    }
                }
            }
        }
    }
    let size = segments * config.block();
    Ok(SparseMatrix::from_triplets(size, size, &triplets))
}

/// Linear constraint rows `lower <= A p <= upper` with local row numbering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintRows {
    pub entries: Vec<(usize, usize, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConstraintRows {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn push(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, lower: f64, upper: f64) {
        let row = self.len();
        self.entries.extend(coeffs.into_iter().filter(|&(_, v)| v != 0.0).map(|(c, v)| (row, c, v)));
        self.lower.push(lower);
        self.upper.push(upper);
    }

    fn push_eq(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, value: f64) {
        self.push(coeffs, value, value);
    }

    fn append(&mut self, other: ConstraintRows) {
        let offset = self.len();
        self.entries.extend(other.entries.into_iter().map(|(r, c, v)| (r + offset, c, v)));
        self.lower.extend(other.lower);
        self.upper.extend(other.upper);
    }

    /// `A p` for a full coefficient vector.
    pub fn apply(&self, p: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for &(r, c, v) in &self.entries {
            out[r] += v * p[c];
        }
        out
    }
}

fn derivative_row(
    config: &PlannerConfig,
    segment: usize,
    axis: usize,
    order: usize,
    duration: f64,
    u: f64,
) -> Result<Vec<(usize, f64)>, PlannerError> {
    let w = derivative_weights(config.degree, order, duration, u)?;
    Ok(w.into_iter().enumerate().map(|(i, v)| (config.var(segment, axis, i), v)).collect())
}

/// Position, velocity and acceleration at both ends plus position at every
/// interior waypoint.
pub fn build_endpoint_constraints(
    wps: &WaypointSequence,
    config: &PlannerConfig,
    times: &[f64],
) -> Result<ConstraintRows, PlannerError> {
    let m = wps.segment_count();
    check_times(times, m)?;
    let mut rows = ConstraintRows::default();
    let first = times[1] - times[0];
    let last = times[m] - times[m - 1];
    let ends = [(0, first, 0.0, &wps.start), (m - 1, last, 1.0, &wps.end)];
    for (segment, duration, u, state) in ends {
        let targets = [state.position, state.velocity, state.acceleration];
        for (order, target) in targets.iter().enumerate() {
            for axis in 0..3 {
                rows.push_eq(derivative_row(config, segment, axis, order, duration, u)?, target[axis]);
            }
        }
    }
    for j in 0..m - 1 {
        for axis in 0..3 {
            rows.push_eq([(config.var(j, axis, config.degree), 1.0)], wps.waypoints[j + 1][axis]);
        }
    }
    Ok(rows)
}

/// Equal derivatives of orders `0..=continuity_order` across each junction.
pub fn build_continuity_constraints(
    config: &PlannerConfig,
    times: &[f64],
) -> Result<ConstraintRows, PlannerError> {
    if config.continuity_order >= config.degree {
        return Err(PlannerError::InvalidConfig("continuity order must be below the degree"));
    }
    let mut rows = ConstraintRows::default();
    let segments = times.len().saturating_sub(1);
    for j in 0..segments.saturating_sub(1) {
        let (ta, tb) = (times[j + 1] - times[j], times[j + 2] - times[j + 1]);
        for order in 0..=config.continuity_order {
            for axis in 0..3 {
                let left = derivative_row(config, j, axis, order, ta, 1.0)?;
                let right = derivative_row(config, j + 1, axis, order, tb, 0.0)?;
                rows.push_eq(left.into_iter().chain(right.into_iter().map(|(c, v)| (c, -v))), 0.0);
            }
        }
    }
    Ok(rows)
}

/// Trajectory that curvature and speed-floor constraints are linearized about.
#[derive(Debug, Clone, Copy)]
pub enum Linearization<'a> {
    /// Straight segments between waypoints traversed at constant speed.
    Polyline { waypoints: &'a [Vector3<f64>], times: &'a [f64] },
    Trajectory(&'a PiecewiseTrajectory),
}

impl Linearization<'_> {
    /// Velocity and acceleration at `t`, clamped into the domain.
    pub fn velocity_acceleration(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Linearization::Polyline { waypoints, times } => {
                let last = times.len() - 2;
                let j = times[1..].partition_point(|&tj| tj <= t).min(last);
                let v = (waypoints[j + 1] - waypoints[j]) / (times[j + 1] - times[j]);
                (v, Vector3::zeros())
            }
            Linearization::Trajectory(traj) => {
                let tc = t.clamp(traj.start_time(), traj.end_time());
                let s = traj.eval(tc).expect("time clamped into the domain");
                (s.velocity, s.acceleration)
            }
        }
    }
}

/// Hull bounds on velocity and acceleration control points, and the floor on
/// velocity control points along the linearization direction.
pub fn build_derivative_bounds(
    config: &PlannerConfig,
    times: &[f64],
    lin: &Linearization<'_>,
) -> Result<ConstraintRows, PlannerError> {
    if config.v_min > config.v_max {
        return Err(PlannerError::InvalidConfig("v_min exceeds v_max"));
    }
    let n = config.degree;
    let mut rows = ConstraintRows::default();
    for j in 0..times.len().saturating_sub(1) {
        let duration = times[j + 1] - times[j];
        let d1 = DifferenceMatrix::new(n, 1, duration)?;
        let d2 = DifferenceMatrix::new(n, 2, duration)?;
        let column = |d: &DifferenceMatrix, axis: usize, k: usize| {
            (0..=n)
                .map(move |i| (config.var(j, axis, i), d.matrix()[(i, k)]))
                .collect::<Vec<_>>()
        };
        if config.v_max.is_finite() {
            for k in 0..n {
                for axis in 0..3 {
                    rows.push(column(&d1, axis, k), -config.v_max, config.v_max);
                }
            }
        }
        if config.v_min > 0.0 {
            for k in 0..n {
                let t = times[j] + duration * k as f64 / (n - 1) as f64;
                let (v, _) = lin.velocity_acceleration(t);
                let norm = v.norm();
                if norm < V_EPS {
                    return Err(PlannerError::Singularity { t, speed: norm });
                }
                let dir = v / norm;
                let coeffs: Vec<_> =
                    (0..3).flat_map(|axis| column(&d1, axis, k).into_iter().map(move |(c, w)| (c, w * dir[axis]))).collect();
                rows.push(coeffs, config.v_min, f64::INFINITY);
            }
        }
        if config.a_max.is_finite() {
            for k in 0..n - 1 {
                for axis in 0..3 {
                    rows.push(column(&d2, axis, k), -config.a_max, config.a_max);
                }
            }
        }
    }
    Ok(rows)
}

/// Planar curvature `(ẋÿ − ẏẍ)/(ẋ² + ẏ²)^{3/2}` and its gradient with
/// respect to `(ẋ, ẏ, ẍ, ÿ)`.
pub fn curvature(v: &Vector2<f64>, a: &Vector2<f64>) -> Result<(f64, [f64; 4]), PlannerError> {
    let s2 = v.norm_squared();
    let s = math::sqrt(s2);
    if !(s >= V_EPS) {
        return Err(PlannerError::Singularity { t: f64::NAN, speed: s });
    }
    let s3 = s2 * s;
    let s5 = s3 * s2;
    let num = v.x * a.y - v.y * a.x;
    let kappa = num / s3;
    let grad = [
        a.y / s3 - 3.0 * num * v.x / s5,
        -a.x / s3 - 3.0 * num * v.y / s5,
        -v.y / s3,
        v.x / s3,
    ];
    Ok((kappa, grad))
}

/// Collocation parameters `(k + ½)/N` inside each segment.
fn collocation(samples: usize) -> impl Iterator<Item = f64> {
    (0..samples).map(move |k| (k as f64 + 0.5) / samples as f64)
}

/// First-order curvature bounds at the collocation points, linearized about
/// `lin` at the same times.
pub fn build_curvature_constraints(
    lin: &Linearization<'_>,
    config: &PlannerConfig,
    times: &[f64],
) -> Result<ConstraintRows, PlannerError> {
    let mut rows = ConstraintRows::default();
    if !config.has_curvature_bounds() {
        return Ok(rows);
    }
    for j in 0..times.len().saturating_sub(1) {
        let duration = times[j + 1] - times[j];
        for u in collocation(config.n_curv_samples) {
            let t = times[j] + u * duration;
            let (v0, a0) = lin.velocity_acceleration(t);
            let (kappa0, grad) = curvature(&v0.xy(), &a0.xy()).map_err(|e| match e {
                PlannerError::Singularity { speed, .. } => PlannerError::Singularity { t, speed },
                other => other,
            })?;
            let z0 = [v0.x, v0.y, a0.x, a0.y];
            let offset: f64 = grad.iter().zip(&z0).map(|(g, z)| g * z).sum();
            let mut coeffs = Vec::with_capacity(4 * (config.degree + 1));
            for (k, (order, axis)) in [(1, 0), (1, 1), (2, 0), (2, 1)].into_iter().enumerate() {
                for (c, w) in derivative_row(config, j, axis, order, duration, u)? {
                    coeffs.push((c, w * grad[k]));
                }
            }
            rows.push(coeffs, config.kappa_min - kappa0 + offset, config.kappa_max - kappa0 + offset);
        }
    }
    Ok(rows)
}

/// The assembled QP in coordinates relative to `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    pub qp: QpProblem,
    pub origin: Vector3<f64>,
    pub times: Vec<f64>,
    pub degree: usize,
    pub equality_rows: usize,
}

/// Builds cost and all constraint families for a plan over `times`.
pub fn build_problem(
    wps: &WaypointSequence,
    times: &[f64],
    config: &PlannerConfig,
    lin: &Linearization<'_>,
) -> Result<PlanProblem, PlannerError> {
    config.validate()?;
    check_times(times, wps.segment_count())?;
    let origin = wps.waypoints[0];
    let local = wps.translated(&-origin);
    let cost = build_cost(config, times)?;
    let mut rows = build_endpoint_constraints(&local, config, times)?;
    rows.append(build_continuity_constraints(config, times)?);
    let equality_rows = rows.len();
    rows.append(build_derivative_bounds(config, times, lin)?);
    rows.append(build_curvature_constraints(lin, config, times)?);
    let nvar = cost.nrows();
    let a = SparseMatrix::from_triplets(rows.len(), nvar, &rows.entries);
    let qp = QpProblem::new(
        cost,
        DVector::zeros(nvar),
        a,
        DVector::from_vec(rows.lower),
        DVector::from_vec(rows.upper),
    )?;
    Ok(PlanProblem { qp, origin, times: times.to_vec(), degree: config.degree, equality_rows })
}

/// Control points of `traj` stacked in the planner's variable order,
/// relative to `origin`.
pub fn coefficients(traj: &PiecewiseTrajectory, origin: &Vector3<f64>) -> DVector<f64> {
    let mut out = Vec::new();
    for seg in traj.segments() {
        for axis in 0..3 {
            out.extend(seg.control_points().iter().map(|p| p[axis] - origin[axis]));
        }
    }
    DVector::from_vec(out)
}

/// `∫‖x⁽³⁾‖² dt` of a trajectory, exact for polynomial segments.
pub fn jerk_cost(traj: &PiecewiseTrajectory) -> Result<f64, PlannerError> {
    let mut total = 0.0;
    for seg in traj.segments() {
        let n = seg.degree();
        if n < 3 {
            continue;
        }
        let jerk = seg.derivative(3)?;
        let g = gram_matrix(n - 3, seg.duration())?;
        for axis in 0..3 {
            let c = DVector::from_iterator(n - 2, jerk.control_points().iter().map(|p| p[axis]));
            total += c.dot(&(&g * &c));
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanDiagnostics {
    pub status: QpStatus,
    pub iterations: usize,
    /// `∫‖x⁽³⁾‖² dt` of the returned trajectory.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub variables: usize,
    pub constraints: usize,
    pub polished: bool,
    pub solve_time: f64,
}

impl PlanDiagnostics {
    fn from_solution(sol: &QpSolution, problem: &PlanProblem) -> Self {
        Self {
            status: sol.status,
            iterations: sol.iterations,
            objective: 2.0 * sol.objective,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            variables: problem.qp.num_variables(),
            constraints: problem.qp.num_constraints(),
            polished: sol.polished,
            solve_time: sol.solve_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub trajectory: PiecewiseTrajectory,
    pub diagnostics: PlanDiagnostics,
    pub solution: QpSolution,
}

/// Plans starting at `t = 0` with times from [`allocate_times`]. Curvature
/// is linearized about `prev` when given, otherwise about the waypoint
/// polyline.
pub fn plan(
    wps: &WaypointSequence,
    config: &PlannerConfig,
    prev: Option<&PiecewiseTrajectory>,
) -> Result<PlanOutput, PlannerError> {
    let times = allocate_times(wps, config.cruise_speed, 0.0)?;
    plan_with_times(wps, &times, config, prev, None)
}

pub fn plan_with_times(
    wps: &WaypointSequence,
    times: &[f64],
    config: &PlannerConfig,
    prev: Option<&PiecewiseTrajectory>,
    warm_start: Option<WarmStart>,
) -> Result<PlanOutput, PlannerError> {
    let lin = match prev {
        Some(traj) => Linearization::Trajectory(traj),
        None => Linearization::Polyline { waypoints: wps.waypoints(), times },
    };
    let problem = build_problem(wps, times, config, &lin)?;
    solve_problem(wps, &problem, config, warm_start)
}

/// Solves an assembled problem and converts the result to a trajectory.
pub fn solve_problem(
    wps: &WaypointSequence,
    problem: &PlanProblem,
    config: &PlannerConfig,
    warm_start: Option<WarmStart>,
) -> Result<PlanOutput, PlannerError> {
    let mut settings = config.qp.clone();
    settings.warm_start = warm_start.filter(|w| {
        w.x.len() == problem.qp.num_variables() && w.y.len() == problem.qp.num_constraints()
    });
    let solution = qp::solve(&problem.qp, &settings)?;
    let mut diagnostics = PlanDiagnostics::from_solution(&solution, problem);
    if solution.status != QpStatus::Solved {
        return Err(PlannerError::SolveFailed(diagnostics));
    }
    let trajectory = to_trajectory(wps, problem, &solution.x)?;
    diagnostics.objective = jerk_cost(&trajectory)?;
    Ok(PlanOutput { trajectory, diagnostics, solution })
}

/// Rebuilds segments from the solution, snapping the pinned junction control
/// points onto the waypoints so consecutive segments meet exactly.
fn to_trajectory(
    wps: &WaypointSequence,
    problem: &PlanProblem,
    x: &DVector<f64>,
) -> Result<PiecewiseTrajectory, PlannerError> {
    let n = problem.degree;
    debug_assert!(n <= MAX_DEGREE);
    let block = 3 * (n + 1);
    let m = wps.segment_count();
    let mut segments = Vec::with_capacity(m);
    for j in 0..m {
        let mut points: Vec<Vector3<f64>> = (0..=n)
            .map(|i| {
                Vector3::new(x[j * block + i], x[j * block + n + 1 + i], x[j * block + 2 * (n + 1) + i])
                    + problem.origin
            })
            .collect();
        points[0] = if j == 0 { wps.start.position } else { wps.waypoints[j] };
        points[n] = wps.waypoints[j + 1];
        segments.push(BernsteinSegment::new(points, problem.times[j], problem.times[j + 1])?);
    }
    Ok(PiecewiseTrajectory::new(segments)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanOutput {
    pub plan: PlanOutput,
    pub handoff_time: f64,
    /// End waypoint of every segment of the new trajectory.
    pub waypoints: Vec<Vector3<f64>>,
}

/// Replans from the state `current` will have at `t_now + t_opt_est`,
/// keeping the remaining junction times and linearizing about `current`.
///
/// `waypoints[j]` is the end point of segment `j` of `current`. A remaining
/// first segment shorter than [`MIN_HANDOFF_SEGMENT`] is merged with the
/// next one, dropping the waypoint that is about to be passed.
pub fn replan(
    current: &PiecewiseTrajectory,
    waypoints: &[Vector3<f64>],
    t_now: f64,
    t_opt_est: f64,
    end: &BoundaryState,
    config: &PlannerConfig,
    warm_start: Option<WarmStart>,
) -> Result<ReplanOutput, PlannerError> {
    if waypoints.len() != current.segment_count() {
        return Err(PlannerError::WaypointMismatch {
            expected: current.segment_count(),
            got: waypoints.len(),
        });
    }
    let handoff = t_now + t_opt_est.max(0.0);
    let end_time = current.end_time();
    if !(handoff + MIN_HANDOFF_SEGMENT <= end_time) {
        return Err(PlannerError::HandoffTooLate { handoff, end: end_time });
    }
    let junctions = current.junction_times();
    let mut k = current.segment_index(handoff)?;
    if junctions[k] - handoff < MIN_HANDOFF_SEGMENT {
        k += 1;
    }
    let state = current.eval(handoff)?;
    let mut points = Vec::with_capacity(waypoints.len() - k + 1);
    points.push(state.position);
    points.extend_from_slice(&waypoints[k..]);
    let mut times = Vec::with_capacity(points.len());
    times.push(handoff);
    times.extend_from_slice(&junctions[k..]);

    let wps = WaypointSequence::new(
        points,
        state.velocity,
        state.acceleration,
        end.velocity,
        end.acceleration,
    )?;
    let plan = plan_with_times(&wps, &times, config, Some(current), warm_start)?;
    Ok(ReplanOutput { plan, handoff_time: handoff, waypoints: waypoints[k..].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn straight() -> WaypointSequence {
        let v = Vector3::new(14.0, 0.0, 0.0);
        WaypointSequence::new(
            vec![Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)],
            v,
            Vector3::zeros(),
            v,
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn times_follow_distance() {
        let wps = WaypointSequence::new(
            vec![Vector3::zeros(), Vector3::new(140.0, 0.0, 0.0), Vector3::new(280.0, 0.0, 0.0)],
            Vector3::x(),
            Vector3::zeros(),
            Vector3::x(),
            Vector3::zeros(),
        )
        .unwrap();
        let t = allocate_times(&wps, 14.0, 0.0).unwrap();
        assert_eq!(t, vec![0.0, 10.0, 20.0]);
        let t2 = allocate_times(&wps, 28.0, 0.0).unwrap();
        assert_eq!(t2, vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn rejects_bad_sequences() {
        let z = Vector3::zeros();
        assert!(matches!(
            WaypointSequence::new(vec![z], z, z, z, z),
            Err(PlannerError::TooFewWaypoints(1))
        ));
        assert!(matches!(
            WaypointSequence::new(vec![z, Vector3::new(0.5, 0.0, 0.0)], z, z, z, z),
            Err(PlannerError::CoincidentWaypoints { .. })
        ));
    }

    #[test]
    fn straight_line_has_zero_jerk() {
        let out = plan(&straight(), &PlannerConfig::default(), None).unwrap();
        assert!(out.diagnostics.objective < 1e-8, "{}", out.diagnostics.objective);
        for k in 0..=20 {
            let t = k as f64 * out.trajectory.end_time() / 20.0;
            let s = out.trajectory.eval(t).unwrap();
            assert!((s.position - Vector3::new(14.0 * t, 0.0, 0.0)).norm() < 1e-4);
        }
    }

    #[test]
    fn curvature_examples() {
        let (k, _) = curvature(&Vector2::new(14.0, 0.0), &Vector2::new(0.0, 14.0 * 14.0 / 45.0)).unwrap();
        assert_relative_eq!(k, 1.0 / 45.0, epsilon = 1e-15);
        assert_eq!(curvature(&Vector2::new(14.0, 0.0), &Vector2::zeros()).unwrap().0, 0.0);
        assert!(curvature(&Vector2::new(0.1, 0.0), &Vector2::zeros()).is_err());
    }

    #[test]
    fn unbounded_config_emits_no_bound_rows() {
        let config = PlannerConfig {
            v_min: 0.0,
            v_max: f64::INFINITY,
            a_max: f64::INFINITY,
            ..Default::default()
        };
        let wps = straight();
        let times = allocate_times(&wps, 14.0, 0.0).unwrap();
        let lin = Linearization::Polyline { waypoints: wps.waypoints(), times: &times };
        assert!(build_derivative_bounds(&config, &times, &lin).unwrap().is_empty());
        assert!(build_continuity_constraints(&config, &times).unwrap().is_empty());
    }
}
