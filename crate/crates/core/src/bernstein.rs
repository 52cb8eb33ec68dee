//! Bernstein polynomial segments and piecewise trajectories.
//!
//! A segment of degree `n` on `[t0, tf]` is `Σ p_i β^n_i(u)` with local time
//! `u = (t - t0) / (tf - t0)`. Evaluation uses de Casteljau; derivatives are
//! obtained through the forward-difference map on control points.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Vector3};

use crate::flatness::FlatState;

/// Highest supported segment degree.
pub const MAX_DEGREE: usize = 20;

/// Shortest admissible segment duration in seconds.
pub const MIN_DURATION: f64 = 1e-6;

/// Largest admissible position gap between consecutive segments, in meters.
pub const JUNCTION_TOLERANCE: f64 = 1e-9;

const BINOMIAL_ROWS: usize = 2 * MAX_DEGREE + 1;

const fn binomial_table() -> [[f64; BINOMIAL_ROWS]; BINOMIAL_ROWS] {
    let mut table = [[0.0; BINOMIAL_ROWS]; BINOMIAL_ROWS];
    let mut n = 0;
    while n < BINOMIAL_ROWS {
        table[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            table[n][k] = table[n - 1][k - 1] + if k < n { table[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    table
}

static BINOMIAL: [[f64; BINOMIAL_ROWS]; BINOMIAL_ROWS] = binomial_table();

/// Binomial coefficient `C(n, k)` as a float, exact for `n <= 2 * MAX_DEGREE`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    BINOMIAL[n][k]
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum BernsteinError {
    #[error("basis index {index} out of range for degree {degree}")]
    IndexOutOfRange { index: usize, degree: usize },
    #[error("normalized time {0} outside [0, 1]")]
    NormalizedTimeOutOfRange(f64),
    #[error("degree {0} exceeds the supported maximum of {MAX_DEGREE}")]
    DegreeTooLarge(usize),
    #[error("a segment needs at least one control point")]
    NoControlPoints,
    #[error("segment duration {0} s is below the {MIN_DURATION} s minimum")]
    DegenerateDuration(f64),
    #[error("time {t} s outside the domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("derivative order {order} exceeds degree {degree}")]
    OrderTooHigh { order: usize, degree: usize },
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("trajectory has no segments")]
    EmptyTrajectory,
    #[error("segments {index} and {next} are not contiguous in time")]
    TimeGap { index: usize, next: usize },
    #[error("position jump of {gap} m between segments {index} and {next}")]
    PositionGap { index: usize, next: usize, gap: f64 },
    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),
}

/// Bernstein basis polynomial `C(n, i) u^i (1 - u)^(n - i)`.
pub fn basis_eval(n: usize, i: usize, u: f64) -> Result<f64, BernsteinError> {
    if n > MAX_DEGREE {
        return Err(BernsteinError::DegreeTooLarge(n));
    }
    if i > n {
        return Err(BernsteinError::IndexOutOfRange { index: i, degree: n });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(BernsteinError::NormalizedTimeOutOfRange(u));
    }
    Ok(basis_unchecked(n, i, u))
}

fn basis_unchecked(n: usize, i: usize, u: f64) -> f64 {
    // Integer powers by repeated multiplication; no cancellation for u in [0, 1].
    let mut value = binomial(n, i);
    for _ in 0..i {
        value *= u;
    }
    let v = 1.0 - u;
    for _ in i..n {
        value *= v;
    }
    value
}

/// All `n + 1` basis values at `u`.
fn basis_all(n: usize, u: f64, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate().take(n + 1) {
        *slot = basis_unchecked(n, i, u);
    }
}

/// Signed `k`-th forward-difference stencil: `(-1)^(k-m) C(k, m)` for `m = 0..=k`.
fn difference_stencil(k: usize) -> Vec<f64> {
    (0..=k)
        .map(|m| {
            let sign = if (k - m) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k, m)
        })
        .collect()
}

/// `n! / (n - k)! / duration^k`.
fn derivative_scale(n: usize, k: usize, duration: f64) -> f64 {
    let mut scale = 1.0;
    for j in 0..k {
        scale *= (n - j) as f64 / duration;
    }
    scale
}

/// Linear map from the control points of a degree-`n` segment to the control
/// points of its `k`-th time derivative: `p' = p · D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    order: usize,
    matrix: DMatrix<f64>,
}

impl DifferenceMatrix {
    pub fn new(degree: usize, order: usize, duration: f64) -> Result<Self, BernsteinError> {
        if duration <= 0.0 {
            return Err(BernsteinError::NonPositiveDuration(duration));
        }
        let mut d = Self::unscaled(degree, order)?;
        d.matrix *= derivative_scale(degree, order, duration);
        Ok(d)
    }

    /// The bare difference stencil, without the `n!/(n-k)!/T^k` factor.
    pub fn unscaled(degree: usize, order: usize) -> Result<Self, BernsteinError> {
        if degree > MAX_DEGREE {
            return Err(BernsteinError::DegreeTooLarge(degree));
        }
        if order > degree {
            return Err(BernsteinError::OrderTooHigh { order, degree });
        }
        let stencil = difference_stencil(order);
        let cols = degree + 1 - order;
        let mut matrix = DMatrix::zeros(degree + 1, cols);
        for j in 0..cols {
            for (m, &c) in stencil.iter().enumerate() {
                matrix[(j + m, j)] = c;
            }
        }
        Ok(Self { order, matrix })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        debug_assert_eq!(points.len(), self.matrix.nrows());
        (0..self.matrix.ncols())
            .map(|j| {
                points
                    .iter()
                    .enumerate()
                    .fold(Vector3::zeros(), |acc, (i, p)| acc + p * self.matrix[(i, j)])
            })
            .collect()
    }
}

/// Coefficients `w` such that the `k`-th derivative at local time `u` of a
/// degree-`n` segment with duration `duration` equals `Σ w_i p_i`.
pub fn derivative_weights(
    degree: usize,
    order: usize,
    duration: f64,
    u: f64,
) -> Result<Vec<f64>, BernsteinError> {
    if degree > MAX_DEGREE {
        return Err(BernsteinError::DegreeTooLarge(degree));
    }
    if order > degree {
        return Err(BernsteinError::OrderTooHigh { order, degree });
    }
    if duration <= 0.0 {
        return Err(BernsteinError::NonPositiveDuration(duration));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(BernsteinError::NormalizedTimeOutOfRange(u));
    }
    let reduced = degree - order;
    let mut basis = [0.0; MAX_DEGREE + 1];
    basis_all(reduced, u, &mut basis);
    let stencil = difference_stencil(order);
    let scale = derivative_scale(degree, order, duration);
    let mut weights = vec![0.0; degree + 1];
    for (j, &b) in basis.iter().enumerate().take(reduced + 1) {
        for (m, &c) in stencil.iter().enumerate() {
            weights[j + m] += scale * b * c;
        }
    }
    Ok(weights)
}

/// Gram matrix `G_ij = ∫ β^n_i β^n_j dt` over an interval of length `duration`.
pub fn gram_matrix(degree: usize, duration: f64) -> Result<DMatrix<f64>, BernsteinError> {
    if degree > MAX_DEGREE {
        return Err(BernsteinError::DegreeTooLarge(degree));
    }
    if duration <= 0.0 {
        return Err(BernsteinError::NonPositiveDuration(duration));
    }
    let n = degree;
    let denom_base = (2 * n + 1) as f64;
    Ok(DMatrix::from_fn(n + 1, n + 1, |i, j| {
        duration * binomial(n, i) * binomial(n, j) / (denom_base * binomial(2 * n, i + j))
    }))
}

/// One polynomial piece of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinSegment {
    points: Vec<Vector3<f64>>,
    t0: f64,
    tf: f64,
}

impl BernsteinSegment {
    pub fn new(points: Vec<Vector3<f64>>, t0: f64, tf: f64) -> Result<Self, BernsteinError> {
        if points.is_empty() {
            return Err(BernsteinError::NoControlPoints);
        }
        if points.len() > MAX_DEGREE + 1 {
            return Err(BernsteinError::DegreeTooLarge(points.len() - 1));
        }
        let duration = tf - t0;
        if !(duration >= MIN_DURATION) {
            return Err(BernsteinError::DegenerateDuration(duration));
        }
        Ok(Self { points, t0, tf })
    }

    pub fn degree(&self) -> usize {
        self.points.len() - 1
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    pub fn start_point(&self) -> Vector3<f64> {
        self.points[0]
    }

    pub fn end_point(&self) -> Vector3<f64> {
        self.points[self.points.len() - 1]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.tf
    }

    /// Value at time `t`; no extrapolation outside `[t0, tf]`.
    pub fn eval(&self, t: f64) -> Result<Vector3<f64>, BernsteinError> {
        if !self.contains(t) {
            return Err(BernsteinError::OutOfDomain { t, start: self.t0, end: self.tf });
        }
        Ok(self.eval_normalized(self.normalize(t)))
    }

    fn normalize(&self, t: f64) -> f64 {
        ((t - self.t0) / self.duration()).clamp(0.0, 1.0)
    }

    /// de Casteljau evaluation at local time `u` in `[0, 1]`.
    pub fn eval_normalized(&self, u: f64) -> Vector3<f64> {
        let n = self.degree();
        let mut work = [Vector3::zeros(); MAX_DEGREE + 1];
        work[..=n].copy_from_slice(&self.points);
        let v = 1.0 - u;
        for level in 1..=n {
            for i in 0..=n - level {
                work[i] = work[i] * v + work[i + 1] * u;
            }
        }
        work[0]
    }

    /// The `k`-th time derivative as a segment of degree `n - k`.
    pub fn derivative(&self, order: usize) -> Result<Self, BernsteinError> {
        let n = self.degree();
        if order > n {
            return Err(BernsteinError::OrderTooHigh { order, degree: n });
        }
        let d = DifferenceMatrix::new(n, order, self.duration())?;
        Ok(Self { points: d.apply(&self.points), t0: self.t0, tf: self.tf })
    }

    /// Arc length from the polyline through `n_samples` equally spaced
    /// parameter values. Refining a sample set that contains the previous
    /// one never decreases the result.
    pub fn arc_length(&self, n_samples: usize) -> Result<f64, BernsteinError> {
        if n_samples < 2 {
            return Err(BernsteinError::TooFewSamples(n_samples));
        }
        let mut length = 0.0;
        let mut prev = self.points[0];
        for k in 1..n_samples {
            let u = k as f64 / (n_samples - 1) as f64;
            let p = self.eval_normalized(u);
            length += (p - prev).norm();
            prev = p;
        }
        Ok(length)
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| p + offset).collect(),
            t0: self.t0,
            tf: self.tf,
        }
    }
}

/// Free-function form of [`BernsteinSegment::eval`].
pub fn eval_segment(seg: &BernsteinSegment, t: f64) -> Result<Vector3<f64>, BernsteinError> {
    seg.eval(t)
}

/// Free-function form of [`BernsteinSegment::derivative`].
pub fn derivative_segment(
    seg: &BernsteinSegment,
    order: usize,
) -> Result<BernsteinSegment, BernsteinError> {
    seg.derivative(order)
}

/// Free-function form of [`BernsteinSegment::arc_length`].
pub fn arc_length(seg: &BernsteinSegment, n_samples: usize) -> Result<f64, BernsteinError> {
    seg.arc_length(n_samples)
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    position: BernsteinSegment,
    // First three derivatives; `None` once the degree is exhausted.
    derivatives: [Option<BernsteinSegment>; 3],
}

impl Piece {
    fn new(position: BernsteinSegment) -> Self {
        let derivative = |k| position.derivative(k).ok();
        let derivatives = [derivative(1), derivative(2), derivative(3)];
        Self { position, derivatives }
    }

    fn eval(&self, t: f64) -> FlatState {
        let u = self.position.normalize(t);
        let d = |k: usize| {
            self.derivatives[k]
                .as_ref()
                .map_or_else(Vector3::zeros, |s| s.eval_normalized(u))
        };
        FlatState {
            position: self.position.eval_normalized(u),
            velocity: d(0),
            acceleration: d(1),
            jerk: d(2),
        }
    }
}

/// Segments stacked end to end in time.
///
/// A query exactly at an interior junction time belongs to the later segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    pieces: Vec<Piece>,
}

impl PiecewiseTrajectory {
    pub fn new(segments: Vec<BernsteinSegment>) -> Result<Self, BernsteinError> {
        if segments.is_empty() {
            return Err(BernsteinError::EmptyTrajectory);
        }
        for (index, pair) in segments.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.tf != b.t0 {
                return Err(BernsteinError::TimeGap { index, next: index + 1 });
            }
            let gap = (a.end_point() - b.start_point()).norm();
            if !(gap <= JUNCTION_TOLERANCE) {
                return Err(BernsteinError::PositionGap { index, next: index + 1, gap });
            }
        }
        Ok(Self { pieces: segments.into_iter().map(Piece::new).collect() })
    }

    pub fn segment_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn segments(&self) -> impl ExactSizeIterator<Item = &BernsteinSegment> + '_ {
        self.pieces.iter().map(|p| &p.position)
    }

    pub fn segment(&self, index: usize) -> Option<&BernsteinSegment> {
        self.pieces.get(index).map(|p| &p.position)
    }

    pub fn start_time(&self) -> f64 {
        self.pieces[0].position.t0
    }

    pub fn end_time(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].position.tf
    }

    /// End times `T_1 … T_M` of every segment.
    pub fn junction_times(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.position.tf).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_time() && t <= self.end_time()
    }

    /// Index of the segment that owns time `t`.
    pub fn segment_index(&self, t: f64) -> Result<usize, BernsteinError> {
        if !self.contains(t) {
            return Err(BernsteinError::OutOfDomain {
                t,
                start: self.start_time(),
                end: self.end_time(),
            });
        }
        // First segment whose end lies strictly after t; the final end time
        // belongs to the last segment.
        let idx = self.pieces.partition_point(|p| p.position.tf <= t);
        Ok(idx.min(self.pieces.len() - 1))
    }

    /// Position and its first three derivatives at `t`.
    pub fn eval(&self, t: f64) -> Result<FlatState, BernsteinError> {
        let idx = self.segment_index(t)?;
        Ok(self.pieces[idx].eval(t))
    }

    /// Sum of polyline arc lengths over all segments.
    pub fn arc_length(&self, samples_per_segment: usize) -> Result<f64, BernsteinError> {
        self.segments().map(|s| s.arc_length(samples_per_segment)).sum()
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            pieces: self
                .pieces
                .iter()
                .map(|p| Piece::new(p.position.translated(offset)))
                .collect(),
        }
    }
}

/// Free-function form of [`PiecewiseTrajectory::eval`].
pub fn eval_piecewise(traj: &PiecewiseTrajectory, t: f64) -> Result<FlatState, BernsteinError> {
    traj.eval(t)
}
