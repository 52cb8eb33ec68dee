use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::ldl::{KktFactor, SkylineLdl};
use super::sparse::SparseMatrix;
use super::{kkt_residuals, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::math;

const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const POLISH_DELTA: f64 = 1e-7;
/// Change in the step-size estimate that triggers a refactorization.
const ADAPT_RATIO: f64 = 5.0;
const ADAPT_INTERVAL: usize = 25;

/// Problem data after Ruiz equilibration: `P̂ = c D P D`, `Â = E A D`.
struct Scaled {
    p: SparseMatrix,
    p_upper: SparseMatrix,
    q: Vec<f64>,
    a: SparseMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn clamp_scaling(v: f64) -> f64 {
    if v < SCALING_MIN * SCALING_MIN {
        1.0
    } else {
        v.clamp(SCALING_MIN, SCALING_MAX)
    }
}

fn equilibrate(prob: &QpProblem, iterations: usize) -> Scaled {
    let n = prob.num_variables();
    let m = prob.num_constraints();
    let mut p = prob.cost().clone();
    let mut a = prob.constraints().clone();
    let mut q: Vec<f64> = prob.linear().iter().copied().collect();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;

    for _ in 0..iterations {
        let p_norms = p.col_inf_norms();
        let a_norms = a.col_inf_norms();
        let d_step: Vec<f64> = p_norms
            .iter()
            .zip(&a_norms)
            .map(|(&pn, &an)| 1.0 / math::sqrt(clamp_scaling(pn.max(an))))
            .collect();
        let e_step: Vec<f64> =
            a.row_inf_norms().iter().map(|&rn| 1.0 / math::sqrt(clamp_scaling(rn))).collect();
        p.scale(&d_step, &d_step);
        a.scale(&e_step, &d_step);
        for i in 0..n {
            q[i] *= d_step[i];
            d[i] *= d_step[i];
        }
        for i in 0..m {
            e[i] *= e_step[i];
        }
        // cost scaling
        let p_norms = p.col_inf_norms();
        let mean_p = if n > 0 { p_norms.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let q_norm = q.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let gamma = 1.0 / clamp_scaling(mean_p.max(q_norm));
        p.scale_all(gamma);
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }

    let l = prob.lower().iter().zip(&e).map(|(&v, &s)| v * s).collect();
    let u = prob.upper().iter().zip(&e).map(|(&v, &s)| v * s).collect();
    let upper_triplets: Vec<_> = p.iter().filter(|&(r, col, _)| r <= col).collect();
    let p_upper = SparseMatrix::from_triplets(n, n, &upper_triplets);
    Scaled { p, p_upper, q, a, l, u, d, e, c }
}

fn check_settings(s: &QpSettings) -> Result<(), QpError> {
    if !(s.rho > 0.0) {
        return Err(QpError::InvalidSettings("rho must be positive"));
    }
    if !(s.sigma > 0.0) {
        return Err(QpError::InvalidSettings("sigma must be positive"));
    }
    if !(s.alpha > 0.0 && s.alpha < 2.0) {
        return Err(QpError::InvalidSettings("alpha must lie in (0, 2)"));
    }
    if !(s.eps_abs >= 0.0 && s.eps_rel >= 0.0) || s.eps_abs + s.eps_rel == 0.0 {
        return Err(QpError::InvalidSettings("tolerances must be non-negative and not both zero"));
    }
    if s.check_interval == 0 {
        return Err(QpError::InvalidSettings("check_interval must be at least 1"));
    }
    if !(s.equality_rho_scale >= 1.0) {
        return Err(QpError::InvalidSettings("equality_rho_scale must be at least 1"));
    }
    Ok(())
}

/// Factors `P + shift·I` to certify positive semi-definiteness.
fn check_psd(p: &SparseMatrix, sigma: f64) -> Result<(), QpError> {
    let n = p.nrows();
    let max_diag = (0..n)
        .map(|i| {
            let (cols, vals) = p.row(i);
            cols.iter().zip(vals).find(|(&c, _)| c == i).map_or(0.0, |(_, v)| v.abs())
        })
        .fold(1.0_f64, f64::max);
    let shift = sigma.max(1e-9 * max_diag);
    let mut entries: Vec<_> = p.iter().filter(|&(r, c, _)| r >= c).collect();
    entries.extend((0..n).map(|i| (i, i, shift)));
    SkylineLdl::factor(n, &entries, &vec![1.0; n])
        .map(|_| ())
        .map_err(|f| QpError::NotPositiveSemidefinite { pivot: f.index })
}

struct Tolerances {
    primal: f64,
    dual: f64,
}

fn tolerances(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, s: &QpSettings) -> Tolerances {
    let ax = prob.constraints().mul_vec(x);
    let ax_norm = ax.amax();
    let clamped_norm = ax
        .iter()
        .zip(prob.lower().iter().zip(prob.upper().iter()))
        .map(|(&v, (&l, &u))| v.clamp(l, u).abs())
        .fold(0.0, f64::max);
    let qx = prob.cost().mul_vec(x).amax();
    let aty = prob.constraints().tr_mul_vec(y).amax();
    let q = prob.linear().amax();
    Tolerances {
        primal: s.eps_abs + s.eps_rel * ax_norm.max(clamped_norm),
        dual: s.eps_abs + s.eps_rel * qx.max(aty).max(q),
    }
}

/// Row-wise primal test: each row's violation must be small relative to that
/// row's own magnitude, so rows with tiny bounds are not swamped by rows
/// measured in large units.
fn rows_feasible(prob: &QpProblem, x: &DVector<f64>, s: &QpSettings) -> bool {
    let ax = prob.constraints().mul_vec(x);
    ax.iter().zip(prob.lower().iter().zip(prob.upper().iter())).all(|(&v, (&l, &u))| {
        let c = v.clamp(l, u);
        (v - c).abs() <= s.eps_abs + s.eps_rel * v.abs().max(c.abs())
    })
}

/// Solves the QP with ADMM.
///
/// Returns an error only for malformed input or a non-PSD cost; running out
/// of iterations or detecting infeasibility is reported through the status.
pub fn solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    check_settings(settings)?;
    let n = prob.num_variables();
    let m = prob.num_constraints();
    if let Some(ws) = &settings.warm_start {
        if ws.x.len() != n || ws.y.len() != m {
            return Err(QpError::DimensionMismatch("warm start size differs from problem"));
        }
    }

    let sc = equilibrate(prob, settings.scaling_iterations);
    check_psd(&sc.p, settings.sigma)?;

    let rho_vector = |base: f64| -> Vec<f64> {
        (0..m)
            .map(|i| {
                if sc.l[i] == f64::NEG_INFINITY && sc.u[i] == f64::INFINITY {
                    RHO_MIN
                } else if prob.is_equality(i) {
                    base * settings.equality_rho_scale
                } else {
                    base
                }
            })
            .collect()
    };
    let all_rows: Vec<usize> = (0..m).collect();
    let factor = |rho: &[f64]| {
        let inv: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
        KktFactor::new(&sc.p_upper, settings.sigma, &sc.a, &all_rows, &inv)
            .map(|k| (k, inv))
            .map_err(|f| QpError::Factorization { pivot: f.index })
    };
    let mut rho_base = settings.rho;
    let mut rho = rho_vector(rho_base);
    let (mut kkt, mut inv_rho) = factor(&rho)?;

    // scaled iterates
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    if let Some(ws) = &settings.warm_start {
        for i in 0..n {
            x[i] = ws.x[i] / sc.d[i];
        }
        for i in 0..m {
            y[i] = sc.c * ws.y[i] / sc.e[i];
        }
        sc.a.mul_vec_into(&x, &mut z);
        for i in 0..m {
            z[i] = z[i].clamp(sc.l[i], sc.u[i]);
        }
    }

    let alpha = settings.alpha;
    let mut rx = vec![0.0; n];
    let mut rc = vec![0.0; m];
    let mut y_prev = vec![0.0; m];
    let mut best_primal = f64::INFINITY;
    let mut last_progress = 0usize;
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut early_polish = None;

    for k in 1..=settings.max_iter {
        iterations = k;
        let checking = k == 1 || k % settings.check_interval == 0 || k == settings.max_iter;
        if checking {
            y_prev.copy_from_slice(&y);
        }
        for i in 0..n {
            rx[i] = settings.sigma * x[i] - sc.q[i];
        }
        for i in 0..m {
            rc[i] = z[i] - inv_rho[i] * y[i];
        }
        kkt.solve(&mut rx, &mut rc);
        for i in 0..n {
            x[i] = alpha * rx[i] + (1.0 - alpha) * x[i];
        }
        for i in 0..m {
            let z_tilde = z[i] + inv_rho[i] * (rc[i] - y[i]);
            let z_relaxed = alpha * z_tilde + (1.0 - alpha) * z[i];
            let z_new = (z_relaxed + inv_rho[i] * y[i]).clamp(sc.l[i], sc.u[i]);
            y[i] += rho[i] * (z_relaxed - z_new);
            z[i] = z_new;
        }

        if !checking {
            continue;
        }
        let (xu, yu) = unscale(&sc, &x, &y);
        let (primal, dual) = kkt_residuals(prob, &xu, &yu)?;
        let tol = tolerances(prob, &xu, &yu, settings);
        if primal <= tol.primal && dual <= tol.dual && rows_feasible(prob, &xu, settings) {
            status = QpStatus::Solved;
            break;
        }
        // A polished point that passes the full KKT test is optimal, so try
        // it before the iterates themselves have converged.
        if settings.polish && k % ADAPT_INTERVAL == 0 && n > 0 {
            if let Some(found) = polish(prob, &sc, &z, &y, settings) {
                early_polish = Some(found);
                status = QpStatus::Solved;
                break;
            }
        }
        if settings.adaptive_rho && k % ADAPT_INTERVAL == 0 {
            let estimate = rho_estimate(&sc, &x, &z, &y, rho_base);
            if estimate > ADAPT_RATIO * rho_base || estimate < rho_base / ADAPT_RATIO {
                rho_base = estimate;
                rho = rho_vector(rho_base);
                (kkt, inv_rho) = factor(&rho)?;
            }
        }
        if primal < 0.99 * best_primal {
            best_primal = primal;
            last_progress = k;
        }
        if k - last_progress >= settings.stagnation_window
            && infeasibility_certificate(&sc, &y, &y_prev, settings.eps_infeasible)
        {
            status = QpStatus::PrimalInfeasible;
            break;
        }
    }

    let (mut xu, mut yu) = unscale(&sc, &x, &y);
    let mut polished = false;
    if let Some((xp, yp)) = early_polish {
        xu = xp;
        yu = yp;
        polished = true;
    } else if status == QpStatus::Solved && settings.polish && n > 0 {
        if let Some((xp, yp)) = polish(prob, &sc, &z, &y, settings) {
            xu = xp;
            yu = yp;
            polished = true;
        }
    }
    let (primal_residual, dual_residual) = kkt_residuals(prob, &xu, &yu)?;
    let tol = tolerances(prob, &xu, &yu, settings);
    let objective = prob.objective(&xu);
    Ok(QpSolution {
        x: xu,
        y: yu,
        status,
        iterations,
        primal_residual,
        dual_residual,
        primal_tolerance: tol.primal,
        dual_tolerance: tol.dual,
        objective,
        polished,
        solve_time: 0.0,
    })
}

/// Step size balancing the normalized scaled primal and dual residuals.
fn rho_estimate(sc: &Scaled, x: &[f64], z: &[f64], y: &[f64], rho: f64) -> f64 {
    let n = x.len();
    let m = z.len();
    let mut ax = vec![0.0; m];
    sc.a.mul_vec_into(x, &mut ax);
    let mut px = vec![0.0; n];
    sc.p.mul_vec_into(x, &mut px);
    let mut aty = vec![0.0; n];
    sc.a.tr_mul_vec_into(y, &mut aty);
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let primal = (0..m).fold(0.0_f64, |acc, i| acc.max((ax[i] - z[i]).abs()));
    let dual = (0..n).fold(0.0_f64, |acc, i| acc.max((px[i] + sc.q[i] + aty[i]).abs()));
    let primal_norm = inf(&ax).max(inf(z)).max(1e-12);
    let dual_norm = inf(&px).max(inf(&aty)).max(inf(&sc.q)).max(1e-12);
    let ratio = (primal / primal_norm) / (dual / dual_norm).max(1e-12);
    (rho * math::sqrt(ratio)).clamp(RHO_MIN, RHO_MAX)
}

fn unscale(sc: &Scaled, x: &[f64], y: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let xu = DVector::from_iterator(x.len(), x.iter().zip(&sc.d).map(|(v, d)| v * d));
    let yu = DVector::from_iterator(y.len(), y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.c));
    (xu, yu)
}

/// Farkas-type certificate on the dual step `δy`: `Aᵀδy ≈ 0` while
/// `uᵀ max(δy, 0) + lᵀ min(δy, 0) < 0`.
fn infeasibility_certificate(sc: &Scaled, y: &[f64], y_prev: &[f64], eps: f64) -> bool {
    let m = y.len();
    let dy: Vec<f64> = (0..m).map(|i| y[i] - y_prev[i]).collect();
    let norm = dy.iter().zip(&sc.e).fold(0.0_f64, |acc, (v, e)| acc.max((v * e).abs()));
    if norm <= 1e-12 {
        return false;
    }
    let threshold = eps * norm;
    let mut support = 0.0;
    for i in 0..m {
        let v = dy[i];
        if v * sc.e[i] > threshold {
            if sc.u[i] == f64::INFINITY {
                return false;
            }
            support += sc.u[i] * v;
        } else if v * sc.e[i] < -threshold {
            if sc.l[i] == f64::NEG_INFINITY {
                return false;
            }
            support += sc.l[i] * v;
        }
    }
    if !(support < -threshold) {
        return false;
    }
    let mut aty = vec![0.0; sc.d.len()];
    sc.a.tr_mul_vec_into(&dy, &mut aty);
    let aty_norm = aty.iter().zip(&sc.d).fold(0.0_f64, |acc, (v, d)| acc.max((v / d).abs()));
    aty_norm <= threshold
}

#[derive(Clone, Copy, PartialEq)]
enum Active {
    Lower,
    Upper,
    Equality,
}

/// Solves the equality-constrained KKT system on the guessed active set and
/// returns the unscaled `(x, y)` when it is at least as good as the ADMM
/// iterate and has consistent multiplier signs.
fn polish(
    prob: &QpProblem,
    sc: &Scaled,
    z: &[f64],
    y: &[f64],
    settings: &QpSettings,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = sc.d.len();
    let m = z.len();
    let mut rows = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..m {
        let lower = z[i] - sc.l[i] < -y[i];
        let upper = sc.u[i] - z[i] < y[i];
        let kind = if prob.is_equality(i) {
            Some(Active::Equality)
        } else if lower {
            Some(Active::Lower)
        } else if upper {
            Some(Active::Upper)
        } else {
            None
        };
        if let Some(kind) = kind {
            rows.push(i);
            kinds.push(kind);
        }
    }
    let deltas = vec![POLISH_DELTA; rows.len()];
    let mut kkt = KktFactor::new(&sc.p_upper, POLISH_DELTA, &sc.a, &rows, &deltas).ok()?;
    let rhs_x: Vec<f64> = sc.q.iter().map(|v| -v).collect();
    let rhs_c: Vec<f64> = rows
        .iter()
        .zip(&kinds)
        .map(|(&r, kind)| match kind {
            Active::Upper => sc.u[r],
            _ => sc.l[r],
        })
        .collect();

    let mut sx = rhs_x.clone();
    let mut sy = rhs_c.clone();
    kkt.solve(&mut sx, &mut sy);
    let mut px = vec![0.0; n];
    let mut aty = vec![0.0; n];
    let mut full_y = vec![0.0; m];
    let mut ax = vec![0.0; m];
    for _ in 0..settings.polish_refinement_steps {
        // residual of the unregularized system
        sc.p.mul_vec_into(&sx, &mut px);
        full_y.iter_mut().for_each(|v| *v = 0.0);
        for (k, &r) in rows.iter().enumerate() {
            full_y[r] = sy[k];
        }
        sc.a.tr_mul_vec_into(&full_y, &mut aty);
        sc.a.mul_vec_into(&sx, &mut ax);
        let mut dx: Vec<f64> = (0..n).map(|i| rhs_x[i] - px[i] - aty[i]).collect();
        let mut dy: Vec<f64> = rows.iter().enumerate().map(|(k, &r)| rhs_c[k] - ax[r]).collect();
        kkt.solve(&mut dx, &mut dy);
        for i in 0..n {
            sx[i] += dx[i];
        }
        for k in 0..rows.len() {
            sy[k] += dy[k];
        }
    }
    full_y.iter_mut().for_each(|v| *v = 0.0);
    for (k, &r) in rows.iter().enumerate() {
        full_y[r] = sy[k];
    }
    let (xu, yu) = unscale(sc, &sx, &full_y);
    let (primal, dual) = kkt_residuals(prob, &xu, &yu).ok()?;
    let tol = tolerances(prob, &xu, &yu, settings);
    if !(primal <= tol.primal && dual <= tol.dual && rows_feasible(prob, &xu, settings)) {
        return None;
    }
    for (&r, kind) in rows.iter().zip(&kinds) {
        let consistent = match kind {
            Active::Lower => yu[r] <= tol.dual,
            Active::Upper => yu[r] >= -tol.dual,
            Active::Equality => true,
        };
        if !consistent {
            return None;
        }
    }
    Some((xu, yu))
}
