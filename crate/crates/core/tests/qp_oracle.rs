use fwplan_core::qp::{kkt_residuals, solve, QpProblem, QpSettings, QpStatus, WarmStart};
use fwplan_core::{DMatrix, DVector};

mod common;
use common::{active_set_solve, random_qp, DenseQp, Rng};

fn to_problem(p: &DenseQp) -> QpProblem {
    QpProblem::from_dense(&p.q_mat, p.q.clone(), &p.a, p.l.clone(), p.u.clone()).unwrap()
}

#[test]
fn random_instances_match_active_set() {
    let mut rng = Rng::new(7);
    let settings = QpSettings::default();
    for case in 0..60 {
        let n = 2 + rng.below(39);
        let m = rng.below(31);
        let p = random_qp(&mut rng, n, m);
        let expected = active_set_solve(&p);
        let prob = to_problem(&p);
        let sol = solve(&prob, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "case {case} n={n} m={m}");
        let err = (&sol.x - &expected).amax();
        assert!(err <= 1e-5, "case {case} n={n} m={m}: |x - x*| = {err:e}");
        let (rp, rd) = kkt_residuals(&prob, &sol.x, &sol.y).unwrap();
        assert!(rp <= sol.primal_tolerance && rd <= sol.dual_tolerance, "case {case}: {rp:e} {rd:e}");
    }
}

#[test]
fn objective_is_not_beaten_by_feasible_point() {
    let mut rng = Rng::new(11);
    for _ in 0..20 {
        let p = random_qp(&mut rng, 12, 10);
        let prob = to_problem(&p);
        let sol = solve(&prob, &QpSettings::default()).unwrap();
        assert!(prob.objective(&sol.x) <= prob.objective(&p.feasible) + 1e-7);
    }
}

#[test]
fn warm_start_from_solution_converges_immediately() {
    let mut rng = Rng::new(3);
    let p = random_qp(&mut rng, 20, 15);
    let prob = to_problem(&p);
    let cold = solve(&prob, &QpSettings::default()).unwrap();
    let settings = QpSettings {
        warm_start: Some(WarmStart { x: cold.x.clone(), y: cold.y.clone() }),
        ..QpSettings::default()
    };
    let warm = solve(&prob, &settings).unwrap();
    assert_eq!(warm.status, QpStatus::Solved);
    assert!(warm.iterations <= cold.iterations);
    assert!((&warm.x - &cold.x).amax() < 1e-6);
}

#[test]
fn conflicting_rows_are_infeasible() {
    let prob = QpProblem::from_dense(
        &DMatrix::identity(2, 2),
        DVector::zeros(2),
        &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        DVector::from_vec(vec![2.0, f64::NEG_INFINITY]),
        DVector::from_vec(vec![f64::INFINITY, -2.0]),
    )
    .unwrap();
    let sol = solve(&prob, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::PrimalInfeasible);
}

#[test]
fn iteration_cap_is_reported() {
    let mut rng = Rng::new(5);
    let p = random_qp(&mut rng, 30, 25);
    let settings = QpSettings { max_iter: 1, polish: false, ..QpSettings::default() };
    let sol = solve(&to_problem(&p), &settings).unwrap();
    assert_eq!(sol.status, QpStatus::MaxIterations);
}
