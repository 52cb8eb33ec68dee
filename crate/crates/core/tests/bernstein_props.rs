use approx::assert_relative_eq;
use fwplan_core::bernstein::{
    basis_eval, derivative_weights, gram_matrix, BernsteinSegment, DifferenceMatrix, PiecewiseTrajectory,
};
use fwplan_core::Vector3;
use proptest::prelude::*;

mod common;
use common::{basis_direct, gauss_legendre};

fn points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 200.0 - 100.0
    };
    (0..=n).map(|_| Vector3::new(next(), next(), next())).collect()
}

#[test]
fn basis_matches_closed_form() {
    for n in 0..=12 {
        for i in 0..=n {
            for k in 0..=20 {
                let u = k as f64 / 20.0;
                assert_relative_eq!(basis_eval(n, i, u).unwrap(), basis_direct(n, i, u), epsilon = 1e-13);
            }
        }
    }
}

#[test]
fn gram_matches_quadrature() {
    let nodes = gauss_legendre(16);
    for n in 3..=12 {
        let duration = 2.5;
        let g = gram_matrix(n, duration).unwrap();
        for i in 0..=n {
            for j in 0..=n {
                let q: f64 = nodes
                    .iter()
                    .map(|&(u, w)| w * basis_direct(n, i, u) * basis_direct(n, j, u))
                    .sum::<f64>()
                    * duration;
                assert!((g[(i, j)] - q).abs() < 1e-10, "n={n} ({i},{j}): {} vs {q}", g[(i, j)]);
            }
        }
    }
}

#[test]
fn difference_matrix_reproduces_derivative_control_points() {
    for n in 3..=12 {
        let pts = points(n, n as u64);
        let seg = BernsteinSegment::new(pts.clone(), 1.0, 3.0).unwrap();
        for k in 1..=3 {
            let d = DifferenceMatrix::new(n, k, seg.duration()).unwrap();
            let via_matrix = d.apply(&pts);
            let via_segment = seg.derivative(k).unwrap();
            for (a, b) in via_matrix.iter().zip(via_segment.control_points()) {
                assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-12);
            }
        }
    }
}

#[test]
fn piecewise_lookup_and_junctions() {
    let a = BernsteinSegment::new(vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0], 0.0, 1.0).unwrap();
    let b = BernsteinSegment::new(vec![Vector3::x() * 2.0, Vector3::x() * 3.0, Vector3::x() * 4.0], 1.0, 2.0)
        .unwrap();
    let traj = PiecewiseTrajectory::new(vec![a, b]).unwrap();
    assert_eq!(traj.junction_times(), vec![1.0, 2.0]);
    assert_eq!(traj.segment_index(1.0).unwrap(), 1);
    assert_eq!(traj.segment_index(2.0).unwrap(), 1);
    assert!(traj.eval(2.0 + 1e-9).is_err());
    let s = traj.eval(1.5).unwrap();
    assert_relative_eq!(s.position, Vector3::new(3.0, 0.0, 0.0), epsilon = 1e-12);
    assert_relative_eq!(s.velocity, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
    assert_relative_eq!(traj.arc_length(32).unwrap(), 4.0, epsilon = 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity_and_hull(n in 3usize..=12, u in 0.0f64..=1.0, seed in any::<u64>()) {
        let w: Vec<f64> = (0..=n).map(|i| basis_eval(n, i, u).unwrap()).collect();
        prop_assert!(w.iter().all(|&b| b >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let pts = points(n, seed);
        let seg = BernsteinSegment::new(pts.clone(), 0.0, 1.0).unwrap();
        let p = seg.eval_normalized(u);
        let combo = pts.iter().zip(&w).fold(Vector3::zeros(), |acc, (q, b)| acc + q * *b);
        prop_assert!((p - combo).norm() < 1e-9);
        for axis in 0..3 {
            let lo = pts.iter().map(|q| q[axis]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|q| q[axis]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p[axis] >= lo - 1e-9 && p[axis] <= hi + 1e-9);
        }
    }

    #[test]
    fn endpoints_interpolate(n in 3usize..=12, seed in any::<u64>(), t0 in -5.0f64..5.0, len in 0.1f64..10.0) {
        let pts = points(n, seed);
        let seg = BernsteinSegment::new(pts.clone(), t0, t0 + len).unwrap();
        prop_assert!((seg.eval(t0).unwrap() - pts[0]).norm() < 1e-12);
        prop_assert!((seg.eval(t0 + len).unwrap() - pts[n]).norm() < 1e-9);
    }

    #[test]
    fn derivatives_match_finite_differences(n in 3usize..=12, seed in any::<u64>(), u in 0.05f64..0.95) {
        let pts = points(n, seed);
        let duration = 4.0;
        let seg = BernsteinSegment::new(pts.clone(), 0.0, duration).unwrap();
        let h = 1e-5;
        let t = u * duration;
        let fd = (seg.eval(t + h).unwrap() - seg.eval(t - h).unwrap()) / (2.0 * h);
        let exact = seg.derivative(1).unwrap().eval(t).unwrap();
        prop_assert!((fd - exact).norm() <= 1e-5 * (1.0 + exact.norm()), "{fd} vs {exact}");

        let w = derivative_weights(n, 2, duration, u).unwrap();
        let via_weights = pts.iter().zip(&w).fold(Vector3::zeros(), |acc, (q, c)| acc + q * *c);
        let d1 = seg.derivative(1).unwrap();
        let fd2 = (d1.eval(t + h).unwrap() - d1.eval(t - h).unwrap()) / (2.0 * h);
        prop_assert!((fd2 - via_weights).norm() <= 1e-5 * (1.0 + via_weights.norm()));
    }
}
