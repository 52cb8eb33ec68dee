//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library.
#![allow(dead_code)]

use fwplan_core::{DMatrix, DVector};

/// SplitMix64; enough randomness for test fixtures.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

pub fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `C(n,i) u^i (1-u)^(n-i)` evaluated directly.
pub fn basis_direct(n: usize, i: usize, u: f64) -> f64 {
    choose(n, i) * u.powi(i as i32) * (1.0 - u).powi((n - i) as i32)
}

/// Gauss-Legendre nodes and weights on `[0, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
    (0..k)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=k {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Dense QP `min ½xᵀQx + qᵀx, l ≤ Ax ≤ u` with a known feasible point.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub feasible: DVector<f64>,
}

/// Strictly convex instance with a mix of equality, two-sided, one-sided
/// and free rows. Feasible by construction.
pub fn random_qp(rng: &mut Rng, n: usize, m: usize) -> DenseQp {
    let rank = 1 + rng.below(n);
    let f = DMatrix::from_fn(n, rank, |_, _| rng.uniform(-1.0, 1.0));
    let q_mat = &f * f.transpose() + DMatrix::identity(n, n) * rng.uniform(0.1, 1.0);
    let q = DVector::from_fn(n, |_, _| rng.uniform(-5.0, 5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.uniform(-1.0, 1.0));
    let feasible = DVector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0));
    let ax = &a * &feasible;
    let mut equalities = 0;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..m {
        let kind = rng.below(5);
        let (lo, hi) = match kind {
            0 if 2 * equalities < n => {
                equalities += 1;
                (ax[i], ax[i])
            }
            1 => (ax[i] - rng.uniform(0.0, 1.0), f64::INFINITY),
            2 => (f64::NEG_INFINITY, ax[i] + rng.uniform(0.0, 1.0)),
            3 => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (ax[i] - rng.uniform(0.0, 0.5), ax[i] + rng.uniform(0.0, 0.5)),
        };
        l[i] = lo;
        u[i] = hi;
    }
    DenseQp { q_mat, q, a, l, u, feasible }
}

/// Primal active-set method (Nocedal and Wright, algorithm 16.3) for a
/// strictly convex QP, started from a feasible point.
pub fn active_set_solve(p: &DenseQp) -> DVector<f64> {
    let n = p.q.len();
    // Rows as g·x <= h; equality rows are kept in the working set forever.
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for i in 0..p.a.nrows() {
        let g: DVector<f64> = p.a.row(i).transpose();
        if p.l[i] == p.u[i] {
            rows.push((g, p.u[i], true));
            continue;
        }
        if p.u[i].is_finite() {
            rows.push((g.clone(), p.u[i], false));
        }
        if p.l[i].is_finite() {
            rows.push((-g, -p.l[i], false));
        }
    }
    let mut working: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].2).collect();
    let mut x = p.feasible.clone();
    for _ in 0..10_000 {
        let k = working.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q_mat);
        for (j, &r) in working.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = rows[r].0[c];
                kkt[(c, n + j)] = rows[r].0[c];
            }
        }
        let grad = &p.q_mat * &x + &p.q;
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        let sol = kkt.full_piv_lu().solve(&rhs).expect("working set is independent");
        let step = sol.rows(0, n).into_owned();
        if step.amax() < 1e-11 * (1.0 + x.amax()) {
            let mut worst: Option<(usize, f64)> = None;
            for (j, &r) in working.iter().enumerate() {
                let lambda = sol[n + j];
                if !rows[r].2 && lambda < worst.map_or(-1e-12, |w| w.1) {
                    worst = Some((j, lambda));
                }
            }
            match worst {
                None => return x,
                Some((j, _)) => {
                    working.remove(j);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (r, (g, h, _)) in rows.iter().enumerate() {
            if working.contains(&r) {
                continue;
            }
            let gp = g.dot(&step);
            if gp > 1e-14 {
                let a = ((h - g.dot(&x)) / gp).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(r);
                }
            }
        }
        x += step * alpha;
        if let Some(r) = blocking {
            working.push(r);
        }
    }
    panic!("active-set oracle did not converge");
}
