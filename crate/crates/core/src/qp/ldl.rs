//! Envelope (skyline) LDLᵀ factorization of quasi-definite KKT matrices.
//!
//! The KKT matrix `[P + σI, Aᵀ; A, -diag(1/ρ)]` is quasi-definite, so an
//! LDLᵀ factorization exists for every symmetric ordering without pivoting.
//! Constraint rows are interleaved with the variables: each row is placed
//! right after the largest variable index it touches. For the block-banded
//! problems produced by the planner this keeps the envelope narrow and the
//! factorization cost linear in the number of segments.

use alloc::vec;
use alloc::vec::Vec;

use super::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PivotFailure {
    pub index: usize,
}

/// Dense LDLᵀ restricted to the lower envelope of a symmetric matrix.
#[derive(Debug, Clone)]
pub(crate) struct SkylineLdl {
    first: Vec<usize>,
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl SkylineLdl {
    /// Factors the symmetric matrix given by its lower-triangle entries
    /// `(row, col, value)` with `row >= col`. `expected_sign[i]` is the sign
    /// the pivot `i` must have.
    pub fn factor(
        n: usize,
        lower_entries: &[(usize, usize, f64)],
        expected_sign: &[f64],
    ) -> Result<Self, PivotFailure> {
        let mut first: Vec<usize> = (0..n).collect();
        for &(r, c, _) in lower_entries {
            debug_assert!(r >= c);
            first[r] = first[r].min(c);
        }
        let mut offset = vec![0; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; offset[n]];
        let mut diag = vec![0.0; n];
        for &(r, c, v) in lower_entries {
            if r == c {
                diag[r] += v;
            } else {
                lower[offset[r] + c - first[r]] += v;
            }
        }

        let mut work = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            // work[k] = L[i][k] * d[k] for k < i, built column by column
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let mut s = lower[offset[i] + j - fi];
                let row_j = &lower[offset[j]..offset[j + 1]];
                for k in start..j {
                    s -= work[k] * row_j[k - fj];
                }
                work[j] = s;
                lower[offset[i] + j - fi] = s / diag[j];
            }
            let mut d = diag[i];
            for k in fi..i {
                d -= work[k] * lower[offset[i] + k - fi];
            }
            if !(d * expected_sign[i] > 0.0) || !d.is_finite() {
                return Err(PivotFailure { index: i });
            }
            diag[i] = d;
        }
        Ok(Self { first, offset, lower, diag })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            let mut s = b[i];
            for (k, &l) in row.iter().enumerate() {
                s -= l * b[fi + k];
            }
            b[i] = s;
        }
        for (bi, d) in b.iter_mut().zip(&self.diag) {
            *bi /= d;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            let xi = b[i];
            for (k, &l) in row.iter().enumerate() {
                b[fi + k] -= l * xi;
            }
        }
    }
}

/// Factored KKT system `[P + σI, Aᵀ; A, -diag(δ)]` over a subset of rows of A.
#[derive(Debug, Clone)]
pub(crate) struct KktFactor {
    n: usize,
    // permuted position of variable i and of selected constraint k
    var_pos: Vec<usize>,
    con_pos: Vec<usize>,
    ldl: SkylineLdl,
    work: Vec<f64>,
}

impl KktFactor {
    /// `p_upper` holds the upper triangle of P (including diagonal).
    /// `rows` selects the constraint rows of `a`; `neg_diag[k]` is the
    /// (positive) magnitude placed at `-δ_k` on the diagonal of row `rows[k]`.
    pub fn new(
        p_upper: &SparseMatrix,
        sigma: f64,
        a: &SparseMatrix,
        rows: &[usize],
        neg_diag: &[f64],
    ) -> Result<Self, PivotFailure> {
        let n = p_upper.nrows();
        let m = rows.len();
        // order: each constraint after its largest column; empty rows first
        let mut after: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut leading = Vec::new();
        for (k, &r) in rows.iter().enumerate() {
            let (cols, _) = a.row(r);
            match cols.iter().max() {
                Some(&c) => after[c].push(k),
                None => leading.push(k),
            }
        }
        let mut var_pos = vec![0; n];
        let mut con_pos = vec![0; m];
        let mut pos = 0;
        for k in leading {
            con_pos[k] = pos;
            pos += 1;
        }
        for v in 0..n {
            var_pos[v] = pos;
            pos += 1;
            for &k in &after[v] {
                con_pos[k] = pos;
                pos += 1;
            }
        }
        let total = n + m;
        let mut entries = Vec::with_capacity(p_upper.nnz() + n + a.nnz() + m);
        let mut sign = vec![1.0; total];
        for (r, c, v) in p_upper.iter() {
            let (pr, pc) = (var_pos[r], var_pos[c]);
            entries.push((pr.max(pc), pr.min(pc), v));
        }
        for &p in &var_pos {
            entries.push((p, p, sigma));
        }
        for (k, &r) in rows.iter().enumerate() {
            let pr = con_pos[k];
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                entries.push((pr, var_pos[c], v));
            }
            entries.push((pr, pr, -neg_diag[k]));
            sign[pr] = -1.0;
        }
        let ldl = SkylineLdl::factor(total, &entries, &sign)?;
        Ok(Self { n, var_pos, con_pos, ldl, work: vec![0.0; total] })
    }

    /// Solves for `(x, ν)` given right-hand sides `(rx, rc)`; results are
    /// written back into the same slices.
    pub fn solve(&mut self, rx: &mut [f64], rc: &mut [f64]) {
        for (i, &p) in self.var_pos.iter().enumerate() {
            self.work[p] = rx[i];
        }
        for (k, &p) in self.con_pos.iter().enumerate() {
            self.work[p] = rc[k];
        }
        self.ldl.solve_in_place(&mut self.work);
        for (i, &p) in self.var_pos.iter().enumerate() {
            rx[i] = self.work[p];
        }
        for (k, &p) in self.con_pos.iter().enumerate() {
            rc[k] = self.work[p];
        }
    }

    #[allow(dead_code)]
    pub fn dim(&self) -> usize {
        self.n + self.con_pos.len()
    }
}
