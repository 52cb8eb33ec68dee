use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if let (Some(&last_r), Some(&last_c)) = (rows.last(), col_idx.last()) {
                if last_r == r && last_c == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        // drop entries that summed to zero
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx: keep_cols, values: keep_vals }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_vec_into(x.as_slice(), out.as_mut_slice());
        out
    }

    pub(crate) fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, slot) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *slot = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        self.tr_mul_vec_into(x.as_slice(), out.as_mut_slice());
        out
    }

    pub(crate) fn tr_mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate().take(self.nrows) {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xr;
            }
        }
    }

    /// Scales in place: `self[r][c] *= row[r] * col[c]`.
    pub(crate) fn scale(&mut self, row: &[f64], col: &[f64]) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                self.values[k] *= row[r] * col[self.col_idx[k]];
            }
        }
    }

    pub(crate) fn scale_all(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Infinity norm of every column.
    pub(crate) fn col_inf_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0_f64; self.ncols];
        for (_, c, v) in self.iter() {
            norms[c] = norms[c].max(v.abs());
        }
        norms
    }

    pub(crate) fn row_inf_norms(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 1, 2.0), (1, 2, 1.0), (0, 1, 3.0), (1, 0, 4.0), (1, 0, -4.0)]);
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 2)], 1.0);
        assert_eq!(d[(1, 0)], 0.0);
    }

    #[test]
    fn products_match_dense() {
        let dense = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 3.0, 0.0, 0.5]);
        let s = SparseMatrix::from_dense(&dense);
        let x = DVector::from_vec(vec![2.0, -1.0]);
        assert_eq!(s.mul_vec(&x), &dense * &x);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.tr_mul_vec(&y), dense.transpose() * &y);
        assert_eq!(s.transpose().to_dense(), dense.transpose());
    }
}
