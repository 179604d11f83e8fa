//! Compressed sparse row storage for the assembled symmetric forms.

use crate::{Error, Result};

/// Symmetric operators and rectangular couplings in CSR form.
///
/// Column indices are sorted and unique within each row. Exact zeros
/// produced by cancellation during triplet merging are dropped.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.n_rows.min(self.n_cols);
        let mut d = vec![0.0; n];
        for i in 0..n {
            for (j, v) in self.row(i) {
                if j == i {
                    d[i] = v;
                }
            }
        }
        d
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// y += A^T x, using the row storage of A.
    pub fn transpose_matvec_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        for i in 0..self.n_rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k] as usize] += self.values[k] * xi;
            }
        }
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        self.transpose_matvec_add(x, &mut y);
        y
    }

    /// Energy product x^T A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_rows);
        let mut acc = 0.0;
        for i in 0..self.n_rows {
            let mut row_acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row_acc += self.values[k] * y[self.col_idx[k] as usize];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// Principal submatrix on the given index set, with columns renumbered
    /// by position. Indices must be strictly increasing.
    pub fn principal_submatrix(&self, idx: &[u32]) -> CsrMatrix {
        debug_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let mut local = vec![u32::MAX; self.n_cols];
        for (loc, &g) in idx.iter().enumerate() {
            local[g as usize] = loc as u32;
        }
        let mut b = CooBuilder::new(idx.len(), idx.len());
        for (loc, &g) in idx.iter().enumerate() {
            for (j, v) in self.row(g as usize) {
                let lj = local[j];
                if lj != u32::MAX {
                    b.push(loc, lj as usize, v);
                }
            }
        }
        b.build_with_symmetry(self.symmetric)
    }

    /// Exact structural and numerical symmetry check.
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let mut found = false;
                for (jj, vv) in self.row(j) {
                    if jj == i {
                        found = vv == v;
                        break;
                    }
                }
                if !found {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Entrywise sum. Patterns are merged.
    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut b = CooBuilder::new(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                b.push(i, j, v);
            }
            for (j, v) in other.row(i) {
                b.push(i, j, v);
            }
        }
        b.build_with_symmetry(self.symmetric && other.symmetric)
    }

    /// Matrix-market style text export (1-based coordinate format).
    pub fn write_matrix_market<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let kind = if self.symmetric { "symmetric" } else { "general" };
        writeln!(w, "%%MatrixMarket matrix coordinate real {kind}")?;
        if self.symmetric {
            let nnz_lower = (0..self.n_rows)
                .map(|i| self.row(i).filter(|&(j, _)| j <= i).count())
                .sum::<usize>();
            writeln!(w, "{} {} {}", self.n_rows, self.n_cols, nnz_lower)?;
            for i in 0..self.n_rows {
                for (j, v) in self.row(i) {
                    if j <= i {
                        writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
                    }
                }
            }
        } else {
            writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
            for i in 0..self.n_rows {
                for (j, v) in self.row(i) {
                    writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Triplet accumulator. Duplicate entries are summed in insertion order so
/// that symmetric contributions produce bitwise-symmetric operators.
pub struct CooBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl CooBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        CooBuilder {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        CooBuilder {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.entries.push((i as u32, j as u32, v));
    }

    pub fn build(self) -> CsrMatrix {
        self.build_with_symmetry(false)
    }

    pub fn build_symmetric(self) -> CsrMatrix {
        self.build_with_symmetry(true)
    }

    fn build_with_symmetry(mut self, symmetric: bool) -> CsrMatrix {
        // Stable sort keeps duplicate summation order deterministic.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut it = self.entries.iter().peekable();
        for i in 0..self.n_rows {
            while let Some(&&(r, c, v)) = it.peek() {
                if r as usize != i {
                    break;
                }
                it.next();
                let mut acc = v;
                while let Some(&&(r2, c2, v2)) = it.peek() {
                    if r2 == r && c2 == c {
                        acc += v2;
                        it.next();
                    } else {
                        break;
                    }
                }
                if acc != 0.0 {
                    col_idx.push(c);
                    values.push(acc);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }
}

/// Builds a CSR matrix directly from per-row entry lists (columns may be
/// unsorted; duplicates are summed).
pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>, symmetric: bool) -> CsrMatrix {
    let mut b = CooBuilder::new(rows.len(), n_cols);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row {
            b.push(i, j as usize, v);
        }
    }
    b.build_with_symmetry(symmetric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_sums_duplicates_and_drops_zeros() {
        let mut b = CooBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(0, 0, 2.0);
        b.push(0, 1, 5.0);
        b.push(0, 1, -5.0);
        b.push(1, 1, 4.0);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, 3.0)]);
        assert_eq!(m.row(1).collect::<Vec<_>>(), vec![(1, 4.0)]);
    }

    #[test]
    fn matvec_and_bilinear() {
        let mut b = CooBuilder::new(2, 2);
        b.push(0, 0, 2.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        b.push(1, 1, 2.0);
        let m = b.build_symmetric();
        let y = m.matvec(&[1.0, 1.0]);
        assert_eq!(y, vec![3.0, 3.0]);
        assert_eq!(m.bilinear(&[1.0, 1.0], &[1.0, 1.0]), 6.0);
        assert!(m.is_symmetric());
    }

    #[test]
    fn submatrix_renumbers() {
        let mut b = CooBuilder::new(3, 3);
        for i in 0..3 {
            b.push(i, i, (i + 1) as f64);
        }
        b.push(0, 2, 7.0);
        b.push(2, 0, 7.0);
        let m = b.build_symmetric();
        let s = m.principal_submatrix(&[0, 2]);
        assert_eq!(s.n_rows(), 2);
        assert_eq!(s.row(0).collect::<Vec<_>>(), vec![(0, 1.0), (1, 7.0)]);
        assert_eq!(s.row(1).collect::<Vec<_>>(), vec![(0, 7.0), (1, 3.0)]);
    }
}
