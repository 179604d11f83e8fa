//! Constrained solves realized through Schur complements on a sparse
//! LDL^T factorization of the leading block.

use nalgebra::DMatrix;

use super::ldl::{Ordering, SparseLdl};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Dense symmetric LDL^T with diagonal pivoting. Pivots below the drop
/// threshold terminate the factorization; the remaining rows are treated
/// as exactly dependent (deflated), which yields the minimum-information
/// solution for consistent systems.
pub struct PivotedLdl {
    n: usize,
    rank: usize,
    perm: Vec<usize>,
    // Unit lower factor, by column, rows rank..n ignored.
    l: DMatrix<f64>,
    d: Vec<f64>,
}

impl PivotedLdl {
    pub fn factor(s: &DMatrix<f64>, drop_rel: f64) -> Self {
        let n = s.nrows();
        assert_eq!(n, s.ncols());
        // The working matrix stays fully symmetric so diagonal pivot swaps
        // remain valid; the unit lower factor is stored separately with an
        // implicit diagonal.
        let mut a = s.clone();
        let mut l = DMatrix::zeros(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut d = vec![0.0; n];
        let max_diag0 = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
        let threshold = drop_rel * max_diag0.max(f64::MIN_POSITIVE);
        let mut rank = n;
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a[(i, i)] > a[(p, p)] {
                    p = i;
                }
            }
            if a[(p, p)] <= threshold {
                rank = k;
                break;
            }
            if p != k {
                a.swap_rows(k, p);
                a.swap_columns(k, p);
                l.swap_rows(k, p);
                perm.swap(k, p);
            }
            let dk = a[(k, k)];
            d[k] = dk;
            for i in k + 1..n {
                l[(i, k)] = a[(i, k)] / dk;
            }
            for i in k + 1..n {
                let lik = l[(i, k)];
                for j in k + 1..n {
                    a[(i, j)] -= lik * dk * l[(j, k)];
                }
            }
        }
        PivotedLdl { n, rank, perm, l, d }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = vec![0.0; self.n];
        for i in 0..self.n {
            z[i] = b[self.perm[i]];
        }
        for j in 0..self.rank {
            let zj = z[j];
            for i in j + 1..self.rank {
                z[i] -= self.l[(i, j)] * zj;
            }
        }
        for j in 0..self.rank {
            z[j] /= self.d[j];
        }
        for i in self.rank..self.n {
            z[i] = 0.0;
        }
        for j in (0..self.rank).rev() {
            let mut acc = z[j];
            for i in j + 1..self.rank {
                acc -= self.l[(i, j)] * z[i];
            }
            z[j] = acc;
        }
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = z[i];
        }
        x
    }
}

/// Solver for `A x + C^T λ = b`, `C x = g` with sparse SPD `A`.
///
/// `A` is factored once; the constraint Schur complement `C A^{-1} C^T`
/// is formed densely (the constraint count is small in every use here:
/// kernel rows per cell, one mean row, or the coarse projection rows).
/// Rank-deficient constraint sets are deflated by pivot dropping.
pub struct ConstrainedSpd {
    ldl: SparseLdl,
    constraints: Vec<Vec<(u32, f64)>>,
    w: Vec<Vec<f64>>, // A^{-1} C^T, one column per constraint
    schur: PivotedLdl,
}

impl ConstrainedSpd {
    pub fn new(
        a: &CsrMatrix,
        constraints: Vec<Vec<(u32, f64)>>,
        positions: Option<&[[i64; 2]]>,
    ) -> Result<Self> {
        let ordering = match positions {
            Some(p) => Ordering::Positions(p),
            None => Ordering::Natural,
        };
        let ldl = SparseLdl::factor(a, ordering)?;
        let n = ldl.n();
        let q = constraints.len();
        let mut w = Vec::with_capacity(q);
        let mut rhs = vec![0.0; n];
        for c in &constraints {
            for x in rhs.iter_mut() {
                *x = 0.0;
            }
            for &(j, v) in c {
                rhs[j as usize] = v;
            }
            w.push(ldl.solve(&rhs));
        }
        let mut s = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let mut acc = 0.0;
                for &(col, v) in &constraints[i] {
                    acc += v * w[j][col as usize];
                }
                s[(i, j)] = acc;
                s[(j, i)] = acc;
            }
        }
        let schur = PivotedLdl::factor(&s, 1e-12);
        Ok(ConstrainedSpd {
            ldl,
            constraints,
            w,
            schur,
        })
    }

    pub fn n(&self) -> usize {
        self.ldl.n()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraint_rank(&self) -> usize {
        self.schur.rank()
    }

    /// Solves with constraint right-hand side `g = 0`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_with_gap(b, None)
    }

    /// Solves `A x + C^T λ = b`, `C x = g`.
    pub fn solve_with_gap(&self, b: &[f64], g: Option<&[f64]>) -> Vec<f64> {
        let mut x = self.ldl.solve(b);
        let q = self.constraints.len();
        if q == 0 {
            return x;
        }
        let mut rhs_s = vec![0.0; q];
        for (i, c) in self.constraints.iter().enumerate() {
            let mut acc = 0.0;
            for &(col, v) in c {
                acc += v * x[col as usize];
            }
            rhs_s[i] = acc - g.map_or(0.0, |g| g[i]);
        }
        let mu = self.schur.solve(&rhs_s);
        for (k, wk) in self.w.iter().enumerate() {
            let m = mu[k];
            if m != 0.0 {
                for i in 0..x.len() {
                    x[i] -= m * wk[i];
                }
            }
        }
        x
    }
}

/// Mean-constrained solve of a pure-Neumann cell problem whose stiffness
/// kernel is exactly the constants: `K w + λ m = b`, `m^T w = g`, with
/// `m` the (positive) integration weights. One dof is grounded to make
/// the stiffness factorizable; the constant component is restored from
/// the mean constraint.
pub struct GroundedNeumann {
    n: usize,
    grounded: usize,
    keep: Vec<u32>,
    ldl: SparseLdl,
    m: Vec<f64>,
    m_total: f64,
}

impl GroundedNeumann {
    pub fn new(k: &CsrMatrix, m: Vec<f64>, positions: Option<&[[i64; 2]]>) -> Result<Self> {
        let n = k.n_rows();
        assert_eq!(m.len(), n);
        if n < 2 {
            return Err(Error::SingularSaddle);
        }
        let grounded = 0usize;
        let keep: Vec<u32> = (1..n as u32).collect();
        let sub = k.principal_submatrix(&keep);
        let sub_pos: Option<Vec<[i64; 2]>> =
            positions.map(|p| keep.iter().map(|&i| p[i as usize]).collect());
        let ldl = SparseLdl::factor(
            &sub,
            match &sub_pos {
                Some(p) => Ordering::Positions(p),
                None => Ordering::Natural,
            },
        )?;
        let m_total: f64 = m.iter().sum();
        Ok(GroundedNeumann {
            n,
            grounded,
            keep,
            ldl,
            m,
            m_total,
        })
    }

    /// Solves for `w` given the load functional `b` and target mean
    /// integral `g = m^T w`.
    pub fn solve(&self, b: &[f64], g: f64) -> Vec<f64> {
        // Multiplier from compatibility: 1^T (b - λ m) = 0.
        let b_sum: f64 = b.iter().sum();
        let lambda = b_sum / self.m_total;
        let mut rhs = Vec::with_capacity(self.n - 1);
        for &i in &self.keep {
            let i = i as usize;
            rhs.push(b[i] - lambda * self.m[i]);
        }
        let wr = self.ldl.solve(&rhs);
        let mut w = vec![0.0; self.n];
        for (loc, &i) in self.keep.iter().enumerate() {
            w[i as usize] = wr[loc];
        }
        w[self.grounded] = 0.0;
        let mw: f64 = self.m.iter().zip(&w).map(|(a, b)| a * b).sum();
        let alpha = (g - mw) / self.m_total;
        for x in w.iter_mut() {
            *x += alpha;
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CooBuilder;

    #[test]
    fn pivoted_ldl_full_rank_spd_with_swaps() {
        // SPD matrix whose pivoting order forces row/column swaps across
        // already-factored columns; rank must come out full and the solve
        // must match the dense LU solution.
        let n = 12;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            }
            m[(i, i)] += 0.5 + ((i * 7) % 5) as f64; // scrambled diagonal
        }
        let f = PivotedLdl::factor(&m, 1e-12);
        assert_eq!(f.rank(), n);
        let b: Vec<f64> = (0..n).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let x = f.solve(&b);
        let exact = m
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - exact[i]).abs() < 1e-10, "{} vs {}", x[i], exact[i]);
        }
    }

    fn identity(n: usize) -> CsrMatrix {
        let mut b = CooBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build_symmetric()
    }

    #[test]
    fn empty_constraints_plain_solve() {
        let a = identity(3);
        let s = ConstrainedSpd::new(&a, vec![], None).unwrap();
        let x = s.solve(&[1.0, 2.0, 3.0]);
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mean_zero_projection_by_hand() {
        // A = I, C = [1 ... 1], b = e1  =>  x = e1 - (1/n) 1.
        let n = 5;
        let a = identity(n);
        let c: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 1.0)).collect();
        let s = ConstrainedSpd::new(&a, vec![c], None).unwrap();
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        let x = s.solve(&b);
        for i in 0..n {
            let expect = if i == 0 { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
            assert!((x[i] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_dense_lagrange_oracle() {
        // Random-ish SPD A with two constraints, against the dense saddle.
        let n = 8;
        let mut bld = CooBuilder::new(n, n);
        for i in 0..n {
            bld.push(i, i, 3.0 + (i as f64) * 0.25);
            if i + 1 < n {
                bld.push(i, i + 1, -1.0);
                bld.push(i + 1, i, -1.0);
            }
        }
        let a = bld.build_symmetric();
        let c1: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 1.0)).collect();
        let c2: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, i as f64)).collect();
        let s = ConstrainedSpd::new(&a, vec![c1.clone(), c2.clone()], None).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 31 % 7) as f64) - 3.0).collect();
        let x = s.solve(&b);

        let mut big = DMatrix::zeros(n + 2, n + 2);
        for i in 0..n {
            for (j, v) in a.row(i) {
                big[(i, j)] = v;
            }
        }
        for (cid, c) in [&c1, &c2].iter().enumerate() {
            for &(j, v) in c.iter() {
                big[(n + cid, j as usize)] = v;
                big[(j as usize, n + cid)] = v;
            }
        }
        let mut rhs = nalgebra::DVector::zeros(n + 2);
        for i in 0..n {
            rhs[i] = b[i];
        }
        let sol = big.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - sol[i]).abs() < 1e-10, "i={i}: {} vs {}", x[i], sol[i]);
        }
        // Constraint satisfaction.
        let cx: f64 = x.iter().sum();
        assert!(cx.abs() < 1e-10);
    }

    #[test]
    fn deflates_dependent_constraints() {
        let n = 4;
        let a = identity(n);
        let c1: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 1.0)).collect();
        let c2: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 2.0)).collect(); // dependent
        let s = ConstrainedSpd::new(&a, vec![c1, c2], None).unwrap();
        assert_eq!(s.constraint_rank(), 1);
        let x = s.solve(&[1.0, 0.0, 0.0, 0.0]);
        let sum: f64 = x.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn grounded_neumann_mean_solve() {
        // 1D Neumann chain: K = tridiag(-1, deg, -1), kernel = constants.
        let n = 6;
        let mut bld = CooBuilder::new(n, n);
        for i in 0..n {
            let deg = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            bld.push(i, i, deg);
            if i + 1 < n {
                bld.push(i, i + 1, -1.0);
                bld.push(i + 1, i, -1.0);
            }
        }
        let k = bld.build_symmetric();
        let m = vec![1.0; n];
        let solver = GroundedNeumann::new(&k, m.clone(), None).unwrap();
        // b in range(K) plus some multiplier part; pick b = K z + 0.3 m.
        let z: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = k.matvec(&z);
        for i in 0..n {
            b[i] += 0.3 * m[i];
        }
        let g = 2.5;
        let w = solver.solve(&b, g);
        // Check K w + λ m = b for λ = 0.3 and m^T w = g.
        let kw = k.matvec(&w);
        for i in 0..n {
            assert!((kw[i] + 0.3 * m[i] - b[i]).abs() < 1e-11);
        }
        let mw: f64 = m.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((mw - g).abs() < 1e-11);
    }
}
