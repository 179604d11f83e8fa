//! Localized orthogonal decomposition on broken spaces: the ideal
//! energy-orthogonal corrector onto the kernel of the coarse projection,
//! cell-local Ritz corrections, their damped Richardson combination, and
//! Galerkin solves in the resulting multiscale spaces.

use rayon::prelude::*;
use std::collections::BTreeSet;

use crate::assembly::{h_norm, l2_norm, EnergyOps};
use crate::femspace::Scale;
use crate::linsolve::{cg_solve, ConstrainedSpd};
use crate::projections::ProjectionStack;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Safe default damping for the additive cell corrections, `1/(c_N + 1)`
/// with the nominal neighbor bound of the localized network.
pub const DEFAULT_OMEGA: f64 = 1.0 / 7.0;

/// Largest fine dimension for which the global ideal corrector is set up.
pub const IDEAL_LIMIT: usize = 20_000;

/// The a-orthogonal projection onto the kernel of the coarse projection,
/// realized as a constrained solve with the projection rows as
/// constraints.
pub struct IdealCorrector {
    solver: ConstrainedSpd,
    a_op: std::sync::Arc<CsrMatrix>,
}

impl IdealCorrector {
    pub fn build(
        stack: &ProjectionStack,
        ops: &EnergyOps,
        fine: &Scale,
    ) -> Result<IdealCorrector> {
        let n = stack.n_fine;
        if n > IDEAL_LIMIT {
            return Err(Error::TooLargeForIdeal(n, IDEAL_LIMIT));
        }
        let constraints: Vec<Vec<(u32, f64)>> = (0..stack.n_coarse)
            .map(|r| stack.pi_k.row(r).map(|(j, v)| (j as u32, v)).collect())
            .collect();
        let positions = fine.space.dof_positions(&fine.mesh);
        let solver = ConstrainedSpd::new(&ops.a_op, constraints, Some(&positions))?;
        Ok(IdealCorrector {
            solver,
            a_op: ops.a_op.clone(),
        })
    }

    /// `C w`: the kernel element closest to `w` in the energy norm.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        self.solver.solve(&self.a_op.matvec(w))
    }
}

/// Per-cell kernel-constrained Ritz solvers: on each coarse cell the
/// principal submatrix of the energy operator with the cell's projection
/// rows as constraints.
pub struct KernelBlocks {
    /// Per coarse cell: (fine dofs, solver).
    blocks: Vec<(Vec<u32>, ConstrainedSpd)>,
    a_op: std::sync::Arc<CsrMatrix>,
}

impl KernelBlocks {
    pub fn build(stack: &ProjectionStack, ops: &EnergyOps, fine: &Scale) -> Result<KernelBlocks> {
        let positions = fine.space.dof_positions(&fine.mesh);
        let blocks: Result<Vec<_>> = stack
            .fine_dofs_of_cell
            .par_iter()
            .zip(&stack.coarse_dofs_of_cell)
            .map(|(fine_dofs, coarse_dofs)| {
                let sub = ops.a_op.principal_submatrix(fine_dofs);
                let local: std::collections::HashMap<u32, u32> = fine_dofs
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| (d, i as u32))
                    .collect();
                let constraints: Vec<Vec<(u32, f64)>> = coarse_dofs
                    .iter()
                    .map(|&cd| {
                        stack
                            .pi_k
                            .row(cd as usize)
                            .map(|(j, v)| (local[&(j as u32)], v))
                            .collect()
                    })
                    .collect();
                let pos: Vec<[i64; 2]> = fine_dofs
                    .iter()
                    .map(|&d| positions[d as usize])
                    .collect();
                let solver = ConstrainedSpd::new(&sub, constraints, Some(&pos))?;
                Ok((fine_dofs.clone(), solver))
            })
            .collect();
        Ok(KernelBlocks {
            blocks: blocks?,
            a_op: ops.a_op.clone(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.blocks.len()
    }

    /// The local Ritz correction on one cell: the kernel element `z`
    /// supported on the cell with `a(z, v) = r(v)` for all kernel `v`
    /// supported there. Returns a full-length vector.
    pub fn local_ritz(&self, cell: usize, residual: &[f64]) -> Vec<f64> {
        let (dofs, solver) = &self.blocks[cell];
        let r_local: Vec<f64> = dofs.iter().map(|&d| residual[d as usize]).collect();
        let z = solver.solve(&r_local);
        let mut out = vec![0.0; residual.len()];
        for (loc, &d) in dofs.iter().enumerate() {
            out[d as usize] = z[loc];
        }
        out
    }

    /// Additive application of all cell corrections to the residual of
    /// `w`, i.e. `T w = Σ_G P_G w` evaluated from `r = A w`. Blocks with
    /// exactly zero residual are skipped, which keeps supports sparse.
    fn apply_t_into(&self, residual: &[f64], acc: &mut [f64], touched: &mut BTreeSet<u32>) {
        for (cell, (dofs, solver)) in self.blocks.iter().enumerate() {
            let mut any = false;
            for &d in dofs.iter() {
                if residual[d as usize] != 0.0 {
                    any = true;
                    break;
                }
            }
            if !any {
                continue;
            }
            touched.insert(cell as u32);
            let r_local: Vec<f64> = dofs.iter().map(|&d| residual[d as usize]).collect();
            let z = solver.solve(&r_local);
            for (loc, &d) in dofs.iter().enumerate() {
                acc[d as usize] += z[loc];
            }
        }
    }
}

/// Fine representations of the corrected coarse basis `(I - C_ν) λ_p`,
/// with the per-step cell supports of the corrector parts.
pub struct CorrectorBasis {
    pub coarse_scale: usize,
    pub fine_scale: usize,
    /// Richardson step count; `None` marks the ideal corrector.
    pub nu: Option<usize>,
    pub omega: f64,
    pub columns: Vec<Vec<f64>>,
    /// Per column, the corrector's coarse-cell support after each step.
    pub support_history: Vec<Vec<BTreeSet<u32>>>,
}

/// Runs the damped Richardson iteration `C_{ν+1} = C_ν + ω T (I - C_ν)`
/// columnwise on the prolongated coarse basis.
pub fn richardson_correctors(
    stack: &ProjectionStack,
    _ops: &EnergyOps,
    blocks: &KernelBlocks,
    nu: usize,
    omega: f64,
) -> CorrectorBasis {
    assert!(omega > 0.0);
    let n_fine = stack.n_fine;
    let results: Vec<(Vec<f64>, Vec<BTreeSet<u32>>)> = (0..stack.n_coarse)
        .into_par_iter()
        .map(|p| {
            let mut lambda = vec![0.0; stack.n_coarse];
            lambda[p] = 1.0;
            let lambda_fine = stack.prolong.apply(&lambda);
            let mut corrector = vec![0.0; n_fine];
            let mut history = Vec::with_capacity(nu);
            let mut support: BTreeSet<u32> = BTreeSet::new();
            for _ in 0..nu {
                let w: Vec<f64> = lambda_fine
                    .iter()
                    .zip(&corrector)
                    .map(|(a, b)| a - b)
                    .collect();
                let residual = blocks.a_op.matvec(&w);
                let mut t_w = vec![0.0; n_fine];
                blocks.apply_t_into(&residual, &mut t_w, &mut support);
                for i in 0..n_fine {
                    corrector[i] += omega * t_w[i];
                }
                history.push(support.clone());
            }
            let column: Vec<f64> = lambda_fine
                .iter()
                .zip(&corrector)
                .map(|(a, b)| a - b)
                .collect();
            (column, history)
        })
        .collect();
    let (columns, support_history) = results.into_iter().unzip();
    CorrectorBasis {
        coarse_scale: stack.coarse_scale,
        fine_scale: stack.fine_scale,
        nu: Some(nu),
        omega,
        columns,
        support_history,
    }
}

/// The ideal multiscale basis `(I - C) λ_p` via the global corrector.
pub fn ideal_basis(stack: &ProjectionStack, ideal: &IdealCorrector) -> CorrectorBasis {
    let columns: Vec<Vec<f64>> = (0..stack.n_coarse)
        .into_par_iter()
        .map(|p| {
            let mut lambda = vec![0.0; stack.n_coarse];
            lambda[p] = 1.0;
            let lambda_fine = stack.prolong.apply(&lambda);
            let c = ideal.apply(&lambda_fine);
            lambda_fine.iter().zip(&c).map(|(a, b)| a - b).collect()
        })
        .collect();
    CorrectorBasis {
        coarse_scale: stack.coarse_scale,
        fine_scale: stack.fine_scale,
        nu: None,
        omega: 0.0,
        columns,
        support_history: vec![Vec::new(); stack.n_coarse],
    }
}

/// Galerkin solve in the span of the basis columns. Fails when the Gram
/// matrix condition estimate exceeds 1e12 (dependent columns).
pub fn ms_galerkin_solve(
    basis: &CorrectorBasis,
    a_op: &CsrMatrix,
    load: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = basis.columns.len();
    let n = load.len();
    let a_cols: Vec<Vec<f64>> = basis
        .columns
        .par_iter()
        .map(|c| a_op.matvec(c))
        .collect();
    let mut gram = nalgebra::DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..=i {
            let v: f64 = basis.columns[i]
                .iter()
                .zip(&a_cols[j])
                .map(|(a, b)| a * b)
                .sum();
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > 0.0) || max / min > 1e12 {
        return Err(Error::IllConditionedGram(max / min.max(f64::MIN_POSITIVE)));
    }
    let rhs = nalgebra::DVector::from_iterator(
        q,
        basis
            .columns
            .iter()
            .map(|c| c.iter().zip(load).map(|(a, b)| a * b).sum::<f64>()),
    );
    let coeffs = nalgebra::Cholesky::new(gram)
        .ok_or(Error::SingularSaddle)?
        .solve(&rhs);
    let mut u = vec![0.0; n];
    for (i, c) in coeffs.iter().enumerate() {
        for (x, b) in u.iter_mut().zip(&basis.columns[i]) {
            *x += c * b;
        }
    }
    Ok((coeffs.as_slice().to_vec(), u))
}

/// One row of the multiscale error study.
#[derive(Debug, Clone)]
pub struct LodRow {
    pub coarse_scale: usize,
    pub nu: Option<usize>,
    pub coarse_dofs: usize,
    pub fine_dofs: usize,
    pub h_error: f64,
    pub l2_error: f64,
}

/// Errors of the multiscale Galerkin solutions against the fine reference
/// for each requested coarse scale and localization depth. `None` in
/// `nu_list` requests the ideal corrector.
pub fn lod_error_study(
    stacks: &[&ProjectionStack],
    fine: &Scale,
    fine_ops: &EnergyOps,
    nu_list: &[Option<usize>],
    omega: f64,
    cg_tol: f64,
) -> Result<Vec<LodRow>> {
    let (reference, rep) = cg_solve(&fine_ops.a_op, &fine_ops.load, cg_tol, 200_000);
    if !rep.converged {
        return Err(Error::NoConvergence(rep.iterations, rep.relative_residual));
    }
    let mut rows = Vec::new();
    for stack in stacks {
        let blocks = KernelBlocks::build(stack, fine_ops, fine)?;
        let ideal = IdealCorrector::build(stack, fine_ops, fine)?;
        for &nu in nu_list {
            let basis = match nu {
                Some(nu) => richardson_correctors(stack, fine_ops, &blocks, nu, omega),
                None => ideal_basis(stack, &ideal),
            };
            let (_, u) = ms_galerkin_solve(&basis, &fine_ops.a_op, &fine_ops.load)?;
            let diff: Vec<f64> = reference.iter().zip(&u).map(|(a, b)| a - b).collect();
            rows.push(LodRow {
                coarse_scale: stack.coarse_scale,
                nu,
                coarse_dofs: stack.n_coarse,
                fine_dofs: stack.n_fine,
                h_error: h_norm(fine_ops, &diff),
                l2_error: l2_norm(fine_ops, &diff),
            });
        }
    }
    Ok(rows)
}

/// Neighbor closure of a coarse-cell set (the set plus its partition
/// neighbors), for the one-layer support growth check.
pub fn cell_layer_closure(
    partition: &crate::geometry::CellPartition,
    cells: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    let mut out = cells.clone();
    for &c in cells {
        for &n in &partition.cells[c as usize].neighbors {
            out.insert(n);
        }
    }
    out
}
