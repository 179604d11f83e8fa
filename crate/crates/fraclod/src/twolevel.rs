//! The two-level subspace correction solver: sequential exact Ritz
//! corrections on all cell blocks of the fine partition followed by a
//! coarse-space correction, and the convergence experiments measuring its
//! per-sweep error reduction factors.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{build_energy, h_norm, Coefficients, EnergyOps};
use crate::femspace::{build_prolongation, Prolongation, Scale};
use crate::geometry::{InterfaceNetwork, NetworkConstants};
use crate::linsolve::{Ordering, SparseLdl};
use crate::mesh::MeshHierarchy;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellOrder {
    Ascending,
    Descending,
}

/// Solver configuration; the defaults reproduce the convergence tables.
#[derive(Debug, Clone)]
pub struct TwoLevelConfig {
    /// Coarse space scale (the first scale by default).
    pub coarse_scale: usize,
    /// Number of sweeps measured.
    pub sweeps: usize,
    pub cell_order: CellOrder,
    /// Augment each sweep with a reverse block pass after the coarse
    /// correction (not used by the table experiments).
    pub symmetric: bool,
    /// Relative residual tolerance of the reference solves.
    pub cg_tol: f64,
}

impl Default for TwoLevelConfig {
    fn default() -> Self {
        TwoLevelConfig {
            coarse_scale: 1,
            sweeps: 9,
            cell_order: CellOrder::Descending,
            symmetric: false,
            cg_tol: 1e-12,
        }
    }
}

/// Exact factorizations of the principal submatrices of the energy
/// operator on every cell of the fine partition.
pub struct CellBlocks {
    blocks: Vec<(Vec<u32>, SparseLdl)>,
}

impl CellBlocks {
    pub fn build(fine: &Scale, a_op: &CsrMatrix) -> Result<CellBlocks> {
        let positions = fine.space.dof_positions(&fine.mesh);
        let blocks: Result<Vec<_>> = fine
            .space
            .cell_dofs
            .par_iter()
            .map(|dofs| {
                let sub = a_op.principal_submatrix(dofs);
                let pos: Vec<[i64; 2]> =
                    dofs.iter().map(|&d| positions[d as usize]).collect();
                let ldl = SparseLdl::factor(&sub, Ordering::Positions(&pos))?;
                Ok((dofs.clone(), ldl))
            })
            .collect();
        let blocks = blocks?;
        // Blocks partition the dof set exactly.
        debug_assert_eq!(
            blocks.iter().map(|(d, _)| d.len()).sum::<usize>(),
            fine.n_dofs()
        );
        Ok(CellBlocks { blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// The coarse-space correction: prolongation plus a dense factorization
/// of the Galerkin operator `P^T A P`.
pub struct CoarseCorrection {
    pub prolong: Prolongation,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n_coarse: usize,
}

impl CoarseCorrection {
    pub fn build(coarse: &Scale, fine: &Scale, hierarchy: &MeshHierarchy, a_op: &CsrMatrix) -> Result<CoarseCorrection> {
        let prolong = build_prolongation(coarse, fine, hierarchy)?;
        let q = coarse.n_dofs();
        let mut galerkin = nalgebra::DMatrix::zeros(q, q);
        for j in 0..q {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            let ap = a_op.matvec(&prolong.apply(&e));
            let col = prolong.restrict(&ap);
            for i in 0..q {
                galerkin[(i, j)] = col[i];
            }
        }
        // Symmetrize away assembly roundoff before factoring.
        let galerkin = (&galerkin + galerkin.transpose()) * 0.5;
        let factor = nalgebra::Cholesky::new(galerkin).ok_or(Error::NotPositiveDefinite {
            index: 0,
            pivot: 0.0,
        })?;
        Ok(CoarseCorrection {
            prolong,
            factor,
            n_coarse: q,
        })
    }

    /// Solves the coarse Galerkin system for a restricted residual and
    /// prolongates the correction.
    pub fn correct(&self, residual: &[f64]) -> Vec<f64> {
        let rc = self.prolong.restrict(residual);
        let d = self
            .factor
            .solve(&nalgebra::DVector::from_column_slice(&rc));
        self.prolong.apply(d.as_slice())
    }

    pub fn solve_coarse(&self, coarse_load: &[f64]) -> Vec<f64> {
        assert_eq!(coarse_load.len(), self.n_coarse);
        let d = self
            .factor
            .solve(&nalgebra::DVector::from_column_slice(coarse_load));
        d.as_slice().to_vec()
    }
}

/// One sweep of the iteration: exact block solves over the cells in the
/// configured order, then the coarse correction. The residual is updated
/// incrementally through the symmetric rows of the operator.
pub fn two_level_sweep(
    state: &mut [f64],
    a_op: &CsrMatrix,
    rhs: &[f64],
    blocks: &CellBlocks,
    coarse: &CoarseCorrection,
    order: CellOrder,
    symmetric: bool,
) {
    let n = state.len();
    let mut r = vec![0.0; n];
    let aw = a_op.matvec(state);
    for i in 0..n {
        r[i] = rhs[i] - aw[i];
    }
    let mut block_pass = |r: &mut Vec<f64>, state: &mut [f64], rev: bool| {
        let iter: Box<dyn Iterator<Item = usize>> = if rev {
            Box::new((0..blocks.blocks.len()).rev())
        } else {
            Box::new(0..blocks.blocks.len())
        };
        let mut z = Vec::new();
        let mut rl = Vec::new();
        for b in iter {
            let (dofs, ldl) = &blocks.blocks[b];
            rl.clear();
            rl.extend(dofs.iter().map(|&d| r[d as usize]));
            z.resize(dofs.len(), 0.0);
            ldl.solve_into(&rl, &mut z);
            for (loc, &d) in dofs.iter().enumerate() {
                let zd = z[loc];
                if zd == 0.0 {
                    continue;
                }
                state[d as usize] += zd;
                for (j, v) in a_op.row(d as usize) {
                    r[j] -= v * zd;
                }
            }
        }
    };
    // The iteration applies the highest-numbered block first by default.
    let first_reversed = matches!(order, CellOrder::Descending);
    block_pass(&mut r, state, first_reversed);
    let correction = coarse.correct(&r);
    for i in 0..n {
        state[i] += correction[i];
    }
    if symmetric {
        let ac = a_op.matvec(&correction);
        for i in 0..n {
            r[i] -= ac[i];
        }
        block_pass(&mut r, state, !first_reversed);
    }
}

/// Per-level convergence measurements.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationReport {
    pub fine_scale: usize,
    pub n_dofs: usize,
    pub n_blocks: usize,
    /// Energy-norm errors against the fine reference, index 0 = initial.
    pub per_sweep_errors: Vec<f64>,
    /// `ρ^(ν) = e_ν / e_{ν-1}` for ν = 1..sweeps.
    pub reduction_factors: Vec<f64>,
    /// Geometric mean of the reduction factors.
    pub geometric_mean: f64,
    /// First sweep at which the algebraic error falls below the
    /// discretization gap, when a next-scale reference was requested.
    pub stopping_index: Option<usize>,
    /// The discretization gap `|u_{S_{K+1}} - P u_{S_K}|` in the next
    /// scale's energy norm.
    pub discretization_gap: Option<f64>,
}

/// Runs the two-level iteration on a range of fine scales, managing the
/// per-scale discretizations and reference solutions.
pub struct ConvergenceRunner<'a> {
    pub network: &'a InterfaceNetwork,
    pub hierarchy: &'a MeshHierarchy,
    pub constants: &'a NetworkConstants,
    pub coeff: &'a Coefficients,
    pub config: TwoLevelConfig,
    scales: HashMap<usize, Arc<Scale>>,
    ops: HashMap<usize, Arc<EnergyOps>>,
    references: HashMap<usize, Arc<Vec<f64>>>,
}

impl<'a> ConvergenceRunner<'a> {
    pub fn new(
        network: &'a InterfaceNetwork,
        hierarchy: &'a MeshHierarchy,
        constants: &'a NetworkConstants,
        coeff: &'a Coefficients,
        config: TwoLevelConfig,
    ) -> Self {
        ConvergenceRunner {
            network,
            hierarchy,
            constants,
            coeff,
            config,
            scales: HashMap::new(),
            ops: HashMap::new(),
            references: HashMap::new(),
        }
    }

    pub fn scale(&mut self, k: usize) -> Result<Arc<Scale>> {
        if let Some(s) = self.scales.get(&k) {
            return Ok(s.clone());
        }
        let s = Arc::new(Scale::build(self.network, self.hierarchy, k)?);
        self.scales.insert(k, s.clone());
        Ok(s)
    }

    pub fn energy(&mut self, k: usize) -> Result<Arc<EnergyOps>> {
        if let Some(o) = self.ops.get(&k) {
            return Ok(o.clone());
        }
        let scale = self.scale(k)?;
        let o = Arc::new(build_energy(&scale, self.constants, self.coeff));
        self.ops.insert(k, o.clone());
        Ok(o)
    }

    /// Injects a precomputed reference solution (e.g. from a disk cache).
    pub fn set_reference(&mut self, k: usize, u: Vec<f64>) {
        self.references.insert(k, Arc::new(u));
    }

    pub fn has_reference(&self, k: usize) -> bool {
        self.references.contains_key(&k)
    }

    /// The fine Galerkin solution at scale `k` by a direct factorization.
    /// The exponential jump weights defeat diagonally preconditioned CG at
    /// the tight reference tolerance, so the exact solve is both faster
    /// and more accurate here.
    pub fn reference(&mut self, k: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(r) = self.references.get(&k) {
            return Ok(r.clone());
        }
        let scale = self.scale(k)?;
        let ops = self.energy(k)?;
        log::info!("reference solve at scale {k} ({} dofs)", scale.n_dofs());
        let t0 = std::time::Instant::now();
        let positions = scale.space.dof_positions(&scale.mesh);
        let ldl = SparseLdl::factor(&ops.a_op, Ordering::Positions(&positions))?;
        let u = Arc::new(ldl.solve(&ops.load));
        log::info!(
            "scale {k}: factor nnz {}, {:?}",
            ldl.factor_nnz(),
            t0.elapsed()
        );
        self.references.insert(k, u.clone());
        Ok(u)
    }

    /// Frees cached scales below `k`, keeping the coarse space.
    pub fn evict_below(&mut self, k: usize) {
        let keep_coarse = self.config.coarse_scale;
        self.scales.retain(|&s, _| s == keep_coarse || s >= k);
        self.ops.retain(|&s, _| s == keep_coarse || s >= k);
        self.references.retain(|&s, _| s >= k);
    }

    /// Runs the measured iteration at fine scale `k`. When
    /// `with_stopping` is set, the (k+1)-scale discretization gap is
    /// computed and the stopping index reported.
    pub fn run_level(&mut self, k: usize, with_stopping: bool) -> Result<IterationReport> {
        let cfg = self.config.clone();
        if cfg.coarse_scale >= k {
            return Err(Error::ScaleOutOfRange(k, cfg.coarse_scale));
        }
        let fine = self.scale(k)?;
        let ops = self.energy(k)?;
        let coarse = self.scale(cfg.coarse_scale)?;
        let coarse_ops = self.energy(cfg.coarse_scale)?;
        let reference = self.reference(k)?;

        let blocks = CellBlocks::build(&fine, &ops.a_op)?;
        let correction = CoarseCorrection::build(&coarse, &fine, self.hierarchy, &ops.a_op)?;

        // Initial iterate: the coarse finite element solution.
        let u1 = correction.solve_coarse(&coarse_ops.load);
        let mut state = correction.prolong.apply(&u1);

        let error_of = |state: &[f64]| {
            let d: Vec<f64> = reference.iter().zip(state).map(|(a, b)| a - b).collect();
            h_norm(&ops, &d)
        };
        let mut errors = vec![error_of(&state)];
        for _ in 0..cfg.sweeps {
            two_level_sweep(
                &mut state,
                &ops.a_op,
                &ops.load,
                &blocks,
                &correction,
                cfg.cell_order,
                cfg.symmetric,
            );
            errors.push(error_of(&state));
        }
        let reduction_factors: Vec<f64> =
            errors.windows(2).map(|w| w[1] / w[0]).collect();
        let geometric_mean = (errors[cfg.sweeps] / errors[0]).powf(1.0 / cfg.sweeps as f64);

        let (mut stopping_index, mut discretization_gap) = (None, None);
        if with_stopping {
            let gap = self.discretization_gap(k)?;
            discretization_gap = Some(gap);
            stopping_index = errors.iter().position(|&e| e <= gap);
        }

        Ok(IterationReport {
            fine_scale: k,
            n_dofs: fine.n_dofs(),
            n_blocks: blocks.n_blocks(),
            per_sweep_errors: errors,
            reduction_factors,
            geometric_mean,
            stopping_index,
            discretization_gap,
        })
    }

    /// `|u_{S_{k+1}} - P u_{S_k}|` in the next scale's energy norm.
    pub fn discretization_gap(&mut self, k: usize) -> Result<f64> {
        let fine = self.scale(k)?;
        let next = self.scale(k + 1)?;
        let next_ops = self.energy(k + 1)?;
        let u_k = self.reference(k)?;
        let u_next = self.reference(k + 1)?;
        let p = build_prolongation(&fine, &next, self.hierarchy)?;
        let up = p.apply(&u_k);
        let d: Vec<f64> = u_next.iter().zip(&up).map(|(a, b)| a - b).collect();
        Ok(h_norm(&next_ops, &d))
    }

    /// Runs all fine scales in ascending order, evicting stale caches.
    pub fn run(
        &mut self,
        k_range: std::ops::RangeInclusive<usize>,
        stopping_levels: &[usize],
    ) -> Result<Vec<IterationReport>> {
        let mut reports = Vec::new();
        for k in k_range {
            self.evict_below(k);
            let with_stopping = stopping_levels.contains(&k);
            reports.push(self.run_level(k, with_stopping)?);
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_localized_network, constants_for, CkConvention, NetworkKind};

    struct Fixture {
        network: InterfaceNetwork,
        hierarchy: MeshHierarchy,
        constants: NetworkConstants,
        coeff: Coefficients,
    }

    fn fixture(k_max: usize) -> Fixture {
        let network = build_localized_network(k_max).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, k_max);
        let constants = constants_for(&network, 1.0, k_max, CkConvention::Table).unwrap();
        Fixture {
            network,
            hierarchy,
            constants,
            coeff: Coefficients::default(),
        }
    }

    #[test]
    fn sweep_fixes_the_exact_solution() {
        let f = fixture(2);
        let mut runner = ConvergenceRunner::new(
            &f.network,
            &f.hierarchy,
            &f.constants,
            &f.coeff,
            TwoLevelConfig::default(),
        );
        let fine = runner.scale(2).unwrap();
        let ops = runner.energy(2).unwrap();
        let coarse = runner.scale(1).unwrap();
        let exact = runner.reference(2).unwrap();
        let blocks = CellBlocks::build(&fine, &ops.a_op).unwrap();
        let cc = CoarseCorrection::build(&coarse, &fine, &f.hierarchy, &ops.a_op).unwrap();
        let mut state = exact.as_ref().clone();
        two_level_sweep(
            &mut state,
            &ops.a_op,
            &ops.load,
            &blocks,
            &cc,
            CellOrder::Descending,
            false,
        );
        let scale = exact.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for (a, b) in state.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-11 * scale);
        }
    }

    #[test]
    fn sweep_matches_dense_error_propagation_product() {
        // One sweep applied to the error equals the dense operator
        // (I - P_0)(I - P_1)...(I - P_m) with descending block order.
        let f = fixture(2);
        let mut runner = ConvergenceRunner::new(
            &f.network,
            &f.hierarchy,
            &f.constants,
            &f.coeff,
            TwoLevelConfig::default(),
        );
        let fine = runner.scale(2).unwrap();
        let ops = runner.energy(2).unwrap();
        let coarse = runner.scale(1).unwrap();
        let blocks = CellBlocks::build(&fine, &ops.a_op).unwrap();
        let cc = CoarseCorrection::build(&coarse, &fine, &f.hierarchy, &ops.a_op).unwrap();
        let n = fine.n_dofs();
        let a = ops.a_op.to_dense();
        let exact = a
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&ops.load))
            .unwrap();

        // Dense a-orthogonal projector onto a dof set.
        let projector = |dofs: &[u32]| {
            let m = dofs.len();
            let mut sub = nalgebra::DMatrix::zeros(m, m);
            for (li, &di) in dofs.iter().enumerate() {
                for (lj, &dj) in dofs.iter().enumerate() {
                    sub[(li, lj)] = a[(di as usize, dj as usize)];
                }
            }
            let inv = sub.lu();
            let mut e = nalgebra::DMatrix::zeros(n, m);
            for (li, &di) in dofs.iter().enumerate() {
                e[(di as usize, li)] = 1.0;
            }
            let ea = e.transpose() * &a;
            let sol = inv.solve(&ea).unwrap();
            &e * sol
        };
        let mut prop = nalgebra::DMatrix::identity(n, n);
        // (I - P_0) (I - P_1) ... (I - P_m): rightmost factor applied
        // first, so build the product left to right.
        let p_coarse = {
            let pm = cc.prolong.matrix.to_dense();
            let g = pm.transpose() * &a * &pm;
            let sol = g.lu().solve(&(pm.transpose() * &a)).unwrap();
            &pm * sol
        };
        prop = (nalgebra::DMatrix::identity(n, n) - p_coarse) * prop;
        for dofs in fine.space.cell_dofs.iter() {
            let p = projector(dofs);
            prop = prop * (nalgebra::DMatrix::identity(n, n) - p);
        }

        let u1 = cc.solve_coarse(&runner.energy(1).unwrap().load);
        let state0 = cc.prolong.apply(&u1);
        let e0: Vec<f64> = (0..n).map(|i| exact[i] - state0[i]).collect();
        let expected = &prop * nalgebra::DVector::from_column_slice(&e0);

        let mut state = state0.clone();
        two_level_sweep(
            &mut state,
            &ops.a_op,
            &ops.load,
            &blocks,
            &cc,
            CellOrder::Descending,
            false,
        );
        let scale = e0.iter().map(|x| x.abs()).fold(1e-30, f64::max);
        for i in 0..n {
            let got = exact[i] - state[i];
            assert!(
                (got - expected[i]).abs() < 1e-12 * scale.max(1.0),
                "dof {i}: {got} vs {}",
                expected[i]
            );
        }
    }

    #[test]
    fn factors_decrease_errors_and_stabilize() {
        let f = fixture(3);
        let mut runner = ConvergenceRunner::new(
            &f.network,
            &f.hierarchy,
            &f.constants,
            &f.coeff,
            TwoLevelConfig::default(),
        );
        let report = runner.run_level(2, true).unwrap();
        for w in report.per_sweep_errors.windows(2) {
            assert!(w[1] < w[0], "error not strictly decreasing");
        }
        for &rho in &report.reduction_factors {
            assert!(rho > 0.0 && rho < 1.0);
        }
        let n = report.reduction_factors.len();
        assert!((report.reduction_factors[n - 1] - report.reduction_factors[n - 2]).abs() <= 0.005);
        // Stopping data present.
        assert!(report.discretization_gap.unwrap() > 0.0);
        assert!(report.stopping_index.is_some());
    }

    #[test]
    fn cell_order_changes_factor_only_slightly() {
        let f = fixture(2);
        let mut mean = HashMap::new();
        for order in [CellOrder::Descending, CellOrder::Ascending] {
            let mut runner = ConvergenceRunner::new(
                &f.network,
                &f.hierarchy,
                &f.constants,
                &f.coeff,
                TwoLevelConfig {
                    cell_order: order,
                    ..TwoLevelConfig::default()
                },
            );
            let report = runner.run_level(2, false).unwrap();
            mean.insert(
                match order {
                    CellOrder::Descending => "d",
                    CellOrder::Ascending => "a",
                },
                report.geometric_mean,
            );
        }
        assert!((mean["d"] - mean["a"]).abs() <= 0.02);
    }

    #[test]
    fn symmetric_variant_converges_faster_per_sweep() {
        let f = fixture(2);
        let run = |symmetric: bool| {
            let mut runner = ConvergenceRunner::new(
                &f.network,
                &f.hierarchy,
                &f.constants,
                &f.coeff,
                TwoLevelConfig {
                    symmetric,
                    ..TwoLevelConfig::default()
                },
            );
            runner.run_level(2, false).unwrap().geometric_mean
        };
        assert!(run(true) < run(false));
    }

    #[test]
    fn error_monotone_across_individual_block_corrections() {
        // Each block correction is an a-orthogonal projection of the
        // error, so the energy error cannot increase step by step.
        let f = fixture(2);
        let mut runner = ConvergenceRunner::new(
            &f.network,
            &f.hierarchy,
            &f.constants,
            &f.coeff,
            TwoLevelConfig::default(),
        );
        let fine = runner.scale(2).unwrap();
        let ops = runner.energy(2).unwrap();
        let coarse = runner.scale(1).unwrap();
        let exact = runner.reference(2).unwrap();
        let cc = CoarseCorrection::build(&coarse, &fine, &f.hierarchy, &ops.a_op).unwrap();
        let blocks = CellBlocks::build(&fine, &ops.a_op).unwrap();
        let mut state = vec![0.0; fine.n_dofs()];
        let mut r = ops.load.clone();
        let err = |state: &[f64]| {
            let d: Vec<f64> = exact.iter().zip(state).map(|(a, b)| a - b).collect();
            h_norm(&ops, &d)
        };
        let mut prev = err(&state);
        for b in (0..blocks.blocks.len()).rev() {
            let (dofs, ldl) = &blocks.blocks[b];
            let rl: Vec<f64> = dofs.iter().map(|&d| r[d as usize]).collect();
            let z = ldl.solve(&rl);
            for (loc, &d) in dofs.iter().enumerate() {
                state[d as usize] += z[loc];
                for (j, v) in ops.a_op.row(d as usize) {
                    r[j] -= v * z[loc];
                }
            }
            let e = err(&state);
            assert!(e <= prev * (1.0 + 1e-12));
            prev = e;
        }
        let corr = cc.correct(&r);
        for i in 0..state.len() {
            state[i] += corr[i];
        }
        assert!(err(&state) <= prev * (1.0 + 1e-12));
    }
}
