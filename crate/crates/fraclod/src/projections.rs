//! Projection operators between a fine broken space and a coarser one:
//! the per-cell mean-preserving seminorm-minimizing projection, the
//! Clément-type averaging onto the coarse space, and their composite as
//! an explicit sparse matrix.
//!
//! On a coarse cell without internal fine-scale interfaces the first
//! projection is the identity. Otherwise it solves the cell Neumann
//! problem over the continuous P1 functions on the fine triangles of the
//! cell, constrained to preserve the cell mean: interior cells carry a
//! constant stiffness kernel and use the grounded solver, cells touching
//! the domain boundary are positive definite and use the Schur solver.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{h_norm, l2_norm, EnergyOps};
use crate::femspace::{build_prolongation, Prolongation, Scale};
use crate::linsolve::{ConstrainedSpd, GroundedNeumann};
use crate::mesh::MeshHierarchy;
use crate::sparse::{from_rows, CooBuilder, CsrMatrix};
use crate::Result;

enum NeumannSolver {
    Grounded(GroundedNeumann),
    Constrained(ConstrainedSpd),
}

impl NeumannSolver {
    fn solve(&self, rhs: &[f64], mean_target: f64) -> Vec<f64> {
        match self {
            NeumannSolver::Grounded(g) => g.solve(rhs, mean_target),
            NeumannSolver::Constrained(c) => c.solve_with_gap(rhs, Some(&[mean_target])),
        }
    }
}

struct CellSolve {
    /// Fine dofs of the coarse cell, ascending.
    fine_dofs: Vec<u32>,
    /// Continuous local vertices (not on the domain boundary), ascending.
    vertices: Vec<u32>,
    /// Local fine dof -> local vertex.
    fine_to_vert: Vec<u32>,
    /// Vertex-vertex Neumann stiffness on the cell.
    kmat: CsrMatrix,
    /// Mixed gradients: rows vertices, columns local fine dofs.
    bmat: CsrMatrix,
    /// Integration weights of the local fine basis.
    q: Vec<f64>,
    /// Integration weights of the continuous local basis.
    m: Vec<f64>,
    solver: NeumannSolver,
}

enum CellProjector {
    /// No internal interfaces at the fine scale: fine dofs are one per
    /// vertex and the projection copies them.
    Identity,
    Solve(Box<CellSolve>),
}

/// Everything needed to apply the coarse-scale projections to fine
/// vectors: the composite sparse matrix, the averaging matrix, the
/// prolongation back to the fine space and the per-cell solvers.
pub struct ProjectionStack {
    pub coarse_scale: usize,
    pub fine_scale: usize,
    pub n_fine: usize,
    pub n_coarse: usize,
    /// Coarse mesh size, the scaling of the approximation bound.
    pub coarse_h: f64,
    pub prolong: Prolongation,
    /// Clément averaging (coarse dofs x fine dofs).
    pub averaging: CsrMatrix,
    /// Composite projection matrix (coarse dofs x fine dofs).
    pub pi_k: CsrMatrix,
    /// Fine dofs of each coarse cell.
    pub fine_dofs_of_cell: Vec<Vec<u32>>,
    /// Coarse dofs of each coarse cell.
    pub coarse_dofs_of_cell: Vec<Vec<u32>>,
    /// Coarse cell of each fine cell.
    pub coarse_cell_of_fine_cell: Vec<u32>,
    cells: Vec<CellProjector>,
}

impl ProjectionStack {
    pub fn build(
        coarse: &Scale,
        fine: &Scale,
        hierarchy: &MeshHierarchy,
    ) -> Result<ProjectionStack> {
        let prolong = build_prolongation(coarse, fine, hierarchy)?;
        let n_fine = fine.n_dofs();
        let n_coarse = coarse.n_dofs();
        let fine_level = fine.mesh.level;
        let coarse_level = coarse.mesh.level;

        // Assign fine cells (and their dofs) to coarse cells.
        let n_cells = coarse.partition.n_cells();
        let mut fine_cells_of_cell: Vec<Vec<u32>> = vec![Vec::new(); n_cells];
        let mut coarse_cell_of_fine_cell = vec![0u32; fine.partition.n_cells()];
        for (fc, cell) in fine.partition.cells.iter().enumerate() {
            let t_c = hierarchy.ancestor_triangle(
                fine_level,
                cell.triangles[0] as usize,
                coarse_level,
            );
            let cc = coarse.partition.cell_of_triangle[t_c];
            coarse_cell_of_fine_cell[fc] = cc;
            fine_cells_of_cell[cc as usize].push(fc as u32);
        }
        let mut fine_dofs_of_cell: Vec<Vec<u32>> = vec![Vec::new(); n_cells];
        for (cc, fcs) in fine_cells_of_cell.iter().enumerate() {
            let mut dofs = Vec::new();
            for &fc in fcs {
                dofs.extend_from_slice(&fine.space.cell_dofs[fc as usize]);
            }
            dofs.sort_unstable();
            fine_dofs_of_cell[cc] = dofs;
        }

        // Clément averaging matrix: the coefficient at a coarse dof is the
        // mean over the union of coarse triangles at its vertex within its
        // cell, integrated exactly on the fine descendants.
        let desc_factor = 4usize.pow(fine_level - coarse_level);
        let fine_area = 1.0 / (fine.mesh.res as f64 * fine.mesh.res as f64 * 2.0);
        let mut averaging_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_coarse];
        for (cd, dof) in coarse.space.dofs.iter().enumerate() {
            let row = &mut averaging_rows[cd];
            let mut omega_area = 0.0;
            for &t_c in &coarse.partition.cells[dof.cell as usize].triangles {
                if !coarse.mesh.triangles[t_c as usize].contains(&dof.vertex) {
                    continue;
                }
                omega_area += coarse.mesh.triangle_area(t_c as usize);
                let lo = t_c as usize * desc_factor;
                for t_f in lo..lo + desc_factor {
                    for d in fine.space.triangle_dofs[t_f].iter().flatten() {
                        row.push((*d, fine_area / 3.0));
                    }
                }
            }
            for e in row.iter_mut() {
                e.1 /= omega_area;
            }
        }
        let averaging = from_rows(n_fine, averaging_rows.clone(), false);

        // Per-cell projectors, built concurrently (independent solves).
        let cells: Vec<CellProjector> = (0..n_cells)
            .into_par_iter()
            .map(|cc| {
                if fine_cells_of_cell[cc].len() == 1 {
                    CellProjector::Identity
                } else {
                    CellProjector::Solve(Box::new(build_cell_solve(
                        fine,
                        &fine_cells_of_cell[cc],
                        &fine_dofs_of_cell[cc],
                    )))
                }
            })
            .collect();

        // Composite matrix: identity cells reuse the averaging rows; solve
        // cells get one adjoint cell solve per coarse dof.
        let coarse_dofs_of_cell: Vec<Vec<u32>> = coarse.space.cell_dofs.clone();
        let mut pi_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_coarse];
        for cc in 0..n_cells {
            match &cells[cc] {
                CellProjector::Identity => {
                    for &cd in &coarse_dofs_of_cell[cc] {
                        pi_rows[cd as usize] = averaging_rows[cd as usize].clone();
                    }
                }
                CellProjector::Solve(cs) => {
                    let vert_local: std::collections::HashMap<u32, usize> = cs
                        .vertices
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (v, i))
                        .collect();
                    for &cd in &coarse_dofs_of_cell[cc] {
                        // Integrals of the continuous local basis over the
                        // averaging patch of the coarse dof.
                        let mut rho = vec![0.0; cs.vertices.len()];
                        let dof = coarse.space.dofs[cd as usize];
                        let mut area = 0.0;
                        for &t_c in &coarse.partition.cells[dof.cell as usize].triangles {
                            if !coarse.mesh.triangles[t_c as usize].contains(&dof.vertex) {
                                continue;
                            }
                            area += coarse.mesh.triangle_area(t_c as usize);
                            let lo = t_c as usize * desc_factor;
                            for t_f in lo..lo + desc_factor {
                                for &v in &fine.mesh.triangles[t_f] {
                                    if let Some(&lv) = vert_local.get(&v) {
                                        rho[lv] += fine_area / 3.0;
                                    }
                                }
                            }
                        }
                        // Adjoint solve: the saddle system is symmetric, so
                        // the matrix row is B^T y_w + q y_λ with (y_w, y_λ)
                        // solving for right-hand side (ρ, 0).
                        let y_w = cs.solver.solve(&rho, 0.0);
                        let ky = cs.kmat.matvec(&y_w);
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for i in 0..rho.len() {
                            num += cs.m[i] * (rho[i] - ky[i]);
                            den += cs.m[i] * cs.m[i];
                        }
                        let y_lambda = num / den;
                        let bty = cs.bmat.transpose_matvec(&y_w);
                        let row = &mut pi_rows[cd as usize];
                        for (loc, &fd) in cs.fine_dofs.iter().enumerate() {
                            let val = (bty[loc] + cs.q[loc] * y_lambda) / area;
                            if val != 0.0 {
                                row.push((fd, val));
                            }
                        }
                    }
                }
            }
        }
        let pi_k = from_rows(n_fine, pi_rows, false);

        Ok(ProjectionStack {
            coarse_scale: coarse.k,
            fine_scale: fine.k,
            n_fine,
            n_coarse,
            coarse_h: coarse.mesh.mesh_size(),
            prolong,
            averaging,
            pi_k,
            fine_dofs_of_cell,
            coarse_dofs_of_cell,
            coarse_cell_of_fine_cell,
            cells,
        })
    }

    /// Per-cell mean-preserving seminorm minimization: removes jumps
    /// across interfaces finer than the coarse scale.
    pub fn apply_pi_hk(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_fine);
        let mut out = v.to_vec();
        for cell in &self.cells {
            if let CellProjector::Solve(cs) = cell {
                let v_local: Vec<f64> = cs.fine_dofs.iter().map(|&d| v[d as usize]).collect();
                let rhs = cs.bmat.matvec(&v_local);
                let g: f64 = cs.q.iter().zip(&v_local).map(|(a, b)| a * b).sum();
                let w = cs.solver.solve(&rhs, g);
                for (loc, &d) in cs.fine_dofs.iter().enumerate() {
                    out[d as usize] = w[cs.fine_to_vert[loc] as usize];
                }
            }
        }
        out
    }

    /// Clément averaging of a per-cell continuous fine vector.
    pub fn apply_pi_sk(&self, v: &[f64]) -> Vec<f64> {
        self.averaging.matvec(v)
    }

    /// The composite projection applied through the explicit matrix.
    pub fn apply_pi_k(&self, v: &[f64]) -> Vec<f64> {
        self.pi_k.matvec(v)
    }

    pub fn is_identity_cell(&self, cell: usize) -> bool {
        matches!(self.cells[cell], CellProjector::Identity)
    }
}

fn build_cell_solve(fine: &Scale, fine_cells: &[u32], fine_dofs: &[u32]) -> CellSolve {
    let mesh = &fine.mesh;
    let mut triangles: Vec<u32> = Vec::new();
    for &fc in fine_cells {
        triangles.extend_from_slice(&fine.partition.cells[fc as usize].triangles);
    }
    let mut vertices: Vec<u32> = Vec::new();
    for &t in &triangles {
        for &v in &mesh.triangles[t as usize] {
            if !mesh.is_boundary_vertex(v) {
                vertices.push(v);
            }
        }
    }
    vertices.sort_unstable();
    vertices.dedup();
    let vert_local: std::collections::HashMap<u32, u32> = vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    let dof_local: std::collections::HashMap<u32, u32> = fine_dofs
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, i as u32))
        .collect();
    let fine_to_vert: Vec<u32> = fine_dofs
        .iter()
        .map(|&d| vert_local[&fine.space.dofs[d as usize].vertex])
        .collect();

    let nv = vertices.len();
    let nf = fine_dofs.len();
    let mut kb = CooBuilder::with_capacity(nv, nv, triangles.len() * 9);
    let mut bb = CooBuilder::with_capacity(nv, nf, triangles.len() * 9);
    let mut q = vec![0.0; nf];
    let mut m = vec![0.0; nv];
    let mut touches_boundary = false;
    for &t in &triangles {
        let t = t as usize;
        let tri = mesh.triangles[t];
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.point(v)).collect();
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let area = 0.5 * area2;
        let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2]
        });
        let verts_loc: [Option<u32>; 3] = std::array::from_fn(|i| vert_local.get(&tri[i]).copied());
        let dofs_loc: [Option<u32>; 3] = std::array::from_fn(|i| {
            fine.space.triangle_dofs[t][i].and_then(|d| dof_local.get(&d).copied())
        });
        for i in 0..3 {
            match verts_loc[i] {
                Some(vi) => {
                    m[vi as usize] += area / 3.0;
                    for j in 0..3 {
                        let dot = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        if let Some(vj) = verts_loc[j] {
                            kb.push(vi as usize, vj as usize, dot);
                        }
                        if let Some(dj) = dofs_loc[j] {
                            bb.push(vi as usize, dj as usize, dot);
                        }
                    }
                }
                None => touches_boundary = true,
            }
            if let Some(di) = dofs_loc[i] {
                q[di as usize] += area / 3.0;
            }
        }
    }
    let kmat = kb.build_symmetric();
    let bmat = bb.build();
    let positions: Vec<[i64; 2]> = vertices
        .iter()
        .map(|&v| mesh.vertices[v as usize])
        .collect();
    let solver = if touches_boundary {
        // Stiffness is positive definite; the mean is a genuine constraint.
        let row: Vec<(u32, f64)> = m.iter().enumerate().map(|(i, &w)| (i as u32, w)).collect();
        NeumannSolver::Constrained(
            ConstrainedSpd::new(&kmat, vec![row], Some(&positions))
                .expect("cell stiffness with boundary vertices is SPD"),
        )
    } else {
        NeumannSolver::Grounded(
            GroundedNeumann::new(&kmat, m.clone(), Some(&positions))
                .expect("grounded cell stiffness is SPD"),
        )
    };
    CellSolve {
        fine_dofs: fine_dofs.to_vec(),
        vertices,
        fine_to_vert,
        kmat,
        bmat,
        q,
        m,
        solver,
    }
}

/// Empirical stability and approximation ratios over seeded random fine
/// vectors: `h_norm(P Π_k v) / h_norm(v)` and
/// `l2_norm(v - P Π_k v) / (h_k h_norm(v))`.
#[derive(Debug, Clone, Copy)]
pub struct BoundsReport {
    pub trials: usize,
    pub max_stability_ratio: f64,
    pub max_approximation_ratio: f64,
}

pub fn verify_projection_bounds(
    stack: &ProjectionStack,
    fine_ops: &EnergyOps,
    trials: usize,
    seed: u64,
) -> BoundsReport {
    assert!(trials >= 1);
    let mut stab = 0.0f64;
    let mut approx = 0.0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::geometry::mix_seed(&[
            seed,
            0x626f756e6473,
            trial as u64,
        ]));
        let v: Vec<f64> = (0..stack.n_fine).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = h_norm(fine_ops, &v);
        if hv == 0.0 {
            continue;
        }
        let proj = stack.prolong.apply(&stack.apply_pi_k(&v));
        stab = stab.max(h_norm(fine_ops, &proj) / hv);
        let diff: Vec<f64> = v.iter().zip(&proj).map(|(a, b)| a - b).collect();
        approx = approx.max(l2_norm(fine_ops, &diff) / (stack.coarse_h * hv));
    }
    BoundsReport {
        trials,
        max_stability_ratio: stab,
        max_approximation_ratio: approx,
    }
}
