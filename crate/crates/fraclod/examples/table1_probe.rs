// Full factor rows for block-at-coarse-scale variants.
use fraclod::assembly::{assemble_gradient, assemble_jump, assemble_load, MatrixField, ScalarField};
use fraclod::femspace::Scale;
use fraclod::geometry::{build_localized_network, constants_for, CkConvention, NetworkKind};
use fraclod::linsolve::{Ordering, SparseLdl};
use fraclod::mesh::MeshHierarchy;
use fraclod::sparse::CsrMatrix;
use fraclod::twolevel::CoarseCorrection;

fn blocks_at_scale(fine: &Scale, part: &Scale, hierarchy: &MeshHierarchy) -> Vec<Vec<u32>> {
    let mut groups = vec![Vec::new(); part.partition.n_cells()];
    for (d, dof) in fine.space.dofs.iter().enumerate() {
        let t_c = hierarchy.ancestor_triangle(
            fine.mesh.level,
            dof.rep_triangle as usize,
            part.mesh.level,
        );
        groups[part.partition.cell_of_triangle[t_c] as usize].push(d as u32);
    }
    groups
}

fn rows(
    fine: &Scale,
    coarse: &Scale,
    hierarchy: &MeshHierarchy,
    a_op: &CsrMatrix,
    coarse_a: &CsrMatrix,
    blocks: &[Vec<u32>],
    sweeps: usize,
) -> Vec<f64> {
    let factors: Vec<(Vec<u32>, SparseLdl)> = blocks
        .iter()
        .map(|dofs| {
            let sub = a_op.principal_submatrix(dofs);
            let pos: Vec<[i64; 2]> = dofs
                .iter()
                .map(|&d| fine.mesh.vertices[fine.space.dofs[d as usize].vertex as usize])
                .collect();
            (dofs.clone(), SparseLdl::factor(&sub, Ordering::Positions(&pos)).unwrap())
        })
        .collect();
    let cc = CoarseCorrection::build(coarse, fine, hierarchy, a_op).unwrap();
    let n = fine.n_dofs();
    let pos = fine.space.dof_positions(&fine.mesh);
    let ldl = SparseLdl::factor(a_op, Ordering::Positions(&pos)).unwrap();
    let load = assemble_load(&fine.space, &fine.mesh, &ScalarField::One);
    let exact = ldl.solve(&load);
    let cl = assemble_load(&coarse.space, &coarse.mesh, &ScalarField::One);
    let cpos = coarse.space.dof_positions(&coarse.mesh);
    let cldl = SparseLdl::factor(coarse_a, Ordering::Positions(&cpos)).unwrap();
    let u1 = cldl.solve(&cl);
    let mut state = cc.prolong.apply(&u1);
    let mut errors = vec![{
        let d: Vec<f64> = exact.iter().zip(&state).map(|(a, b)| a - b).collect();
        a_op.bilinear(&d, &d).sqrt()
    }];
    for _ in 0..sweeps {
        let aw = a_op.matvec(&state);
        let mut r: Vec<f64> = load.iter().zip(&aw).map(|(b, a)| b - a).collect();
        for (dofs, ldl) in factors.iter().rev() {
            let rl: Vec<f64> = dofs.iter().map(|&d| r[d as usize]).collect();
            let z = ldl.solve(&rl);
            for (loc, &d) in dofs.iter().enumerate() {
                if z[loc] != 0.0 {
                    state[d as usize] += z[loc];
                    for (j, v) in a_op.row(d as usize) {
                        r[j] -= v * z[loc];
                    }
                }
            }
        }
        let corr = cc.correct(&r);
        for i in 0..n {
            state[i] += corr[i];
        }
        let d: Vec<f64> = exact.iter().zip(&state).map(|(a, b)| a - b).collect();
        errors.push(a_op.bilinear(&d, &d).sqrt());
    }
    errors.windows(2).map(|w| w[1] / w[0]).collect()
}

fn main() {
    let k_max = 4;
    let network = build_localized_network(k_max).unwrap();
    let hierarchy = MeshHierarchy::build(NetworkKind::Localized, k_max);
    let scales: Vec<Scale> = (1..=k_max)
        .map(|k| Scale::build(&network, &hierarchy, k).unwrap())
        .collect();
    println!("paper K=2: 0.208 0.221 0.223 0.224... | K=3: 0.247 0.259 0.261... | K=4: 0.252 0.263 0.265 0.266...");
    let base = constants_for(&network, 1.0, k_max, CkConvention::Table).unwrap();
    for s in [1.0f64, 1.25, 1.5, 2.0, 3.0] {
        let mut constants = base.clone();
        for w in constants.jump_weights.iter_mut() {
            *w *= s;
        }
        println!("--- jump scale {s} (w_1 = {}) ---", 4.0 * s);
        for kf in [2usize, 3, 4] {
            let fine = &scales[kf - 1];
            let g = assemble_gradient(&fine.space, &fine.mesh, &MatrixField::Identity);
            let j = assemble_jump(&fine.space, &fine.mesh, &constants, &ScalarField::One);
            let a = g.add(&j);
            let cg = assemble_gradient(&scales[0].space, &scales[0].mesh, &MatrixField::Identity);
            let cj = assemble_jump(&scales[0].space, &scales[0].mesh, &constants, &ScalarField::One);
            let ca = cg.add(&cj);
            let blocks = blocks_at_scale(fine, &scales[0], &hierarchy);
            let r = rows(fine, &scales[0], &hierarchy, &a, &ca, &blocks, 9);
            let strs: Vec<String> = r.iter().map(|x| format!("{x:.3}")).collect();
            println!("K={kf}: {}", strs.join(" "));
        }
    }
}
