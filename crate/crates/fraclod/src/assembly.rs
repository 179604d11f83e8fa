//! Assembly of the gradient form, the exponentially weighted interface
//! jump form, mass matrices and load vectors on broken spaces, plus the
//! associated norms.
//!
//! Quadrature: centroid rule for the diffusion coefficient (exact for the
//! constant coefficients of the experiments), the exact two-point P1 edge
//! mass for jumps, and the three-point edge-midpoint rule for loads
//! (exact for quadratic integrands).

use std::sync::Arc;

use crate::femspace::{BrokenSpace, Scale};
use crate::geometry::NetworkConstants;
use crate::mesh::Triangulation;
use crate::sparse::{CooBuilder, CsrMatrix};

/// 2x2 symmetric diffusion coefficient field.
pub enum MatrixField {
    Identity,
    Constant([[f64; 2]; 2]),
    Fn(Box<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>),
}

impl MatrixField {
    fn at(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            MatrixField::Identity => [[1.0, 0.0], [0.0, 1.0]],
            MatrixField::Constant(a) => *a,
            MatrixField::Fn(f) => f(p),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, MatrixField::Identity)
    }
}

/// Scalar field for the interface weight and the source term.
pub enum ScalarField {
    One,
    Constant(f64),
    Fn(Box<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn at(&self, p: [f64; 2]) -> f64 {
        match self {
            ScalarField::One => 1.0,
            ScalarField::Constant(c) => *c,
            ScalarField::Fn(f) => f(p),
        }
    }

    pub fn is_one(&self) -> bool {
        matches!(self, ScalarField::One)
    }
}

/// Problem coefficients; the experiments run with all defaults.
pub struct Coefficients {
    pub a: MatrixField,
    pub b: ScalarField,
    pub f: ScalarField,
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients {
            a: MatrixField::Identity,
            b: ScalarField::One,
            f: ScalarField::One,
        }
    }
}

impl Coefficients {
    pub fn is_default_form(&self) -> bool {
        self.a.is_identity() && self.b.is_one()
    }
}

/// P1 stiffness with the diffusion coefficient evaluated at centroids.
/// Triangles couple only dofs of their own cell; degenerate triangles are
/// a construction bug and panic.
pub fn assemble_gradient(
    space: &BrokenSpace,
    mesh: &Triangulation,
    coeff: &MatrixField,
) -> CsrMatrix {
    let n = space.n_dofs();
    let mut b = CooBuilder::with_capacity(n, n, mesh.n_triangles() * 9);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.point(v)).collect();
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        assert!(area2 > 0.0, "degenerate triangle {t}");
        let area = 0.5 * area2;
        // grad λ_i = (b_i, c_i) / (2 area).
        let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            [
                (p[j][1] - p[k][1]) / area2,
                (p[k][0] - p[j][0]) / area2,
            ]
        });
        let a = coeff.at(mesh.triangle_centroid(t));
        let dofs = space.triangle_dofs[t];
        for i in 0..3 {
            let di = match dofs[i] {
                Some(d) => d as usize,
                None => continue,
            };
            for j in 0..3 {
                let dj = match dofs[j] {
                    Some(d) => d as usize,
                    None => continue,
                };
                let agj = [
                    a[0][0] * grads[j][0] + a[0][1] * grads[j][1],
                    a[1][0] * grads[j][0] + a[1][1] * grads[j][1],
                ];
                let val = area * (grads[i][0] * agj[0] + grads[i][1] * agj[1]);
                b.push(di, dj, val);
            }
        }
    }
    b.build_symmetric()
}

/// Weighted jump form: for each interface edge of level j the exact P1
/// edge mass `w_j B |e| / 6 [[2,1],[1,2]]` applied to the two-sided trace
/// differences.
pub fn assemble_jump(
    space: &BrokenSpace,
    mesh: &Triangulation,
    constants: &NetworkConstants,
    b_field: &ScalarField,
) -> CsrMatrix {
    let n = space.n_dofs();
    let mut bld = CooBuilder::with_capacity(n, n, space.interface_pairs.len() * 16);
    for pair in &space.interface_pairs {
        let e = &mesh.edges[pair.edge as usize];
        let pa = mesh.point(e.a);
        let pb = mesh.point(e.b);
        let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
        let w = constants.jump_weight(pair.level as usize) * b_field.at(mid);
        let scale = w * pair.length / 6.0;
        // Signed dof list: jumps are (plus - minus) at both endpoints.
        let signed = |i: usize| [(pair.plus[i], 1.0), (pair.minus[i], -1.0)];
        let mass = [[2.0 * scale, scale], [scale, 2.0 * scale]];
        for i in 0..2 {
            for (di, si) in signed(i) {
                let di = match di {
                    Some(d) => d as usize,
                    None => continue,
                };
                for l in 0..2 {
                    for (dl, sl) in signed(l) {
                        let dl = match dl {
                            Some(d) => d as usize,
                            None => continue,
                        };
                        bld.push(di, dl, si * sl * mass[i][l]);
                    }
                }
            }
        }
    }
    bld.build_symmetric()
}

/// P1 mass matrix (per-cell dofs; broken across interfaces).
pub fn assemble_mass(space: &BrokenSpace, mesh: &Triangulation) -> CsrMatrix {
    let n = space.n_dofs();
    let mut b = CooBuilder::with_capacity(n, n, mesh.n_triangles() * 9);
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let dofs = space.triangle_dofs[t];
        for i in 0..3 {
            let di = match dofs[i] {
                Some(d) => d as usize,
                None => continue,
            };
            for j in 0..3 {
                let dj = match dofs[j] {
                    Some(d) => d as usize,
                    None => continue,
                };
                let val = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                b.push(di, dj, val);
            }
        }
    }
    b.build_symmetric()
}

/// Load vector by the three-point edge-midpoint rule.
pub fn assemble_load(space: &BrokenSpace, mesh: &Triangulation, f: &ScalarField) -> Vec<f64> {
    let mut load = vec![0.0; space.n_dofs()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.point(v)).collect();
        let area = mesh.triangle_area(t);
        // Midpoint opposite local vertex i.
        let fm: [f64; 3] = std::array::from_fn(|i| {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            f.at([(p[j][0] + p[k][0]) / 2.0, (p[j][1] + p[k][1]) / 2.0])
        });
        let dofs = space.triangle_dofs[t];
        for i in 0..3 {
            if let Some(d) = dofs[i] {
                // λ_i is 1/2 at the two adjacent midpoints, 0 opposite.
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                load[d as usize] += area / 3.0 * 0.5 * (fm[j] + fm[k]);
            }
        }
    }
    load
}

/// Assembled operators of one scale: the unit-coefficient energy operator
/// defining the H-norm, the coefficient form, the mass matrix and the
/// load vector. With default coefficients the two operators are shared,
/// so the norms agree bitwise.
pub struct EnergyOps {
    pub h_op: Arc<CsrMatrix>,
    pub a_op: Arc<CsrMatrix>,
    pub mass: Arc<CsrMatrix>,
    pub load: Vec<f64>,
}

pub fn build_energy(scale: &Scale, constants: &NetworkConstants, coeff: &Coefficients) -> EnergyOps {
    let grad = assemble_gradient(&scale.space, &scale.mesh, &MatrixField::Identity);
    let jump = assemble_jump(&scale.space, &scale.mesh, constants, &ScalarField::One);
    let h_op = Arc::new(grad.add(&jump));
    let a_op = if coeff.is_default_form() {
        h_op.clone()
    } else {
        let g = assemble_gradient(&scale.space, &scale.mesh, &coeff.a);
        let j = assemble_jump(&scale.space, &scale.mesh, constants, &coeff.b);
        Arc::new(g.add(&j))
    };
    let mass = Arc::new(assemble_mass(&scale.space, &scale.mesh));
    let load = assemble_load(&scale.space, &scale.mesh, &coeff.f);
    EnergyOps {
        h_op,
        a_op,
        mass,
        load,
    }
}

fn energy_norm(op: &CsrMatrix, v: &[f64]) -> f64 {
    op.bilinear(v, v).max(0.0).sqrt()
}

/// Broken H1-plus-weighted-jump norm.
pub fn h_norm(ops: &EnergyOps, v: &[f64]) -> f64 {
    energy_norm(&ops.h_op, v)
}

/// Energy norm of the coefficient form.
pub fn a_norm(ops: &EnergyOps, v: &[f64]) -> f64 {
    energy_norm(&ops.a_op, v)
}

pub fn l2_norm(ops: &EnergyOps, v: &[f64]) -> f64 {
    energy_norm(&ops.mass, v)
}
