//! Broken P1 finite element spaces with per-cell duplicated interface
//! degrees of freedom, and prolongation between scales.
//!
//! A vertex interior to a cell carries one dof; a vertex on the interface
//! network carries one dof per adjacent cell; vertices on the domain
//! boundary carry none. Jump pairs are stored per interface edge with the
//! side orientation fixed by the normal convention `ν·e_m > 0`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::geometry::{extract_cells, CellPartition, InterfaceNetwork, Segment};
use crate::mesh::{MeshHierarchy, Triangulation};
use crate::sparse::{CooBuilder, CsrMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Dof {
    pub cell: u32,
    pub vertex: u32,
    pub rep_triangle: u32,
}

/// One interface mesh edge with the dofs of its two one-sided traces.
/// `plus` lies on the side the oriented normal points into; endpoint
/// order matches for both sides. Missing entries are boundary vertices
/// whose trace is zero.
#[derive(Debug, Clone, Copy)]
pub struct InterfacePair {
    pub level: u8,
    pub edge: u32,
    pub length: f64,
    pub plus: [Option<u32>; 2],
    pub minus: [Option<u32>; 2],
}

#[derive(Debug)]
pub struct BrokenSpace {
    pub scale: usize,
    pub dofs: Vec<Dof>,
    pub dof_index: HashMap<(u32, u32), u32>,
    /// Per triangle, the dof ids of its three vertices (None on ∂Ω).
    pub triangle_dofs: Vec<[Option<u32>; 3]>,
    pub interface_pairs: Vec<InterfacePair>,
    /// Per cell, its dof ids in ascending order.
    pub cell_dofs: Vec<Vec<u32>>,
}

impl BrokenSpace {
    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn dof(&self, cell: u32, vertex: u32) -> Option<u32> {
        self.dof_index.get(&(cell, vertex)).copied()
    }

    /// Lattice positions of the dofs' vertices (duplicates share one).
    pub fn dof_positions(&self, mesh: &Triangulation) -> Vec<[i64; 2]> {
        self.dofs
            .iter()
            .map(|d| mesh.vertices[d.vertex as usize])
            .collect()
    }
}

/// Enumerates the broken-space dofs and interface pairs of a partitioned
/// mesh. Dofs are ordered by ascending cell id, then vertex id, which
/// fixes all assembled operators and iteration orders.
pub fn build_broken_space(
    mesh: &Triangulation,
    partition: &CellPartition,
    network: &InterfaceNetwork,
) -> BrokenSpace {
    let n_cells = partition.n_cells();
    let mut dofs: Vec<Dof> = Vec::new();
    let mut dof_index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut cell_dofs: Vec<Vec<u32>> = Vec::with_capacity(n_cells);
    for (cid, cell) in partition.cells.iter().enumerate() {
        let mut verts: Vec<u32> = Vec::with_capacity(cell.triangles.len() * 2);
        for &t in &cell.triangles {
            verts.extend_from_slice(&mesh.triangles[t as usize]);
        }
        verts.sort_unstable();
        verts.dedup();
        let mut ids = Vec::new();
        for v in verts {
            if mesh.is_boundary_vertex(v) {
                continue;
            }
            let id = dofs.len() as u32;
            dofs.push(Dof {
                cell: cid as u32,
                vertex: v,
                rep_triangle: u32::MAX,
            });
            dof_index.insert((cid as u32, v), id);
            ids.push(id);
        }
        cell_dofs.push(ids);
    }

    let mut triangle_dofs = vec![[None; 3]; mesh.n_triangles()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let cid = partition.cell_of_triangle[t];
        for (loc, &v) in tri.iter().enumerate() {
            if let Some(&d) = dof_index.get(&(cid, v)) {
                triangle_dofs[t][loc] = Some(d);
                if dofs[d as usize].rep_triangle == u32::MAX {
                    dofs[d as usize].rep_triangle = t as u32;
                }
            }
        }
    }

    // Interface pairs for all levels up to the partition scale.
    let mut level_of_segment: HashMap<Segment, u8> = HashMap::new();
    for j in 1..=partition.scale {
        for s in network.segments_at(j, mesh.level) {
            level_of_segment.insert(s, j as u8);
        }
    }
    let mut interface_pairs = Vec::with_capacity(level_of_segment.len());
    for (eid, e) in mesh.edges.iter().enumerate() {
        let pa = mesh.vertices[e.a as usize];
        let pb = mesh.vertices[e.b as usize];
        let j = match level_of_segment.get(&Segment::new(pa, pb)) {
            Some(&j) => j,
            None => continue,
        };
        debug_assert!(e.tris[1] != -1, "interface edge on the domain boundary");
        // Normal with ν·e_m > 0 for the first nonzero component m.
        let d = [pb[0] - pa[0], pb[1] - pa[1]];
        let mut nu = [d[1], -d[0]];
        let m = if nu[0] != 0 { 0 } else { 1 };
        if nu[m] < 0 {
            nu = [-nu[0], -nu[1]];
        }
        // Plus side: triangle the normal points into. The third vertex of
        // each triangle decides the side exactly in lattice arithmetic.
        let side_of = |t: i32| {
            let tri = mesh.triangles[t as usize];
            let other = tri
                .iter()
                .copied()
                .find(|&v| v != e.a && v != e.b)
                .unwrap();
            let po = mesh.vertices[other as usize];
            let rel = [po[0] - pa[0], po[1] - pa[1]];
            nu[0] * rel[0] + nu[1] * rel[1]
        };
        let (plus_tri, minus_tri) = if side_of(e.tris[0]) > 0 {
            (e.tris[0], e.tris[1])
        } else {
            (e.tris[1], e.tris[0])
        };
        let cell_plus = partition.cell_of_triangle[plus_tri as usize];
        let cell_minus = partition.cell_of_triangle[minus_tri as usize];
        debug_assert_ne!(cell_plus, cell_minus, "interface edge inside a cell");
        let dof_of = |cell: u32, v: u32| dof_index.get(&(cell, v)).copied();
        let len = if d[0].abs() + d[1].abs() == 2 {
            std::f64::consts::SQRT_2 / mesh.res as f64
        } else {
            1.0 / mesh.res as f64
        };
        interface_pairs.push(InterfacePair {
            level: j,
            edge: eid as u32,
            length: len,
            plus: [dof_of(cell_plus, e.a), dof_of(cell_plus, e.b)],
            minus: [dof_of(cell_minus, e.a), dof_of(cell_minus, e.b)],
        });
    }

    BrokenSpace {
        scale: partition.scale,
        dofs,
        dof_index,
        triangle_dofs,
        interface_pairs,
        cell_dofs,
    }
}

/// A scale's full discretization bundle.
pub struct Scale {
    pub k: usize,
    pub mesh: Arc<Triangulation>,
    pub partition: CellPartition,
    pub space: BrokenSpace,
    network_id: u64,
}

impl Scale {
    pub fn build(network: &InterfaceNetwork, hierarchy: &MeshHierarchy, k: usize) -> Result<Scale> {
        let mesh = hierarchy.mesh_arc_for_scale(k);
        let partition = extract_cells(network, k, &mesh)?;
        let space = build_broken_space(&mesh, &partition, network);
        Ok(Scale {
            k,
            mesh,
            partition,
            space,
            network_id: network_fingerprint(network),
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }
}

fn network_fingerprint(network: &InterfaceNetwork) -> u64 {
    crate::geometry::mix_seed(&[
        match network.kind {
            crate::geometry::NetworkKind::Localized => 1,
            crate::geometry::NetworkKind::Geological => 2,
        },
        network.seed.unwrap_or(u64::MAX),
        network.k_max as u64,
    ])
}

/// P1 interpolation from a coarse broken space into a finer one on the
/// same network. Fine dofs duplicated across interfaces of levels up to
/// the coarse scale take side-dependent values; duplicates across
/// finer-only interfaces share the single coarse-side value.
pub struct Prolongation {
    pub from_scale: usize,
    pub to_scale: usize,
    pub matrix: CsrMatrix,
}

impl Prolongation {
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        self.matrix.matvec(coarse)
    }

    /// Transpose action (restriction of functionals).
    pub fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.matrix.transpose_matvec(fine)
    }
}

pub fn build_prolongation(
    coarse: &Scale,
    fine: &Scale,
    hierarchy: &MeshHierarchy,
) -> Result<Prolongation> {
    if coarse.k >= fine.k {
        return Err(Error::Geometry(format!(
            "prolongation scales inverted: {} -> {}",
            coarse.k, fine.k
        )));
    }
    if coarse.network_id != fine.network_id {
        return Err(Error::Geometry(
            "prolongation across different networks".into(),
        ));
    }
    let fine_level = fine.mesh.level;
    let coarse_level = coarse.mesh.level;
    let factor = 1i64 << (fine_level - coarse_level);
    // Coarse cell of each fine cell, resolved once and checked to be
    // unique (cells refine, never merge).
    let mut coarse_cell_of = vec![u32::MAX; fine.partition.n_cells()];
    let mut b = CooBuilder::with_capacity(
        fine.space.n_dofs(),
        coarse.space.n_dofs(),
        fine.space.n_dofs() * 3,
    );
    for (fid, dof) in fine.space.dofs.iter().enumerate() {
        let t_c = hierarchy.ancestor_triangle(fine_level, dof.rep_triangle as usize, coarse_level);
        let cc = coarse.partition.cell_of_triangle[t_c];
        let cached = &mut coarse_cell_of[dof.cell as usize];
        if *cached == u32::MAX {
            *cached = cc;
        } else if *cached != cc {
            return Err(Error::Geometry(
                "fine cell spans multiple coarse cells".into(),
            ));
        }
        // Barycentric coordinates of the fine vertex in the coarse
        // triangle, exact on the fine lattice.
        let v = fine.mesh.vertices[dof.vertex as usize];
        let tri = coarse.mesh.triangles[t_c];
        let p: Vec<[i64; 2]> = tri
            .iter()
            .map(|&q| {
                let c = coarse.mesh.vertices[q as usize];
                [c[0] * factor, c[1] * factor]
            })
            .collect();
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let w1_num =
            (v[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (v[1] - p[0][1]);
        let w2_num =
            (p[1][0] - p[0][0]) * (v[1] - p[0][1]) - (v[0] - p[0][0]) * (p[1][1] - p[0][1]);
        let weights = [
            (det - w1_num - w2_num) as f64 / det as f64,
            w1_num as f64 / det as f64,
            w2_num as f64 / det as f64,
        ];
        for (loc, &q) in tri.iter().enumerate() {
            if weights[loc] == 0.0 {
                continue;
            }
            if let Some(cd) = coarse.space.dof(cc, q) {
                b.push(fid, cd as usize, weights[loc]);
            }
        }
    }
    Ok(Prolongation {
        from_scale: coarse.k,
        to_scale: fine.k,
        matrix: b.build(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_localized_network, NetworkKind};

    fn localized_scales(k_max: usize) -> (Vec<Scale>, MeshHierarchy) {
        let net = build_localized_network(k_max).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, k_max);
        let scales = (1..=k_max)
            .map(|k| Scale::build(&net, &hierarchy, k).unwrap())
            .collect();
        (scales, hierarchy)
    }

    #[test]
    fn single_cell_dof_count_equals_interior_vertices() {
        let net = build_localized_network(1).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, 1);
        let mesh = hierarchy.mesh_for_scale(1);
        let p0 = extract_cells(&net, 0, mesh).unwrap();
        let space = build_broken_space(mesh, &p0, &net);
        let interior = (0..mesh.n_vertices() as u32)
            .filter(|&v| !mesh.is_boundary_vertex(v))
            .count();
        assert_eq!(space.n_dofs(), interior);
        assert!(space.interface_pairs.is_empty());
    }

    #[test]
    fn localized_k1_dof_count_by_two_routes() {
        let (scales, _) = localized_scales(1);
        let s = &scales[0];
        // Route 1: builder enumeration, pinned.
        assert_eq!(s.n_dofs(), 18);
        // Route 2: per-vertex cell multiplicities.
        let mesh = &s.mesh;
        let mut mult: HashMap<u32, std::collections::HashSet<u32>> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for &v in tri {
                if !mesh.is_boundary_vertex(v) {
                    mult.entry(v)
                        .or_default()
                        .insert(s.partition.cell_of_triangle[t]);
                }
            }
        }
        let count: usize = mult.values().map(|cells| cells.len()).sum();
        assert_eq!(s.n_dofs(), count);
        // Dof-count consistency over cells.
        let per_cell: usize = s.space.cell_dofs.iter().map(|c| c.len()).sum();
        assert_eq!(per_cell, s.n_dofs());
    }

    #[test]
    fn interface_pairs_unique_with_distinct_cells() {
        let net = build_localized_network(2).unwrap();
        let (scales, _) = localized_scales(2);
        for s in &scales {
            let mut seen = std::collections::HashSet::new();
            for p in &s.space.interface_pairs {
                assert!(seen.insert(p.edge), "edge paired twice");
                for (a, b) in p.plus.iter().zip(&p.minus) {
                    if let (Some(a), Some(b)) = (a, b) {
                        let da = s.space.dofs[*a as usize];
                        let db = s.space.dofs[*b as usize];
                        assert_ne!(da.cell, db.cell);
                        assert_eq!(da.vertex, db.vertex);
                    }
                }
            }
            // Every stored segment of levels <= k appears exactly once.
            let expected: usize = (1..=s.k)
                .map(|j| net.segments_at(j, s.mesh.level).len())
                .sum();
            assert_eq!(s.space.interface_pairs.len(), expected);
        }
    }

    #[test]
    fn continuous_function_has_equal_duplicates() {
        let (scales, _) = localized_scales(1);
        let s = &scales[0];
        let f = |p: [f64; 2]| (p[0] * 1.7 + 0.3) * (p[1] - 0.4);
        let v: Vec<f64> = s
            .space
            .dofs
            .iter()
            .map(|d| f(s.mesh.point(d.vertex)))
            .collect();
        for p in &s.space.interface_pairs {
            for (a, b) in p.plus.iter().zip(&p.minus) {
                if let (Some(a), Some(b)) = (a, b) {
                    assert_eq!(v[*a as usize], v[*b as usize]);
                }
            }
        }
    }

    #[test]
    fn prolongation_extends_hats_by_zero() {
        let (scales, hierarchy) = localized_scales(2);
        let coarse = &scales[0];
        let fine = &scales[1];
        let p = build_prolongation(coarse, fine, &hierarchy).unwrap();
        for i in 0..p.matrix.n_rows() {
            assert!(p.matrix.row(i).count() <= 3);
        }
        for (cd, dof) in coarse.space.dofs.iter().enumerate() {
            let mut e = vec![0.0; coarse.n_dofs()];
            e[cd] = 1.0;
            let fine_vals = p.apply(&e);
            let pv = coarse.mesh.point(dof.vertex);
            for (fd, fdof) in fine.space.dofs.iter().enumerate() {
                let fine_coarse_cell = {
                    let t_c = hierarchy.ancestor_triangle(
                        fine.mesh.level,
                        fdof.rep_triangle as usize,
                        coarse.mesh.level,
                    );
                    coarse.partition.cell_of_triangle[t_c]
                };
                if fine_coarse_cell != dof.cell {
                    assert_eq!(fine_vals[fd], 0.0, "hat leaked outside its cell");
                } else {
                    let fp = fine.mesh.point(fdof.vertex);
                    if fp == pv {
                        assert_eq!(fine_vals[fd], 1.0);
                    }
                    assert!((-1e-14..=1.0 + 1e-14).contains(&fine_vals[fd]));
                }
            }
        }
    }

    #[test]
    fn prolongation_composes_transitively() {
        let (scales, hierarchy) = localized_scales(3);
        let p12 = build_prolongation(&scales[0], &scales[1], &hierarchy).unwrap();
        let p23 = build_prolongation(&scales[1], &scales[2], &hierarchy).unwrap();
        let p13 = build_prolongation(&scales[0], &scales[2], &hierarchy).unwrap();
        let n1 = scales[0].n_dofs();
        for cd in 0..n1 {
            let mut e = vec![0.0; n1];
            e[cd] = 1.0;
            let via = p23.apply(&p12.apply(&e));
            let direct = p13.apply(&e);
            for (a, b) in via.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prolongation_full_column_rank() {
        let (scales, hierarchy) = localized_scales(2);
        let p = build_prolongation(&scales[0], &scales[1], &hierarchy).unwrap();
        let dense = p.matrix.to_dense();
        assert_eq!(dense.rank(1e-10), scales[0].n_dofs());
    }

    #[test]
    fn prolongation_rejects_inverted_scales() {
        let (scales, hierarchy) = localized_scales(2);
        assert!(build_prolongation(&scales[1], &scales[0], &hierarchy).is_err());
    }
}
