//! Uniform red-refinement triangulations of the unit square.
//!
//! Vertex coordinates are dyadic rationals stored as integers on the
//! lattice with `res = 2^level` divisions per unit, so midpoint
//! computations and interface-resolution checks are exact. Conversion to
//! floating point happens only at assembly time.

use std::collections::HashMap;

use crate::geometry::{InterfaceNetwork, NetworkKind, Segment};

/// An edge of the triangulation with its incident triangles
/// (`-1` marks a missing neighbor on the boundary).
#[derive(Debug, Clone, Copy)]
pub struct MeshEdge {
    pub a: u32,
    pub b: u32,
    pub tris: [i32; 2],
}

/// A conforming triangulation of `(0,1)^2` obtained from `level` uniform
/// regular refinements of the two-triangle base partition.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub level: u32,
    /// Lattice divisions per unit length, `2^level`.
    pub res: i64,
    /// Lattice coordinates in `[0, res]^2`.
    pub vertices: Vec<[i64; 2]>,
    /// Positively oriented vertex triples.
    pub triangles: Vec<[u32; 3]>,
    pub edges: Vec<MeshEdge>,
    /// Per triangle, the edge ids opposite to the local vertices 0, 1, 2.
    pub tri_edges: Vec<[u32; 3]>,
    /// Child triangle id -> parent triangle id (empty at level 0).
    pub parent_triangle: Vec<u32>,
}

impl Triangulation {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn point(&self, v: u32) -> [f64; 2] {
        let p = self.vertices[v as usize];
        let r = self.res as f64;
        [p[0] as f64 / r, p[1] as f64 / r]
    }

    pub fn is_boundary_vertex(&self, v: u32) -> bool {
        let p = self.vertices[v as usize];
        p[0] == 0 || p[1] == 0 || p[0] == self.res || p[1] == self.res
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.point(a);
        let pb = self.point(b);
        let pc = self.point(c);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Twice the signed area in lattice units (exact).
    pub fn triangle_area2_lattice(&self, t: usize) -> i64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a as usize];
        let pb = self.vertices[b as usize];
        let pc = self.vertices[c as usize];
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    }

    pub fn triangle_centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let pa = self.point(a);
        let pb = self.point(b);
        let pc = self.point(c);
        [
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
        ]
    }

    /// Maximal triangle diameter, `sqrt(2) * 2^-level` on this hierarchy.
    pub fn mesh_size(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.res as f64
    }

    /// Writes the mesh in a simple text format: a vertex count line,
    /// one `x y` line per vertex (exact rationals), a triangle count line,
    /// and one `a b c` line per triangle.
    pub fn write_text<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "vertices {}", self.n_vertices())?;
        for p in &self.vertices {
            writeln!(w, "{}/{} {}/{}", p[0], self.res, p[1], self.res)?;
        }
        writeln!(w, "triangles {}", self.n_triangles())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    fn rebuild_edges(&mut self) {
        let mut edge_of: HashMap<(u32, u32), u32> = HashMap::new();
        let mut edges: Vec<MeshEdge> = Vec::with_capacity(self.triangles.len() * 3 / 2 + 2);
        let mut tri_edges = vec![[0u32; 3]; self.triangles.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for loc in 0..3 {
                let a = tri[(loc + 1) % 3];
                let b = tri[(loc + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *edge_of.entry(key).or_insert_with(|| {
                    edges.push(MeshEdge {
                        a: key.0,
                        b: key.1,
                        tris: [-1, -1],
                    });
                    (edges.len() - 1) as u32
                });
                let e = &mut edges[id as usize];
                if e.tris[0] == -1 {
                    e.tris[0] = t as i32;
                } else {
                    debug_assert_eq!(e.tris[1], -1, "non-conforming edge");
                    e.tris[1] = t as i32;
                }
                tri_edges[t][loc] = id;
            }
        }
        self.edges = edges;
        self.tri_edges = tri_edges;
    }
}

/// The two-triangle base partition of the unit square, split along the
/// diagonal from (0,0) to (1,1).
pub fn base_mesh() -> Triangulation {
    let mut mesh = Triangulation {
        level: 0,
        res: 1,
        vertices: vec![[0, 0], [1, 0], [1, 1], [0, 1]],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        edges: Vec::new(),
        tri_edges: Vec::new(),
        parent_triangle: Vec::new(),
    };
    mesh.rebuild_edges();
    mesh
}

/// One uniform regular refinement step: every triangle is split into four
/// congruent children through its edge midpoints.
pub fn refine_uniform(mesh: &Triangulation) -> Triangulation {
    let nv = mesh.vertices.len();
    let mut vertices: Vec<[i64; 2]> = mesh
        .vertices
        .iter()
        .map(|p| [p[0] * 2, p[1] * 2])
        .collect();
    // Midpoint vertex for edge e gets id nv + e.
    vertices.reserve(mesh.edges.len());
    for e in &mesh.edges {
        let pa = mesh.vertices[e.a as usize];
        let pb = mesh.vertices[e.b as usize];
        vertices.push([pa[0] + pb[0], pa[1] + pb[1]]);
    }
    let mid = |e: u32| (nv + e as usize) as u32;
    let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
    let mut parent = Vec::with_capacity(mesh.triangles.len() * 4);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let mab = mid(mesh.tri_edges[t][2]); // edge opposite c = (a,b)
        let mbc = mid(mesh.tri_edges[t][0]); // opposite a = (b,c)
        let mca = mid(mesh.tri_edges[t][1]); // opposite b = (c,a)
        triangles.push([a, mab, mca]);
        triangles.push([mab, b, mbc]);
        triangles.push([mca, mbc, c]);
        triangles.push([mab, mbc, mca]);
        for _ in 0..4 {
            parent.push(t as u32);
        }
    }
    let mut out = Triangulation {
        level: mesh.level + 1,
        res: mesh.res * 2,
        vertices,
        triangles,
        edges: Vec::new(),
        tri_edges: Vec::new(),
        parent_triangle: parent,
    };
    out.rebuild_edges();
    out
}

/// The refinement hierarchy together with the kind-dependent mapping from
/// interface scales to refinement levels.
pub struct MeshHierarchy {
    pub kind: NetworkKind,
    pub meshes: Vec<std::sync::Arc<Triangulation>>,
}

impl MeshHierarchy {
    /// Builds all refinement levels needed to host scales `1..=k_max`.
    pub fn build(kind: NetworkKind, k_max: usize) -> MeshHierarchy {
        let top = scale_to_level(kind, k_max);
        let mut meshes = vec![std::sync::Arc::new(base_mesh())];
        for _ in 0..top {
            let next = refine_uniform(meshes.last().unwrap());
            meshes.push(std::sync::Arc::new(next));
        }
        MeshHierarchy { kind, meshes }
    }

    pub fn mesh_arc_for_scale(&self, k: usize) -> std::sync::Arc<Triangulation> {
        self.meshes[self.level_for_scale(k) as usize].clone()
    }

    pub fn level_for_scale(&self, k: usize) -> u32 {
        scale_to_level(self.kind, k)
    }

    pub fn mesh_for_scale(&self, k: usize) -> &Triangulation {
        &self.meshes[self.level_for_scale(k) as usize]
    }

    pub fn mesh_at_level(&self, level: u32) -> &Triangulation {
        &self.meshes[level as usize]
    }

    /// Ancestor of a triangle at a coarser refinement level.
    pub fn ancestor_triangle(&self, level_from: u32, tri: usize, level_to: u32) -> usize {
        debug_assert!(level_to <= level_from);
        let mut t = tri;
        let mut l = level_from;
        while l > level_to {
            t = self.meshes[l as usize].parent_triangle[t] as usize;
            l -= 1;
        }
        t
    }

    /// Mesh size at scale `k`.
    pub fn h_for_scale(&self, k: usize) -> f64 {
        self.mesh_for_scale(k).mesh_size()
    }
}

/// Refinement level hosting scale `k`: the localized construction inserts
/// two refinements per scale, the geological one starts at four and adds
/// one per scale.
pub fn scale_to_level(kind: NetworkKind, k: usize) -> u32 {
    if k == 0 {
        return 0;
    }
    match kind {
        NetworkKind::Localized => (2 * k) as u32,
        NetworkKind::Geological => (k + 3) as u32,
    }
}

/// True iff every stored interface edge of levels `1..=k` is a union of
/// edges of `mesh`.
pub fn check_resolution(network: &InterfaceNetwork, k: usize, mesh: &Triangulation) -> bool {
    for j in 1..=k.min(network.depth()) {
        let level = network.level(j);
        let mesh_log2 = mesh.level;
        let seg_log2 = level.lattice_log2;
        if mesh_log2 >= seg_log2 {
            // Every unit lattice segment subdivides into mesh edges that
            // exist in the structured mesh; alignment is automatic.
            continue;
        }
        // Mesh is coarser: the stored segments must tile whole mesh edges.
        let f = 1i64 << (seg_log2 - mesh_log2);
        let set: std::collections::HashSet<Segment> = level.segments.iter().copied().collect();
        for seg in &level.segments {
            if !covered_by_mesh_edge(seg, f, &set) {
                return false;
            }
        }
    }
    true
}

/// Checks that the containing mesh edge of `seg` (at `f` unit segments per
/// mesh edge) is lattice-aligned and fully covered by `set`.
fn covered_by_mesh_edge(seg: &Segment, f: i64, set: &std::collections::HashSet<Segment>) -> bool {
    let d = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]];
    let a = seg.a;
    let (start, step) = if d == [1, 0] {
        if a[1] % f != 0 {
            return false;
        }
        ([a[0] - a[0].rem_euclid(f), a[1]], [1i64, 0i64])
    } else if d == [0, 1] {
        if a[0] % f != 0 {
            return false;
        }
        ([a[0], a[1] - a[1].rem_euclid(f)], [0, 1])
    } else if d == [1, 1] {
        let t = a[0].rem_euclid(f);
        let s = [a[0] - t, a[1] - t];
        if s[0] % f != 0 || s[1] % f != 0 {
            return false;
        }
        (s, [1, 1])
    } else {
        return false;
    };
    for i in 0..f {
        let p = [start[0] + i * step[0], start[1] + i * step[1]];
        let q = [p[0] + step[0], p[1] + step[1]];
        if !set.contains(&Segment { a: p, b: q }) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_mesh_counts_and_areas() {
        let m = base_mesh();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.n_edges(), 5);
        for t in 0..2 {
            assert!((m.triangle_area(t) - 0.5).abs() < 1e-15);
        }
        assert!((m.mesh_size() - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn refinement_counts_and_mesh_size() {
        let mut m = base_mesh();
        for level in 1..=4u32 {
            m = refine_uniform(&m);
            assert_eq!(m.n_triangles(), 2 * 4usize.pow(level));
            let expect_h = std::f64::consts::SQRT_2 / 2f64.powi(level as i32);
            assert!((m.mesh_size() - expect_h).abs() < 1e-15);
            // Euler relation for the triangulated square.
            let (v, e, t) = (
                m.n_vertices() as i64,
                m.n_edges() as i64,
                m.n_triangles() as i64,
            );
            assert_eq!(v - e + t, 1);
        }
        let refined = refine_uniform(&base_mesh());
        assert_eq!(refined.n_vertices(), 9);
        assert_eq!(refined.n_triangles(), 8);
    }

    #[test]
    fn children_positively_oriented_and_partition_parent() {
        let m0 = refine_uniform(&base_mesh());
        let m1 = refine_uniform(&m0);
        for t in 0..m1.n_triangles() {
            assert!(m1.triangle_area2_lattice(t) > 0);
        }
        // Child areas sum exactly to the parent area (dyadic arithmetic);
        // lattice areas scale by 4 when res doubles.
        let mut by_parent = vec![0i64; m0.n_triangles()];
        for t in 0..m1.n_triangles() {
            by_parent[m1.parent_triangle[t] as usize] += m1.triangle_area2_lattice(t);
        }
        for (p, &sum2) in by_parent.iter().enumerate() {
            assert_eq!(sum2, 4 * m0.triangle_area2_lattice(p));
        }
    }

    #[test]
    fn all_triangles_congruent_right_isosceles() {
        let m = refine_uniform(&refine_uniform(&base_mesh()));
        for t in 0..m.n_triangles() {
            assert_eq!(m.triangle_area2_lattice(t), 1);
        }
    }
}
