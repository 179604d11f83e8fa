//! Interface networks on the unit square and their cell partitions.
//!
//! Interfaces are stored per level as unit lattice segments (axis steps or
//! one-directional diagonal steps) on the level's own resolving lattice,
//! so set operations, self-similarity checks and mesh-resolution tests are
//! exact integer computations.

mod chords;
mod geological;
mod serialize;

pub use chords::estimate_cj;
pub use serialize::{parse_network, write_network};

use std::collections::HashSet;

use crate::mesh::Triangulation;
use crate::{Error, Result};

/// Hard cap on the constructed depth; matches the deepest experiment.
pub const MAX_DEPTH: usize = 6;

/// Which closed form parameterizes the chord-intersection constants of the
/// localized network. The two appear in different places of the analysis;
/// `Table` is the one used by the reproduced convergence experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CkConvention {
    /// `C_k = 2^k`
    Table,
    /// `C_k = 2^k + 2^(k-1) - 2`
    Construction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Localized,
    Geological,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetworkKind::Localized => write!(f, "localized"),
            NetworkKind::Geological => write!(f, "geological"),
        }
    }
}

/// A unit lattice segment: one axis step or one (1,1)-diagonal step,
/// stored with lexicographically ordered endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub a: [i64; 2],
    pub b: [i64; 2],
}

impl Segment {
    pub fn new(p: [i64; 2], q: [i64; 2]) -> Segment {
        if p <= q {
            Segment { a: p, b: q }
        } else {
            Segment { a: q, b: p }
        }
    }

    pub fn direction(&self) -> [i64; 2] {
        [self.b[0] - self.a[0], self.b[1] - self.a[1]]
    }

    /// Splits into `factor` unit segments on a lattice `factor` times finer.
    pub fn subdivide(&self, factor: i64) -> impl Iterator<Item = Segment> + '_ {
        let d = self.direction();
        let base = [self.a[0] * factor, self.a[1] * factor];
        (0..factor).map(move |i| {
            Segment::new(
                [base[0] + i * d[0], base[1] + i * d[1]],
                [base[0] + (i + 1) * d[0], base[1] + (i + 1) * d[1]],
            )
        })
    }
}

/// One interface level: its resolving lattice and its unit segments.
#[derive(Debug, Clone)]
pub struct LevelEdges {
    pub lattice_log2: u32,
    pub segments: Vec<Segment>,
}

impl LevelEdges {
    fn normalize(&mut self) {
        self.segments.sort_unstable();
        self.segments.dedup();
    }

    pub fn res(&self) -> i64 {
        1 << self.lattice_log2
    }

    /// Total length of the level's interfaces.
    pub fn length(&self) -> f64 {
        let h = 1.0 / self.res() as f64;
        self.segments
            .iter()
            .map(|s| {
                if s.direction() == [1, 1] {
                    std::f64::consts::SQRT_2 * h
                } else {
                    h
                }
            })
            .sum()
    }
}

/// A leveled interface network on the unit square.
#[derive(Debug, Clone)]
pub struct InterfaceNetwork {
    pub kind: NetworkKind,
    pub k_max: usize,
    pub seed: Option<u64>,
    levels: Vec<LevelEdges>,
}

impl InterfaceNetwork {
    pub(crate) fn from_levels(
        kind: NetworkKind,
        k_max: usize,
        seed: Option<u64>,
        mut levels: Vec<LevelEdges>,
    ) -> InterfaceNetwork {
        for l in &mut levels {
            l.normalize();
        }
        InterfaceNetwork {
            kind,
            k_max,
            seed,
            levels,
        }
    }

    /// Number of stored levels.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Interface level `j` (1-based).
    pub fn level(&self, j: usize) -> &LevelEdges {
        &self.levels[j - 1]
    }

    /// Finest lattice needed to represent all stored levels.
    pub fn base_lattice_log2(&self) -> u32 {
        self.levels
            .iter()
            .map(|l| l.lattice_log2)
            .max()
            .unwrap_or(0)
    }

    /// Level `j` segments re-expressed on a finer lattice.
    pub fn segments_at(&self, j: usize, lattice_log2: u32) -> Vec<Segment> {
        let level = self.level(j);
        assert!(
            lattice_log2 >= level.lattice_log2,
            "target lattice coarser than storage"
        );
        let factor = 1i64 << (lattice_log2 - level.lattice_log2);
        level
            .segments
            .iter()
            .flat_map(|s| s.subdivide(factor))
            .collect()
    }
}

/// The deterministic highly localized interface network.
///
/// Level 1 consists of the two full grid lines at 1/4 and the two short
/// segments at 1/2; each later level is the quarter-scaled three-fold
/// tiling of the previous network minus the already present edges.
pub fn build_localized_network(k_max: usize) -> Result<InterfaceNetwork> {
    if k_max < 1 || k_max > MAX_DEPTH {
        return Err(Error::ScaleOutOfRange(k_max, MAX_DEPTH));
    }
    let mut levels: Vec<LevelEdges> = Vec::with_capacity(k_max);

    let mut gamma1 = Vec::new();
    // x = 1/4 and y = 1/4 across the whole square, res 4.
    for t in 0..4 {
        gamma1.push(Segment::new([1, t], [1, t + 1]));
        gamma1.push(Segment::new([t, 1], [t + 1, 1]));
    }
    // x = 1/2 below y = 1/4, y = 1/2 left of x = 1/4.
    gamma1.push(Segment::new([2, 0], [2, 1]));
    gamma1.push(Segment::new([0, 2], [1, 2]));
    levels.push(LevelEdges {
        lattice_log2: 2,
        segments: gamma1,
    });

    for k in 1..k_max {
        // Union of levels 1..=k on the level-k lattice.
        let log2_k = 2 * k as u32;
        let mut union_k: HashSet<Segment> = HashSet::new();
        for j in 1..=k {
            let factor = 1i64 << (log2_k - levels[j - 1].lattice_log2);
            for s in &levels[j - 1].segments {
                union_k.extend(s.subdivide(factor));
            }
        }
        // Quarter-scaled tiling: same integer coordinates on the finer
        // lattice, plus shifts by a quarter along each axis.
        let quarter = 1i64 << log2_k;
        let mut tilde: HashSet<Segment> = HashSet::new();
        for s in &union_k {
            tilde.insert(*s);
            tilde.insert(Segment::new(
                [s.a[0] + quarter, s.a[1]],
                [s.b[0] + quarter, s.b[1]],
            ));
            tilde.insert(Segment::new(
                [s.a[0], s.a[1] + quarter],
                [s.b[0], s.b[1] + quarter],
            ));
        }
        // Remove edges already present in the network.
        let mut present: HashSet<Segment> = HashSet::new();
        for s in &union_k {
            present.extend(s.subdivide(4));
        }
        let segments: Vec<Segment> = tilde
            .into_iter()
            .filter(|s| !present.contains(s))
            .collect();
        levels.push(LevelEdges {
            lattice_log2: log2_k + 2,
            segments,
        });
    }
    Ok(InterfaceNetwork::from_levels(
        NetworkKind::Localized,
        k_max,
        None,
        levels,
    ))
}

/// The seeded random geological network of fracture paths.
pub fn build_geological_network(k_max: usize, seed: u64) -> Result<InterfaceNetwork> {
    if k_max < 1 || k_max > MAX_DEPTH {
        return Err(Error::ScaleOutOfRange(k_max, MAX_DEPTH));
    }
    geological::build(k_max, seed)
}

/// A cell of the partition `Ω \ Γ^(k)` as a set of mesh triangles.
#[derive(Debug, Clone)]
pub struct CellInfo {
    pub triangles: Vec<u32>,
    pub touches_boundary: bool,
    pub invariant: bool,
    pub neighbors: Vec<u32>,
}

/// Connected components of the mesh triangles under edge adjacency that
/// does not cross the interface network up to level `k`.
#[derive(Debug, Clone)]
pub struct CellPartition {
    pub scale: usize,
    pub cell_of_triangle: Vec<u32>,
    pub cells: Vec<CellInfo>,
    /// Measured maximal diameter of non-invariant cells (d_k); NaN when the
    /// stored network has no levels beyond `scale`.
    pub diameter_bound: f64,
}

impl CellPartition {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn max_neighbors(&self) -> usize {
        self.cells.iter().map(|c| c.neighbors.len()).max().unwrap_or(0)
    }
}

/// Lookup table from lattice squares to triangle ids for point location.
pub(crate) struct TriangleLocator {
    res: i64,
    /// `[2 * (sy * res + sx) + half]`, half 0 = lower-right of the square.
    table: Vec<u32>,
}

impl TriangleLocator {
    pub fn build(mesh: &Triangulation) -> TriangleLocator {
        let res = mesh.res;
        let mut table = vec![u32::MAX; (res * res * 2) as usize];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let mut sx = i64::MAX;
            let mut sy = i64::MAX;
            for &v in tri {
                let p = mesh.vertices[v as usize];
                sx = sx.min(p[0]);
                sy = sy.min(p[1]);
            }
            // Lower half contains points with y - sy <= x - sx; decide by
            // the centroid in lattice-thirds.
            let c = [
                tri.iter().map(|&v| mesh.vertices[v as usize][0]).sum::<i64>() - 3 * sx,
                tri.iter().map(|&v| mesh.vertices[v as usize][1]).sum::<i64>() - 3 * sy,
            ];
            let half = if c[1] < c[0] { 0 } else { 1 };
            table[(2 * (sy * res + sx) + half) as usize] = t as u32;
        }
        TriangleLocator { res, table }
    }

    /// Locates the triangle containing the point `(xn / d, yn / d)` given
    /// in fractions of the unit square. Points on shared non-interface
    /// edges may resolve to either incident triangle.
    pub fn locate(&self, xn: i64, yn: i64, d: i64) -> u32 {
        // Lattice coordinates scaled by d: square index and remainder.
        let gx = (xn * self.res).div_euclid(d).min(self.res - 1).max(0);
        let gy = (yn * self.res).div_euclid(d).min(self.res - 1).max(0);
        let fx = xn * self.res - gx * d;
        let fy = yn * self.res - gy * d;
        let half = if fy <= fx { 0 } else { 1 };
        self.table[(2 * (gy * self.res + gx) + half) as usize]
    }
}

/// Extracts the cell partition of scale `k` on a mesh resolving `Γ^(k)`.
pub fn extract_cells(
    network: &InterfaceNetwork,
    k: usize,
    mesh: &Triangulation,
) -> Result<CellPartition> {
    if k > network.depth() {
        return Err(Error::ScaleOutOfRange(k, network.depth()));
    }
    // Blocked edges on the mesh lattice.
    let mut blocked: HashSet<Segment> = HashSet::new();
    for j in 1..=k {
        if network.level(j).lattice_log2 > mesh.level {
            return Err(Error::Unresolved { scale: k });
        }
        blocked.extend(network.segments_at(j, mesh.level));
    }
    let seg_of_edge = |e: &crate::mesh::MeshEdge| {
        Segment::new(
            mesh.vertices[e.a as usize],
            mesh.vertices[e.b as usize],
        )
    };

    let nt = mesh.n_triangles();
    let mut cell_of_triangle = vec![u32::MAX; nt];
    let mut cells: Vec<CellInfo> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for seed_tri in 0..nt {
        if cell_of_triangle[seed_tri] != u32::MAX {
            continue;
        }
        let cell_id = cells.len() as u32;
        let mut members = Vec::new();
        let mut touches = false;
        cell_of_triangle[seed_tri] = cell_id;
        queue.push_back(seed_tri);
        while let Some(t) = queue.pop_front() {
            members.push(t as u32);
            for &e_id in &mesh.tri_edges[t] {
                let e = &mesh.edges[e_id as usize];
                if e.tris[1] == -1 {
                    touches = true;
                    continue;
                }
                if blocked.contains(&seg_of_edge(e)) {
                    continue;
                }
                let other = if e.tris[0] as usize == t {
                    e.tris[1] as usize
                } else {
                    e.tris[0] as usize
                };
                if cell_of_triangle[other] == u32::MAX {
                    cell_of_triangle[other] = cell_id;
                    queue.push_back(other);
                }
            }
        }
        cells.push(CellInfo {
            triangles: members,
            touches_boundary: touches,
            invariant: true,
            neighbors: Vec::new(),
        });
    }

    // Neighbors through interface edges.
    let mut neighbor_pairs: HashSet<(u32, u32)> = HashSet::new();
    for e in &mesh.edges {
        if e.tris[1] == -1 {
            continue;
        }
        if !blocked.contains(&seg_of_edge(e)) {
            continue;
        }
        let c0 = cell_of_triangle[e.tris[0] as usize];
        let c1 = cell_of_triangle[e.tris[1] as usize];
        if c0 != c1 {
            neighbor_pairs.insert((c0.min(c1), c0.max(c1)));
        }
    }
    for &(a, b) in &neighbor_pairs {
        cells[a as usize].neighbors.push(b);
        cells[b as usize].neighbors.push(a);
    }
    for c in &mut cells {
        c.neighbors.sort_unstable();
    }

    // Invariance: a cell is invariant iff no stored interface of a deeper
    // level lies inside it. Deeper segments sit strictly inside cells, so
    // the segment midpoint locates the containing cell.
    if k < network.depth() {
        let locator = TriangleLocator::build(mesh);
        for j in k + 1..=network.depth() {
            let level = network.level(j);
            let d = 2 * level.res();
            for s in &level.segments {
                let xn = s.a[0] + s.b[0];
                let yn = s.a[1] + s.b[1];
                let t = locator.locate(xn, yn, d);
                cells[cell_of_triangle[t as usize] as usize].invariant = false;
            }
        }
    }

    // d_k over non-invariant cells.
    let mut d_k = f64::NAN;
    if cells.iter().any(|c| !c.invariant) {
        let mut best = 0.0f64;
        for c in cells.iter().filter(|c| !c.invariant) {
            best = best.max(cell_diameter(mesh, &c.triangles));
        }
        d_k = best;
    }

    Ok(CellPartition {
        scale: k,
        cell_of_triangle,
        cells,
        diameter_bound: d_k,
    })
}

fn cell_diameter(mesh: &Triangulation, triangles: &[u32]) -> f64 {
    let mut pts: Vec<[i64; 2]> = Vec::with_capacity(triangles.len());
    for &t in triangles {
        for &v in &mesh.triangles[t as usize] {
            pts.push(mesh.vertices[v as usize]);
        }
    }
    pts.sort_unstable();
    pts.dedup();
    let hull = convex_hull(&mut pts);
    let mut best = 0i64;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            let dx = hull[i][0] - hull[j][0];
            let dy = hull[i][1] - hull[j][1];
            best = best.max(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt() / mesh.res as f64
}

fn convex_hull(pts: &mut Vec<[i64; 2]>) -> Vec<[i64; 2]> {
    // Andrew's monotone chain; input sorted and deduplicated.
    let n = pts.len();
    if n < 3 {
        return pts.clone();
    }
    let cross = |o: [i64; 2], a: [i64; 2], b: [i64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[i64; 2]> = Vec::with_capacity(2 * n);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Geometric and material constants attached to a network.
#[derive(Debug, Clone)]
pub struct NetworkConstants {
    pub c_frak: f64,
    pub convention: CkConvention,
    /// `C_1..C_k_max` (index `j-1` holds `C_j`).
    pub c_j: Vec<f64>,
    /// Maximal non-invariant cell sizes; NaN where not measurable.
    pub d_k: Vec<f64>,
    /// Self-similarity ratios; NaN for the geological kind.
    pub r_k: Vec<f64>,
    /// `(1+c)^j C_j`.
    pub jump_weights: Vec<f64>,
}

impl NetworkConstants {
    pub fn jump_weight(&self, j: usize) -> f64 {
        self.jump_weights[j - 1]
    }

    /// Max over stored k of `r_k (1+c)^-k / d_k`; the geometric smallness
    /// condition holds (with unit constant) iff this is <= 1.
    pub fn smallcl_margin(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 1..=self.r_k.len() {
            let (r, d) = (self.r_k[k - 1], self.d_k[k - 1]);
            if r.is_nan() || d.is_nan() {
                continue;
            }
            worst = worst.max(r * (1.0 + self.c_frak).powi(-(k as i32)) / d);
        }
        worst
    }

    pub fn smallcl_holds(&self, slack: f64) -> bool {
        self.smallcl_margin() <= slack
    }

    /// Max over stored k of `d_k * sum_{l<=k} (1+c)^l C_l`.
    pub fn qdec_bound(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut partial = 0.0;
        for k in 1..=self.c_j.len() {
            partial += self.jump_weights[k - 1];
            if !self.d_k[k - 1].is_nan() {
                worst = worst.max(self.d_k[k - 1] * partial);
            }
        }
        worst
    }

    pub fn qdec_holds(&self, c_gamma: f64) -> bool {
        self.qdec_bound() <= c_gamma
    }
}

fn localized_ck(convention: CkConvention, k: usize) -> f64 {
    match convention {
        CkConvention::Table => (1u64 << k) as f64,
        CkConvention::Construction => ((1u64 << k) + (1u64 << (k - 1))) as f64 - 2.0,
    }
}

/// Computes the constants of a network built to depth `k_max`.
///
/// Localized: closed forms. Geological: `C_j` from the seeded chord
/// estimator and `d_k` measured from the cell partitions, which requires
/// building the per-scale meshes; pass precomputed partitions through
/// [`constants_with_partitions`] to avoid the rebuild.
pub fn constants_for(
    network: &InterfaceNetwork,
    c_frak: f64,
    k_max: usize,
    convention: CkConvention,
) -> Result<NetworkConstants> {
    assert!(c_frak > 0.0);
    assert!(k_max <= network.depth());
    match network.kind {
        NetworkKind::Localized => {
            let c_j: Vec<f64> = (1..=k_max).map(|k| localized_ck(convention, k)).collect();
            let d_k: Vec<f64> = (1..=k_max)
                .map(|k| std::f64::consts::SQRT_2 * 0.25f64.powi(k as i32))
                .collect();
            let r_k: Vec<f64> = (1..=k_max).map(|k| 2f64.powi(1 - k as i32)).collect();
            Ok(finish_constants(c_frak, convention, c_j, d_k, r_k))
        }
        NetworkKind::Geological => {
            let hierarchy = crate::mesh::MeshHierarchy::build(network.kind, k_max);
            let mut partitions = Vec::new();
            for k in 1..=k_max {
                partitions.push(extract_cells(network, k, hierarchy.mesh_for_scale(k))?);
            }
            constants_with_partitions(network, c_frak, k_max, convention, &partitions)
        }
    }
}

/// Geological constants from already extracted per-scale partitions
/// (`partitions[k-1]` at scale `k`).
pub fn constants_with_partitions(
    network: &InterfaceNetwork,
    c_frak: f64,
    k_max: usize,
    convention: CkConvention,
    partitions: &[CellPartition],
) -> Result<NetworkConstants> {
    let c_j: Vec<f64> = (1..=k_max)
        .map(|j| estimate_cj(network, j, chords::DEFAULT_LINES).max(1.0))
        .collect();
    let d_k: Vec<f64> = partitions.iter().map(|p| p.diameter_bound).collect();
    let r_k = vec![f64::NAN; k_max];
    Ok(finish_constants(c_frak, convention, c_j, d_k, r_k))
}

fn finish_constants(
    c_frak: f64,
    convention: CkConvention,
    c_j: Vec<f64>,
    d_k: Vec<f64>,
    r_k: Vec<f64>,
) -> NetworkConstants {
    let jump_weights = c_j
        .iter()
        .enumerate()
        .map(|(i, &c)| (1.0 + c_frak).powi(i as i32 + 1) * c)
        .collect();
    NetworkConstants {
        c_frak,
        convention,
        c_j,
        d_k,
        r_k,
        jump_weights,
    }
}

/// Shape-regularity diagnostic: max over cells of bounding-box diagonal to
/// inscribed-square side, a crude stand-in for circum/in-radius ratios.
pub fn shape_regularity_diagnostic(mesh: &Triangulation, partition: &CellPartition) -> f64 {
    let mut worst: f64 = 1.0;
    for c in &partition.cells {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for &t in &c.triangles {
            for &v in &mesh.triangles[t as usize] {
                let p = mesh.vertices[v as usize];
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        let w = (hi[0] - lo[0]) as f64;
        let h = (hi[1] - lo[1]) as f64;
        let diag = (w * w + h * h).sqrt();
        let area_units = c.triangles.len() as f64 / 2.0; // each triangle = half贴 square
        let side = area_units.sqrt();
        if side > 0.0 {
            worst = worst.max(diag / side);
        }
    }
    worst
}

/// Internal helper shared by the geological builder and tests: lattice
/// neighbor steps of the structured triangulation.
pub(crate) const LATTICE_STEPS: [[i64; 2]; 6] = [
    [1, 0],
    [-1, 0],
    [0, 1],
    [0, -1],
    [1, 1],
    [-1, -1],
];

/// Deterministic substream derivation (splitmix-style avalanche).
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{check_resolution, MeshHierarchy};

    #[test]
    fn gamma1_is_the_four_explicit_segments() {
        let net = build_localized_network(1).unwrap();
        assert_eq!(net.depth(), 1);
        let l = net.level(1);
        assert_eq!(l.lattice_log2, 2);
        let mut expect = Vec::new();
        for t in 0..4i64 {
            expect.push(Segment::new([1, t], [1, t + 1]));
            expect.push(Segment::new([t, 1], [t + 1, 1]));
        }
        expect.push(Segment::new([2, 0], [2, 1]));
        expect.push(Segment::new([0, 2], [1, 2]));
        expect.sort_unstable();
        assert_eq!(l.segments, expect);
        assert!((l.length() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn scale_limits_enforced() {
        assert!(build_localized_network(0).is_err());
        assert!(build_localized_network(MAX_DEPTH + 1).is_err());
    }

    #[test]
    fn levels_mutually_disjoint() {
        let net = build_localized_network(4).unwrap();
        let top = net.base_lattice_log2();
        let mut seen: HashSet<Segment> = HashSet::new();
        for j in 1..=net.depth() {
            for s in net.segments_at(j, top) {
                assert!(seen.insert(s), "level {j} shares an edge");
            }
        }
    }

    #[test]
    fn self_similarity_reproduces_next_level() {
        // Quarter-scaling and tiling Γ^(k) must reproduce Γ^(k+1) ∪ Γ^(k).
        let net = build_localized_network(4).unwrap();
        for k in 1..4usize {
            let log2_k = 2 * k as u32;
            let mut union_k: HashSet<Segment> = HashSet::new();
            for j in 1..=k {
                union_k.extend(net.segments_at(j, log2_k));
            }
            let quarter = 1i64 << log2_k;
            let mut tiled: HashSet<Segment> = HashSet::new();
            for s in &union_k {
                tiled.insert(*s);
                tiled.insert(Segment::new(
                    [s.a[0] + quarter, s.a[1]],
                    [s.b[0] + quarter, s.b[1]],
                ));
                tiled.insert(Segment::new(
                    [s.a[0], s.a[1] + quarter],
                    [s.b[0], s.b[1] + quarter],
                ));
            }
            // Γ^(k) expressed at the (k+1)-lattice.
            let mut on_next: HashSet<Segment> = HashSet::new();
            for j in 1..=k {
                on_next.extend(net.segments_at(j, log2_k + 2));
            }
            let mut expect: HashSet<Segment> = on_next.clone();
            expect.extend(net.segments_at(k + 1, log2_k + 2));
            let mut produced: HashSet<Segment> = on_next;
            produced.extend(tiled);
            assert_eq!(produced, expect, "self-similarity broken at k={k}");
        }
    }

    #[test]
    fn localized_cell_counts_and_partition_property() {
        let net = build_localized_network(3).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, 3);
        // k=1: flood-fill component count pinned from the construction.
        let mesh1 = hierarchy.mesh_for_scale(1);
        let p1 = extract_cells(&net, 1, mesh1).unwrap();
        assert_eq!(p1.n_cells(), 6);
        // Every triangle in exactly one cell; areas sum to 1.
        let mut area = 0.0;
        for c in &p1.cells {
            for &t in &c.triangles {
                area += mesh1.triangle_area(t as usize);
            }
        }
        assert!((area - 1.0).abs() < 1e-12);
        let mut owned = vec![0usize; mesh1.n_triangles()];
        for (cid, c) in p1.cells.iter().enumerate() {
            for &t in &c.triangles {
                owned[t as usize] += 1;
                assert_eq!(p1.cell_of_triangle[t as usize], cid as u32);
            }
        }
        assert!(owned.iter().all(|&c| c == 1));
        // k=2 has 21 cells (each refined quarter carries a 6-cell copy).
        let p2 = extract_cells(&net, 2, hierarchy.mesh_for_scale(2)).unwrap();
        assert_eq!(p2.n_cells(), 21);
        // Edge-adjacency neighbor counts, pinned: cells next to a refined
        // quarter keep gaining neighbors, so no uniform bound of 6 exists
        // (4 at k=1, 8 at k=2, growing with k).
        assert_eq!(p1.max_neighbors(), 4);
        assert_eq!(p2.max_neighbors(), 8);
        // k=0 on any mesh: single cell.
        let p0 = extract_cells(&net, 0, mesh1).unwrap();
        assert_eq!(p0.n_cells(), 1);
    }

    #[test]
    fn invariance_flags_and_dk() {
        let net = build_localized_network(3).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, 3);
        let p1 = extract_cells(&net, 1, hierarchy.mesh_for_scale(1)).unwrap();
        let non_invariant = p1.cells.iter().filter(|c| !c.invariant).count();
        assert_eq!(non_invariant, 3);
        // All non-invariant cells are the quarter-size boxes.
        assert!((p1.diameter_bound - std::f64::consts::SQRT_2 / 4.0).abs() < 1e-12);
        let p2 = extract_cells(&net, 2, hierarchy.mesh_for_scale(2)).unwrap();
        assert!(p2.diameter_bound < p1.diameter_bound);
        assert!((p2.diameter_bound - std::f64::consts::SQRT_2 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn resolution_checks() {
        let net = build_localized_network(2).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, 2);
        let t1 = hierarchy.mesh_for_scale(1);
        assert!(check_resolution(&net, 1, t1));
        assert!(!check_resolution(&net, 2, t1));
        assert!(check_resolution(&net, 2, hierarchy.mesh_for_scale(2)));
        assert!(check_resolution(&net, 0, t1));
    }

    #[test]
    fn localized_constants_closed_forms() {
        let net = build_localized_network(3).unwrap();
        let c = constants_for(&net, 1.0, 3, CkConvention::Table).unwrap();
        assert_eq!(c.c_j, vec![2.0, 4.0, 8.0]);
        assert!((c.d_k[1] - std::f64::consts::SQRT_2 / 16.0).abs() < 1e-15);
        assert_eq!(c.r_k, vec![1.0, 0.5, 0.25]);
        assert_eq!(c.jump_weights, vec![4.0, 16.0, 64.0]);
        let alt = constants_for(&net, 1.0, 3, CkConvention::Construction).unwrap();
        assert_eq!(alt.c_j, vec![1.0, 4.0, 10.0]);

        // The uniform-decay condition holds for c = 1 with a bound below 2;
        // the smallness condition overshoots the unit constant by exactly
        // sqrt(2) on this network at every level.
        assert!(c.qdec_holds(2.0));
        assert!((c.smallcl_margin() - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(c.smallcl_holds(std::f64::consts::SQRT_2 + 1e-12));
    }

    #[test]
    fn localized_dk_monotone() {
        let net = build_localized_network(4).unwrap();
        let hierarchy = MeshHierarchy::build(NetworkKind::Localized, 4);
        let mut prev = f64::INFINITY;
        for k in 1..4 {
            let p = extract_cells(&net, k, hierarchy.mesh_for_scale(k)).unwrap();
            assert!(p.diameter_bound < prev);
            prev = p.diameter_bound;
        }
    }
}
