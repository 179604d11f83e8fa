//! Seeded random geological interface networks.
//!
//! The unit square is split by four non-self-intersecting lattice-edge
//! paths running from the boundary midpoints to the center; each resulting
//! cell is recursively either split the same way on the next-finer lattice
//! or left alone forever, with refinement probability biased towards the
//! left and lower boundary.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, InterfaceNetwork, LevelEdges, NetworkKind, Segment, LATTICE_STEPS};
use crate::{Error, Result};

const PATH_BIAS_LAMBDA: f64 = 8.0;
const BACKTRACK_CAP: usize = 100;
const RESEED_CAP: usize = 12;
const CENTER_CANDIDATES: usize = 8;

/// A cell as a topological quadrilateral: four corner points joined by
/// four lattice-edge chains, positively oriented.
struct Frame {
    lattice_log2: u32,
    corners: [[i64; 2]; 4],
    /// `sides[i]` runs from `corners[i]` to `corners[(i+1)%4]`.
    sides: [Vec<[i64; 2]>; 4],
    /// Creation level (cells created by the level-l split have level l).
    level: usize,
    uid: u64,
}

impl Frame {
    fn upsampled(&self) -> Frame {
        let up_chain = |chain: &Vec<[i64; 2]>| {
            let mut out = Vec::with_capacity(chain.len() * 2 - 1);
            for w in chain.windows(2) {
                out.push([w[0][0] * 2, w[0][1] * 2]);
                out.push([w[0][0] + w[1][0], w[0][1] + w[1][1]]);
            }
            let last = chain.last().unwrap();
            out.push([last[0] * 2, last[1] * 2]);
            out
        };
        Frame {
            lattice_log2: self.lattice_log2 + 1,
            corners: self.corners.map(|c| [c[0] * 2, c[1] * 2]),
            sides: [
                up_chain(&self.sides[0]),
                up_chain(&self.sides[1]),
                up_chain(&self.sides[2]),
                up_chain(&self.sides[3]),
            ],
            level: self.level,
            uid: self.uid,
        }
    }

    fn boundary_polygon(&self) -> Vec<[i64; 2]> {
        let mut poly = Vec::new();
        for side in &self.sides {
            poly.extend_from_slice(&side[..side.len() - 1]);
        }
        poly
    }
}

fn polygon_centroid(poly: &[[i64; 2]]) -> [f64; 2] {
    let n = poly.len();
    let mut a2 = 0i64;
    let mut cx = 0i64;
    let mut cy = 0i64;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let cr = p[0] * q[1] - q[0] * p[1];
        a2 += cr;
        cx += (p[0] + q[0]) * cr;
        cy += (p[1] + q[1]) * cr;
    }
    let a = a2 as f64 / 2.0;
    [cx as f64 / (6.0 * a), cy as f64 / (6.0 * a)]
}

/// Even-odd point-in-polygon for a lattice point not on the boundary.
/// The boundary consists of unit steps, so integer arithmetic is exact.
fn point_in_polygon(poly: &[[i64; 2]], p: [i64; 2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            // x-coordinate of the crossing with the horizontal through p,
            // times (b1 - a1) to stay integral.
            let dy = b[1] - a[1];
            let x_num = a[0] * dy + (p[1] - a[1]) * (b[0] - a[0]);
            let lhs = x_num - p[0] * dy;
            if (dy > 0 && lhs > 0) || (dy < 0 && lhs < 0) {
                inside = !inside;
            }
        }
    }
    inside
}

struct CellGeometry {
    interior: HashSet<[i64; 2]>,
    boundary: HashSet<[i64; 2]>,
    /// Interior vertices ordered by distance to the area centroid.
    center_candidates: Vec<[i64; 2]>,
}

impl CellGeometry {
    fn center(&self) -> [i64; 2] {
        self.center_candidates[0]
    }
}

/// Enumerates interior lattice vertices and ranks center candidates by
/// distance to the area centroid (ties by coordinates).
fn analyze_cell(frame: &Frame) -> Option<CellGeometry> {
    let poly = frame.boundary_polygon();
    let boundary: HashSet<[i64; 2]> = poly.iter().copied().collect();
    let centroid = polygon_centroid(&poly);
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for p in &poly {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut interior = HashSet::new();
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            let p = [x, y];
            if !boundary.contains(&p) && point_in_polygon(&poly, p) {
                interior.insert(p);
            }
        }
    }
    if interior.is_empty() {
        return None;
    }
    let mut ranked: Vec<[i64; 2]> = interior.iter().copied().collect();
    ranked.sort_unstable_by(|a, b| {
        let d2 = |p: &[i64; 2]| {
            let dx = p[0] as f64 - centroid[0];
            let dy = p[1] as f64 - centroid[1];
            dx * dx + dy * dy
        };
        d2(a).partial_cmp(&d2(b)).unwrap().then(a.cmp(b))
    });
    // Prefer candidates with enough interior neighbors to admit four
    // vertex-disjoint path endings.
    let degree = |p: &[i64; 2]| {
        LATTICE_STEPS
            .iter()
            .filter(|s| interior.contains(&[p[0] + s[0], p[1] + s[1]]))
            .count()
    };
    let mut center_candidates: Vec<[i64; 2]> = ranked
        .iter()
        .copied()
        .filter(|p| degree(p) >= 4)
        .take(CENTER_CANDIDATES)
        .collect();
    if center_candidates.is_empty() {
        center_candidates = ranked.into_iter().take(CENTER_CANDIDATES).collect();
    }
    Some(CellGeometry {
        interior,
        boundary,
        center_candidates,
    })
}

/// Weighted depth-first path search from `start` (on the cell boundary)
/// to `target` (the cell center). Intermediate vertices must be interior,
/// unused by sibling paths and unvisited. At every step the admissible
/// edges are tried in an order drawn by weighted sampling, with weights
/// decaying exponentially in the distance of the edge midpoint from the
/// chord through start and target; this concentrates paths near the
/// straight line while keeping them random. Backtracking is complete, so
/// a path is found whenever one exists within the backtrack budget.
fn build_path(
    geo: &CellGeometry,
    used: &HashSet<[i64; 2]>,
    start: [i64; 2],
    target: [i64; 2],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<[i64; 2]>> {
    let chord = [
        (target[0] - start[0]) as f64,
        (target[1] - start[1]) as f64,
    ];
    let chord_len = (chord[0] * chord[0] + chord[1] * chord[1]).sqrt().max(1e-12);
    let perp_dist = |p: [f64; 2]| {
        let rx = p[0] - start[0] as f64;
        let ry = p[1] - start[1] as f64;
        (chord[0] * ry - chord[1] * rx).abs() / chord_len
    };

    struct NodeFrame {
        v: [i64; 2],
        // Candidates in reverse preference order (pop takes the best).
        cands: Vec<[i64; 2]>,
    }

    let order_cands = |v: [i64; 2],
                       visited: &HashSet<[i64; 2]>,
                       rng: &mut ChaCha8Rng|
     -> Vec<[i64; 2]> {
        let mut weighted: Vec<([i64; 2], f64)> = Vec::with_capacity(6);
        for step in LATTICE_STEPS {
            let w = [v[0] + step[0], v[1] + step[1]];
            if visited.contains(&w) {
                continue;
            }
            let admissible = w == target || (geo.interior.contains(&w) && !used.contains(&w));
            if !admissible {
                continue;
            }
            let mid = [(v[0] + w[0]) as f64 / 2.0, (v[1] + w[1]) as f64 / 2.0];
            weighted.push((w, (-PATH_BIAS_LAMBDA * perp_dist(mid)).exp()));
        }
        // Weighted sampling without replacement, best candidate last.
        let mut ordered = Vec::with_capacity(weighted.len());
        while !weighted.is_empty() {
            let total: f64 = weighted.iter().map(|c| c.1).sum();
            let mut pick = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
            let mut idx = weighted.len() - 1;
            for (i, (_, wt)) in weighted.iter().enumerate() {
                if pick < *wt {
                    idx = i;
                    break;
                }
                pick -= *wt;
            }
            ordered.push(weighted.swap_remove(idx).0);
        }
        ordered.reverse();
        ordered
    };

    let mut visited: HashSet<[i64; 2]> = HashSet::new();
    visited.insert(start);
    let mut stack = vec![NodeFrame {
        v: start,
        cands: order_cands(start, &visited, rng),
    }];
    let mut backtracks = 0usize;

    loop {
        let top = stack.last_mut()?;
        match top.cands.pop() {
            Some(w) => {
                if w == target {
                    let mut path: Vec<[i64; 2]> = stack.iter().map(|f| f.v).collect();
                    path.push(target);
                    return Some(path);
                }
                visited.insert(w);
                let cands = order_cands(w, &visited, rng);
                stack.push(NodeFrame { v: w, cands });
            }
            None => {
                let dead = stack.pop().unwrap();
                visited.remove(&dead.v);
                backtracks += 1;
                if stack.is_empty() || backtracks > BACKTRACK_CAP {
                    return None;
                }
            }
        }
    }
}

/// Midpoint of a side chain; the chain has an even number of steps after
/// upsampling, so this is always a lattice vertex.
fn side_midpoint(side: &[[i64; 2]]) -> [i64; 2] {
    debug_assert!(side.len() % 2 == 1, "side chains carry an even step count");
    side[side.len() / 2]
}

struct Split {
    paths: [Vec<[i64; 2]>; 4],
    midpoints: [[i64; 2]; 4],
    center: [i64; 2],
}

/// Splits the frame with four paths, reseeding and moving to the next
/// candidate center on failure.
fn split_frame(frame: &Frame, geo: &CellGeometry, seed: u64, root: bool) -> Result<Split> {
    // The root center is the exact midpoint of the square; deeper cells
    // walk the centroid-ranked candidates.
    let centers: Vec<[i64; 2]> = if root {
        let res = 1i64 << frame.lattice_log2;
        vec![[res / 2, res / 2]]
    } else {
        geo.center_candidates.clone()
    };
    let midpoints = [
        side_midpoint(&frame.sides[3]), // left on the root frame
        side_midpoint(&frame.sides[2]), // top
        side_midpoint(&frame.sides[1]), // right
        side_midpoint(&frame.sides[0]), // bottom
    ];
    for (ci, &center) in centers.iter().enumerate() {
        for attempt in 0..RESEED_CAP {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                seed,
                0x7061746873, // "paths"
                frame.uid,
                ci as u64,
                attempt as u64,
            ]));
            let mut used: HashSet<[i64; 2]> = HashSet::new();
            let mut paths: Vec<Vec<[i64; 2]>> = Vec::with_capacity(4);
            let mut ok = true;
            for m in midpoints {
                match build_path(geo, &used, m, center, &mut rng) {
                    Some(p) => {
                        for v in &p[1..p.len() - 1] {
                            used.insert(*v);
                        }
                        paths.push(p);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let paths: [Vec<[i64; 2]>; 4] = paths.try_into().unwrap();
                return Ok(Split {
                    paths,
                    midpoints,
                    center,
                });
            }
        }
    }
    Err(Error::PathConstruction {
        level: frame.level + 1,
        cell: frame.uid as usize,
        retries: centers.len() * RESEED_CAP,
    })
}

/// Reorders the l,t,r,b paths to match side indices 0..4 (bottom, right,
/// top, left) and assembles the four child frames.
fn child_frames(frame: &Frame, split: &Split, next_uid: &mut u64) -> [Frame; 4] {
    // Path per side index: paths were built in order sides [3,2,1,0].
    let path_of_side = |i: usize| &split.paths[3 - i];
    let mid_of_side = |i: usize| split.midpoints[3 - i];
    let halves = |i: usize| {
        let side = &frame.sides[i];
        let m = (side.len() - 1) / 2;
        (side[..=m].to_vec(), side[m..].to_vec())
    };
    std::array::from_fn(|j| {
        // Child j sits between the side-j and side-(j+1) paths and owns
        // the parent corner j+1.
        let jn = (j + 1) % 4;
        let (_, second_j) = halves(j);
        let (first_jn, _) = halves(jn);
        let mut rev_path_j: Vec<[i64; 2]> = path_of_side(j).clone();
        rev_path_j.reverse(); // now center -> midpoint j
        let uid = *next_uid;
        *next_uid += 1;
        Frame {
            lattice_log2: frame.lattice_log2,
            corners: [
                mid_of_side(j),
                frame.corners[jn],
                mid_of_side(jn),
                split.center,
            ],
            sides: [
                second_j,
                first_jn,
                path_of_side(jn).clone(),
                rev_path_j,
            ],
            level: frame.level + 1,
            uid,
        }
    })
}

/// Refinement decision: draw a threshold with density `2(1-x)` and refine
/// iff the smaller center coordinate lies below it, giving refinement
/// probability `(1 - min)^2` with the stated bias towards the left and
/// lower boundary.
fn decides_refinement(seed: u64, uid: u64, center: [i64; 2], res: i64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x726566696e65, uid]));
    let u: f64 = rng.gen_range(0.0..1.0);
    let xi = 1.0 - (1.0 - u).sqrt();
    let m = center[0].min(center[1]) as f64 / res as f64;
    m <= xi
}

pub(super) fn build(k_max: usize, seed: u64) -> Result<InterfaceNetwork> {
    let root_res = 16i64;
    let root = Frame {
        lattice_log2: 4,
        corners: [[0, 0], [root_res, 0], [root_res, root_res], [0, root_res]],
        sides: [
            (0..=root_res).map(|t| [t, 0]).collect(),
            (0..=root_res).map(|t| [root_res, t]).collect(),
            (0..=root_res).rev().map(|t| [t, root_res]).collect(),
            (0..=root_res).rev().map(|t| [0, t]).collect(),
        ],
        level: 0,
        uid: 0,
    };
    let mut next_uid = 1u64;
    let mut levels: Vec<LevelEdges> = Vec::new();
    let mut active = vec![root];

    for level in 1..=k_max {
        let mut segments = Vec::new();
        let mut next_active = Vec::new();
        for frame in &active {
            // The root split is unconditional; later cells decided their
            // fate at creation (encoded by still being active here).
            let work = if level == 1 {
                frame.clone_for_split()
            } else {
                frame.upsampled()
            };
            let geo = match analyze_cell(&work) {
                Some(g) => g,
                None => continue, // no interior vertex, cannot split
            };
            let split = match split_frame(&work, &geo, seed, level == 1) {
                Ok(s) => s,
                Err(e) if level > 1 => {
                    // An unsplittable cell stays whole forever.
                    log::warn!("skipping refinement: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            for path in &split.paths {
                for w in path.windows(2) {
                    segments.push(Segment::new(w[0], w[1]));
                }
            }
            let children = child_frames(&work, &split, &mut next_uid);
            for child in children {
                if level < k_max {
                    let up = child.upsampled();
                    if let Some(geo) = analyze_cell(&up) {
                        if decides_refinement(seed, child.uid, geo.center(), 1 << up.lattice_log2)
                        {
                            next_active.push(child);
                        }
                    }
                }
            }
        }
        levels.push(LevelEdges {
            lattice_log2: (level + 3) as u32,
            segments,
        });
        active = next_active;
        if active.is_empty() && level < k_max {
            // No cell elected refinement; deeper levels stay empty.
            for l in level + 1..=k_max {
                levels.push(LevelEdges {
                    lattice_log2: (l + 3) as u32,
                    segments: Vec::new(),
                });
            }
            break;
        }
    }
    Ok(InterfaceNetwork::from_levels(
        NetworkKind::Geological,
        k_max,
        Some(seed),
        levels,
    ))
}

impl Frame {
    /// The root frame is already on the level-1 lattice; splitting it must
    /// not upsample.
    fn clone_for_split(&self) -> Frame {
        Frame {
            lattice_log2: self.lattice_log2,
            corners: self.corners,
            sides: self.sides.clone(),
            level: self.level,
            uid: self.uid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geological_network;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = build_geological_network(3, 42).unwrap();
        let b = build_geological_network(3, 42).unwrap();
        for j in 1..=3 {
            assert_eq!(a.level(j).segments, b.level(j).segments);
        }
        let c = build_geological_network(3, 43).unwrap();
        assert_ne!(a.level(1).segments, c.level(1).segments);
    }

    #[test]
    fn level_lattices_match_the_hierarchy() {
        let net = build_geological_network(4, 7).unwrap();
        for j in 1..=4 {
            assert_eq!(net.level(j).lattice_log2 as usize, j + 3);
        }
    }

    #[test]
    fn level1_paths_meet_only_at_center() {
        // Exhaustive pairwise vertex-sharing check on Γ_1 for several
        // seeds: the four paths meet in the center and only there.
        for seed in [0u64, 1, 2, 3, 11, 99] {
            let net = build_geological_network(1, seed).unwrap();
            let segs = &net.level(1).segments;
            // Rebuild the four paths by walking from the boundary midpoints.
            let res = net.level(1).res();
            let center = [res / 2, res / 2];
            let mut adj: std::collections::HashMap<[i64; 2], Vec<[i64; 2]>> =
                std::collections::HashMap::new();
            for s in segs.iter() {
                adj.entry(s.a).or_default().push(s.b);
                adj.entry(s.b).or_default().push(s.a);
            }
            // Each non-center vertex must have degree <= 2 and the center
            // exactly degree 4 (paths are vertex-disjoint elsewhere).
            for (v, ns) in &adj {
                if *v == center {
                    assert_eq!(ns.len(), 4, "seed {seed}: center degree");
                } else {
                    assert!(ns.len() <= 2, "seed {seed}: vertex {v:?} shared");
                }
            }
            // Paths start at the four boundary midpoints.
            for m in [
                [0, res / 2],
                [res / 2, res],
                [res, res / 2],
                [res / 2, 0],
            ] {
                assert_eq!(adj.get(&m).map(|n| n.len()), Some(1), "seed {seed}");
            }
        }
    }

    #[test]
    fn interfaces_strictly_inside_parent_cells() {
        let net = build_geological_network(3, 5).unwrap();
        // Deeper levels never share an edge with shallower levels.
        let top = net.base_lattice_log2();
        let mut seen = std::collections::HashSet::new();
        for j in 1..=net.depth() {
            for s in net.segments_at(j, top) {
                assert!(seen.insert(s), "edge reused across levels");
            }
        }
    }
}

