//! Tree constructions: cones over ultrametric spaces and stapled amalgams.

use super::{RTree, TreeBoundary, TreeError, TreePos};
use crate::tol;
use std::collections::BTreeMap;

/// A finite ultrametric space given by its distance table.
#[derive(Debug, Clone)]
pub struct UltrametricSpace {
    d: Vec<Vec<f64>>,
}

impl UltrametricSpace {
    pub fn new(d: Vec<Vec<f64>>) -> Result<Self, TreeError> {
        let m = d.len();
        for (i, row) in d.iter().enumerate() {
            if row.len() != m {
                return Err(TreeError::BadPosition {
                    reason: format!("row {i} has length {}, want {m}", row.len()),
                });
            }
            if row[i] != 0.0 {
                return Err(TreeError::BadPosition {
                    reason: format!("diagonal entry ({i},{i}) is {}", row[i]),
                });
            }
        }
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                if !(d[i][j].is_finite() && d[i][j] > 0.0) {
                    return Err(TreeError::BadPosition {
                        reason: format!("entry ({i},{j}) = {} must be positive", d[i][j]),
                    });
                }
                if (d[i][j] - d[j][i]).abs() > tol::IDENTITY {
                    return Err(TreeError::BadPosition {
                        reason: format!("table is not symmetric at ({i},{j})"),
                    });
                }
            }
        }
        let scale = d
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, &x| acc.max(x.abs()));
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    if d[i][k] > d[i][j].max(d[j][k]) + tol::IDENTITY * scale {
                        return Err(TreeError::NotUltrametric { i, j, k });
                    }
                }
            }
        }
        Ok(UltrametricSpace { d })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.d[i][j]
    }
}

/// The cone over an ultrametric space, truncated to heights
/// `[u_min, u_max]` in log scale. Points of the cone are pairs (z, r) with
/// r > 0 sitting at height ln r on the branch of z; branches of z and w
/// merge at height ln d(z, w). The bottom of each branch and the single top
/// are marked as ideal directions, so the boundary consists of one point
/// per base point plus the cone point at infinity.
#[derive(Debug, Clone)]
pub struct ConeTree {
    pub tree: RTree,
    heights: Vec<f64>,
    leaf_of_point: Vec<usize>,
    top: usize,
    u_min: f64,
    u_max: f64,
}

pub fn cone_build(space: &UltrametricSpace, u_min: f64, u_max: f64) -> Result<ConeTree, TreeError> {
    let m = space.len();
    if m == 0 {
        return Err(TreeError::BadWindow {
            reason: "empty base space".into(),
        });
    }
    if !(u_min.is_finite() && u_max.is_finite() && u_min < u_max) {
        return Err(TreeError::BadWindow {
            reason: format!("need u_min < u_max, got [{u_min}, {u_max}]"),
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        for j in (i + 1)..m {
            let h = space.dist(i, j).ln();
            lo = lo.min(h);
            hi = hi.max(h);
        }
    }
    if m > 1 && (u_min >= lo || u_max <= hi) {
        return Err(TreeError::BadWindow {
            reason: format!("window [{u_min}, {u_max}] must contain merge heights [{lo}, {hi}]"),
        });
    }

    let mut heights: Vec<f64> = vec![u_min; m];
    let mut edge_list: Vec<(usize, usize, f64)> = Vec::new();
    let leaf_vertex: Vec<usize> = (0..m).collect();
    let leaf_height = vec![u_min; m];
    let trunk_base = {
        let merge_h = |i: usize, j: usize| space.dist(i, j).ln();
        let mut new_vertex = |h: f64| {
            heights.push(h);
            heights.len() - 1
        };
        link_dendrogram(
            m,
            &merge_h,
            &leaf_vertex,
            &leaf_height,
            &mut new_vertex,
            &mut edge_list,
        )
    };
    let top = heights.len();
    heights.push(u_max);
    edge_list.push((trunk_base, top, u_max - heights[trunk_base]));

    let mut tree = RTree::from_edges(heights.len(), &edge_list)?;
    tree.mark_ideal(top)?;
    for z in 0..m {
        tree.mark_ideal(z)?;
    }
    Ok(ConeTree {
        tree,
        heights,
        leaf_of_point: (0..m).collect(),
        top,
        u_min,
        u_max,
    })
}

/// Single-linkage merge tree over `m` leaves with pairwise merge heights
/// `h(i, j)`. Leaf i is the existing vertex `leaf_vertex[i]` sitting at
/// `leaf_height[i]`; internal vertices come from `new_vertex(height)` and
/// edges are appended as (lower, upper, length). Returns the top vertex.
///
/// Heights must satisfy the strong triangle inequality (an ultrametric, up
/// to ln) and exceed the leaf heights. Ties are folded into one multiway
/// vertex instead of a ladder of zero-length rungs: pairs are processed in
/// (height, lex) order, so the first merge of a tie group creates the vertex
/// and every later same-height merge finds that vertex on exactly one side.
pub(super) fn link_dendrogram(
    m: usize,
    h: &dyn Fn(usize, usize) -> f64,
    leaf_vertex: &[usize],
    leaf_height: &[f64],
    new_vertex: &mut dyn FnMut(f64) -> usize,
    edges: &mut Vec<(usize, usize, f64)>,
) -> usize {
    debug_assert!(m > 0 && leaf_vertex.len() == m && leaf_height.len() == m);
    let mut uf: Vec<usize> = (0..m).collect();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        if uf[x] != x {
            let r = find(uf, uf[x]);
            uf[x] = r;
        }
        uf[x]
    }
    let mut top: Vec<usize> = leaf_vertex.to_vec();
    let mut top_h: Vec<f64> = leaf_height.to_vec();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|&(a, b), &(c, d)| {
        h(a, b)
            .partial_cmp(&h(c, d))
            .expect("merge heights are comparable")
            .then((a, b).cmp(&(c, d)))
    });
    for (i, j) in pairs {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri == rj {
            continue;
        }
        let hm = h(i, j);
        let (ti, tj) = (top[ri], top[rj]);
        let (hi, hj) = (top_h[ri], top_h[rj]);
        let v = if hi == hm {
            debug_assert!(hj < hm);
            edges.push((tj, ti, hm - hj));
            ti
        } else if hj == hm {
            debug_assert!(hi < hm);
            edges.push((ti, tj, hm - hi));
            tj
        } else {
            let v = new_vertex(hm);
            edges.push((ti, v, hm - hi));
            edges.push((tj, v, hm - hj));
            v
        };
        uf[ri] = rj;
        top[rj] = v;
        top_h[rj] = hm;
    }
    let r = find(&mut uf, 0);
    top[r]
}

impl ConeTree {
    /// The position of the cone point (z, r), at height ln r on z's branch.
    pub fn position(&self, z: usize, r: f64) -> Result<TreePos, TreeError> {
        if z >= self.leaf_of_point.len() {
            return Err(TreeError::BadPosition {
                reason: format!("base point {z} out of range"),
            });
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(TreeError::BadPosition {
                reason: format!("radius {r} must be positive"),
            });
        }
        let u = r.ln();
        if u < self.u_min - tol::IDENTITY || u > self.u_max + tol::IDENTITY {
            return Err(TreeError::BadPosition {
                reason: format!("height {u} outside window [{}, {}]", self.u_min, self.u_max),
            });
        }
        let u = u.clamp(self.u_min, self.u_max);
        let mut cur = self.leaf_of_point[z];
        loop {
            if self.heights[cur] >= u {
                return Ok(TreePos::Vertex(cur));
            }
            // Each vertex below the top has a unique neighbor above it.
            let mut upward = None;
            for &(e, w) in &self.tree.adj[cur] {
                if self.heights[w] > self.heights[cur] {
                    upward = Some((e, w));
                    break;
                }
            }
            let (e, w) = upward.expect("non-top vertex has an upward edge");
            if self.heights[w] >= u {
                let t = u - self.heights[cur];
                debug_assert_eq!(self.tree.edges[e].a, cur);
                return Ok(self.tree.normalize_pos(&TreePos::Edge { edge: e, t }));
            }
            cur = w;
        }
    }

    /// Direction to the cone point at infinity (up the trunk).
    pub fn infinity(&self) -> TreeBoundary {
        TreeBoundary(self.top)
    }

    /// Direction to the boundary point under base point z (down the branch).
    pub fn point_direction(&self, z: usize) -> TreeBoundary {
        TreeBoundary(self.leaf_of_point[z])
    }

    pub fn base_len(&self) -> usize {
        self.leaf_of_point.len()
    }
}

/// One gluing instruction: vertex `pairs[k].0` of part `u` is identified
/// with vertex `pairs[k].1` of part `v`.
#[derive(Debug, Clone)]
pub struct Staple {
    pub u: usize,
    pub v: usize,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct StaplePlan {
    pub parts: Vec<RTree>,
    pub staples: Vec<Staple>,
}

#[derive(Debug, Clone)]
pub struct StapledTree {
    pub tree: RTree,
    vmap: Vec<Vec<usize>>,
}

impl StapledTree {
    /// The quotient vertex carrying vertex `v` of part `part`.
    pub fn image(&self, part: usize, v: usize) -> usize {
        self.vmap[part][v]
    }
}

/// Glues the parts along the staples and checks that the result is a tree.
///
/// Each staple must identify convex subtrees isometrically. Cycles in the
/// part graph are only allowed when every pair of parts around the cycle is
/// stapled directly and the identifications close up around triangles; a
/// cycle failing the first condition would survive into the quotient.
pub fn staple_build(plan: &StaplePlan) -> Result<StapledTree, TreeError> {
    let np = plan.parts.len();
    if np == 0 {
        return Err(TreeError::NotATree {
            reason: "no parts".into(),
        });
    }
    let mut pair_seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (si, st) in plan.staples.iter().enumerate() {
        if st.u >= np || st.v >= np || st.u == st.v {
            return Err(TreeError::BadStaple {
                staple: si,
                reason: format!("part pair ({}, {}) invalid", st.u, st.v),
            });
        }
        if st.pairs.is_empty() {
            return Err(TreeError::BadStaple {
                staple: si,
                reason: "no glued points".into(),
            });
        }
        let key = (st.u.min(st.v), st.u.max(st.v));
        if pair_seen.insert(key, si).is_some() {
            return Err(TreeError::BadStaple {
                staple: si,
                reason: format!("duplicate staple between parts {} and {}", key.0, key.1),
            });
        }
        for side in 0..2 {
            let (part, verts): (usize, Vec<usize>) = if side == 0 {
                (st.u, st.pairs.iter().map(|p| p.0).collect())
            } else {
                (st.v, st.pairs.iter().map(|p| p.1).collect())
            };
            let tree = &plan.parts[part];
            let mut sorted = verts.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != verts.len() {
                return Err(TreeError::BadStaple {
                    staple: si,
                    reason: format!("repeated vertex on part {part}"),
                });
            }
            for &x in &verts {
                if x >= tree.n_vertices() {
                    return Err(TreeError::BadStaple {
                        staple: si,
                        reason: format!("vertex {x} out of range in part {part}"),
                    });
                }
                if tree.is_ideal(x) {
                    return Err(TreeError::BadStaple {
                        staple: si,
                        reason: format!("vertex {x} of part {part} is an ideal leaf"),
                    });
                }
            }
            // Convexity: the glued set must contain every vertex between
            // two of its members.
            for i in 0..verts.len() {
                for j in (i + 1)..verts.len() {
                    for w in tree.vertex_path(verts[i], verts[j]) {
                        if !sorted.binary_search(&w).is_ok() {
                            return Err(TreeError::BadStaple {
                                staple: si,
                                reason: format!(
                                    "glued set of part {part} is not convex: misses vertex {w}"
                                ),
                            });
                        }
                    }
                }
            }
        }
        // Isometry of the pairing.
        for i in 0..st.pairs.len() {
            for j in (i + 1)..st.pairs.len() {
                let du = plan.parts[st.u].dist_v(st.pairs[i].0, st.pairs[j].0);
                let dv = plan.parts[st.v].dist_v(st.pairs[i].1, st.pairs[j].1);
                if (du - dv).abs() > tol::IDENTITY * (1.0 + du.abs()) {
                    return Err(TreeError::BadStaple {
                        staple: si,
                        reason: format!(
                            "pairing is not isometric: d({},{}) = {du} vs d({},{}) = {dv}",
                            st.pairs[i].0, st.pairs[j].0, st.pairs[i].1, st.pairs[j].1
                        ),
                    });
                }
            }
        }
    }

    // Cycles of the part graph must sit inside complete subgraphs: every
    // biconnected component with more than one edge has to be a clique.
    let mut part_adj: Vec<Vec<usize>> = vec![Vec::new(); np];
    for st in &plan.staples {
        part_adj[st.u].push(st.v);
        part_adj[st.v].push(st.u);
    }
    for comp in biconnected_components(np, &part_adj) {
        if comp.len() <= 2 {
            continue;
        }
        for i in 0..comp.len() {
            for j in (i + 1)..comp.len() {
                let key = (comp[i].min(comp[j]), comp[i].max(comp[j]));
                if !pair_seen.contains_key(&key) {
                    return Err(TreeError::CycleNotContractible { cycle: comp });
                }
            }
        }
    }

    // Around each stapled triangle the identifications must close up, and
    // the middle part must actually pass shared points through.
    let staple_map = |a: usize, b: usize| -> Option<BTreeMap<usize, usize>> {
        let key = (a.min(b), a.max(b));
        let si = *pair_seen.get(&key)?;
        let st = &plan.staples[si];
        let mut m = BTreeMap::new();
        for &(x, y) in &st.pairs {
            if st.u == a {
                m.insert(x, y);
            } else {
                m.insert(y, x);
            }
        }
        Some(m)
    };
    for (&(u, v), _) in &pair_seen {
        for w in 0..np {
            if w == u || w == v {
                continue;
            }
            let (Some(f_uv), Some(f_uw), Some(f_vw)) =
                (staple_map(u, v), staple_map(u, w), staple_map(v, w))
            else {
                continue;
            };
            let mut shared = false;
            for (&x, &y) in &f_uv {
                let Some(&z_from_u) = f_uw.get(&x) else {
                    continue;
                };
                shared = true;
                match f_vw.get(&y) {
                    Some(&z_from_v) if z_from_v == z_from_u => {}
                    _ => {
                        return Err(TreeError::ConsistencyViolation {
                            cycle: (u, v, w),
                            point: x,
                        })
                    }
                }
            }
            if !shared {
                // The three staples form a triangle avoiding any common
                // point, which leaves a genuine loop in the quotient.
                return Err(TreeError::CycleNotContractible {
                    cycle: vec![u, v, w],
                });
            }
        }
    }

    // Quotient by the staple identifications.
    let mut offset = vec![0usize; np];
    let mut total = 0usize;
    for (p, t) in plan.parts.iter().enumerate() {
        offset[p] = total;
        total += t.n_vertices();
    }
    let mut uf: Vec<usize> = (0..total).collect();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        if uf[x] != x {
            let r = find(uf, uf[x]);
            uf[x] = r;
        }
        uf[x]
    }
    for st in &plan.staples {
        for &(x, y) in &st.pairs {
            let (gx, gy) = (offset[st.u] + x, offset[st.v] + y);
            let (rx, ry) = (find(&mut uf, gx), find(&mut uf, gy));
            if rx != ry {
                uf[rx] = ry;
            }
        }
    }
    let mut class_id: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vmap: Vec<Vec<usize>> = Vec::with_capacity(np);
    for (p, t) in plan.parts.iter().enumerate() {
        let mut row = Vec::with_capacity(t.n_vertices());
        for v in 0..t.n_vertices() {
            let root = find(&mut uf, offset[p] + v);
            let next = class_id.len();
            row.push(*class_id.entry(root).or_insert(next));
        }
        vmap.push(row);
    }
    // Edges inside glued regions coincide across parts; keep one copy.
    let mut edge_keys: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut edge_list: Vec<(usize, usize, f64)> = Vec::new();
    for (p, t) in plan.parts.iter().enumerate() {
        for e in t.edges() {
            let (a, b) = (vmap[p][e.a], vmap[p][e.b]);
            let key = (a.min(b), a.max(b));
            match edge_keys.get(&key) {
                Some(&len) => {
                    debug_assert!((len - e.len).abs() <= tol::IDENTITY * (1.0 + len.abs()));
                }
                None => {
                    edge_keys.insert(key, e.len);
                    edge_list.push((a, b, e.len));
                }
            }
        }
    }
    let mut tree = RTree::from_edges(class_id.len(), &edge_list)?;
    for (p, t) in plan.parts.iter().enumerate() {
        for v in t.ideal_leaves() {
            tree.mark_ideal(vmap[p][v])?;
        }
    }
    Ok(StapledTree { tree, vmap })
}

/// Vertex sets of biconnected components (only those with >= 2 edges carry
/// a cycle, but we return all nontrivial ones and let the caller filter).
fn biconnected_components(n: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut disc = vec![0usize; n];
    let mut low = vec![0usize; n];
    let mut timer = 1usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut edge_stack: Vec<(usize, usize)> = Vec::new();
    // Iterative DFS; states carry the next neighbor index to look at.
    for start in 0..n {
        if disc[start] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        while let Some(&mut (v, parent, ref mut idx)) = stack.last_mut() {
            if *idx < adj[v].len() {
                let w = adj[v][*idx];
                *idx += 1;
                if disc[w] == 0 {
                    edge_stack.push((v, w));
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, v, 0));
                } else if w != parent && disc[w] < disc[v] {
                    edge_stack.push((v, w));
                }
            } else {
                stack.pop();
                if let Some(&mut (p, _, _)) = stack.last_mut() {
                    low[p] = low[p].min(low[v]);
                    if low[v] >= disc[p] {
                        let mut verts = Vec::new();
                        while let Some(&(a, b)) = edge_stack.last() {
                            edge_stack.pop();
                            verts.push(a);
                            verts.push(b);
                            if (a, b) == (p, v) {
                                break;
                            }
                        }
                        verts.sort_unstable();
                        verts.dedup();
                        if !verts.is_empty() {
                            comps.push(verts);
                        }
                    }
                }
            }
        }
    }
    comps
}
