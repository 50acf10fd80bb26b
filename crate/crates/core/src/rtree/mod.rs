//! Finite R-trees with exact path metrics.
//!
//! A tree is stored as weighted edges; positions are either vertices or
//! points at an offset along an edge, so every point of the geometric
//! realization is addressable. Distances decompose over shared weighted
//! depths, which makes the four-point condition hold with zero defect in
//! floating point for vertex positions.
//!
//! Leaves may be marked "ideal": they stand for directions to infinity,
//! i.e. boundary points reached by extending the incident edge forever.
//! Gromov products with ideal directions stabilize at the marked leaf, so
//! boundary computations stay exact.

mod build;
mod orbit;

pub use build::{cone_build, staple_build, ConeTree, Staple, StaplePlan, StapledTree, UltrametricSpace};
pub use orbit::{geometric_product_tree, parabolic_from_counting, pure_schottky_tree, CountingSpec, GeometricProductPlan, OrbitTree, ParabolicOrbit};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::tol;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeError {
    /// The edge list does not describe a connected acyclic graph.
    NotATree { reason: String },
    /// An edge with a bad endpoint or non-positive length.
    BadEdge { index: usize, reason: String },
    /// A position outside its edge, or an unknown vertex.
    BadPosition { reason: String },
    /// Only leaves can be marked ideal.
    NotALeaf { vertex: usize },
    /// The distance table violates the strong triangle inequality.
    NotUltrametric { i: usize, j: usize, k: usize },
    /// Cone window does not contain the merge heights.
    BadWindow { reason: String },
    /// A staple pairing fails to be isometric or convex.
    BadStaple { staple: usize, reason: String },
    /// Three staples around a triangle do not close up.
    ConsistencyViolation { cycle: (usize, usize, usize), point: usize },
    /// A cycle of the staple graph does not lie in a complete subgraph.
    CycleNotContractible { cycle: Vec<usize> },
    /// Counting data whose values do not divide into each other.
    DivisibilityViolation { index: usize },
    /// Malformed counting thresholds or sizes.
    BadCounting { reason: String },
    /// A factor contributes no letters under the cutoff.
    EmptyFactor { index: usize },
    /// A factor norm that no tree gadget realizes.
    NotTreeGeometric { factor: usize },
    /// Enumeration exceeded the configured cap.
    Budget { limit: usize },
}

impl std::fmt::Display for TreeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeError::NotATree { reason } => write!(f, "not a tree: {reason}"),
            TreeError::BadEdge { index, reason } => write!(f, "bad edge {index}: {reason}"),
            TreeError::BadPosition { reason } => write!(f, "bad position: {reason}"),
            TreeError::NotALeaf { vertex } => {
                write!(f, "vertex {vertex} is not a leaf and cannot be ideal")
            }
            TreeError::NotUltrametric { i, j, k } => write!(
                f,
                "not ultrametric: d({i},{k}) > max(d({i},{j}), d({j},{k}))"
            ),
            TreeError::BadWindow { reason } => write!(f, "bad cone window: {reason}"),
            TreeError::BadStaple { staple, reason } => {
                write!(f, "bad staple {staple}: {reason}")
            }
            TreeError::ConsistencyViolation { cycle, point } => write!(
                f,
                "staples around cycle ({}, {}, {}) do not close at point {point}",
                cycle.0, cycle.1, cycle.2
            ),
            TreeError::CycleNotContractible { cycle } => {
                write!(f, "staple-graph cycle {cycle:?} is not inside a complete subgraph")
            }
            TreeError::DivisibilityViolation { index } => {
                write!(f, "counting values at step {index} do not divide")
            }
            TreeError::BadCounting { reason } => write!(f, "bad counting data: {reason}"),
            TreeError::EmptyFactor { index } => {
                write!(f, "factor {index} has no letters under the cutoff")
            }
            TreeError::NotTreeGeometric { factor } => {
                write!(f, "norms of factor {factor} do not embed in a tree gadget")
            }
            TreeError::Budget { limit } => write!(f, "orbit enumeration exceeded {limit} points"),
        }
    }
}

impl std::error::Error for TreeError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub len: f64,
}

/// A point of the geometric realization: a vertex, or an interior point of
/// edge `edge` at arclength `t` from its `a` endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreePos {
    Vertex(usize),
    Edge { edge: usize, t: f64 },
}

/// A boundary direction: the extension to infinity beyond an ideal leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeBoundary(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct RTree {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>, // (edge index, neighbor)
    ideal: BTreeSet<usize>,
    // Rooted at vertex 0 for ancestor queries.
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth_w: Vec<f64>,
    depth_h: Vec<u32>,
    up: Vec<Vec<usize>>, // up[k][v] = 2^k-th ancestor
}

impl RTree {
    pub fn from_edges(n: usize, edge_list: &[(usize, usize, f64)]) -> Result<Self, TreeError> {
        if n == 0 {
            return Err(TreeError::NotATree {
                reason: "no vertices".into(),
            });
        }
        if edge_list.len() != n - 1 {
            return Err(TreeError::NotATree {
                reason: format!("{} vertices need {} edges, got {}", n, n - 1, edge_list.len()),
            });
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut adj = vec![Vec::new(); n];
        for (idx, &(a, b, len)) in edge_list.iter().enumerate() {
            if a >= n || b >= n {
                return Err(TreeError::BadEdge {
                    index: idx,
                    reason: format!("endpoint out of range ({a}, {b})"),
                });
            }
            if a == b {
                return Err(TreeError::BadEdge {
                    index: idx,
                    reason: "self loop".into(),
                });
            }
            if !(len.is_finite() && len > 0.0) {
                return Err(TreeError::BadEdge {
                    index: idx,
                    reason: format!("length {len} must be positive and finite"),
                });
            }
            adj[a].push((idx, b));
            adj[b].push((idx, a));
            edges.push(Edge { a, b, len });
        }
        // Root at 0 and check connectivity; acyclicity follows from the edge
        // count once everything is reachable.
        let mut parent = vec![usize::MAX; n];
        let mut parent_edge = vec![usize::MAX; n];
        let mut depth_w = vec![0.0; n];
        let mut depth_h = vec![0u32; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0usize];
        let mut seen = vec![false; n];
        seen[0] = true;
        parent[0] = 0;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(e, w) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = v;
                    parent_edge[w] = e;
                    depth_w[w] = depth_w[v] + edges[e].len;
                    depth_h[w] = depth_h[v] + 1;
                    stack.push(w);
                }
            }
        }
        if order.len() != n {
            return Err(TreeError::NotATree {
                reason: "graph is disconnected".into(),
            });
        }
        let levels = (usize::BITS - n.leading_zeros()).max(1) as usize;
        let mut up = vec![vec![0usize; n]; levels];
        up[0].copy_from_slice(&parent);
        for k in 1..levels {
            for v in 0..n {
                up[k][v] = up[k - 1][up[k - 1][v]];
            }
        }
        Ok(RTree {
            n,
            edges,
            adj,
            ideal: BTreeSet::new(),
            parent,
            parent_edge,
            depth_w,
            depth_h,
            up,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn ideal_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.ideal.iter().copied()
    }

    pub fn is_ideal(&self, v: usize) -> bool {
        self.ideal.contains(&v)
    }

    /// Marks a leaf as a direction to infinity.
    pub fn mark_ideal(&mut self, v: usize) -> Result<(), TreeError> {
        if v >= self.n {
            return Err(TreeError::BadPosition {
                reason: format!("vertex {v} out of range"),
            });
        }
        if self.adj[v].len() != 1 {
            return Err(TreeError::NotALeaf { vertex: v });
        }
        self.ideal.insert(v);
        Ok(())
    }

    fn lca(&self, mut u: usize, mut v: usize) -> usize {
        if self.depth_h[u] < self.depth_h[v] {
            std::mem::swap(&mut u, &mut v);
        }
        let mut diff = self.depth_h[u] - self.depth_h[v];
        let mut k = 0;
        while diff > 0 {
            if diff & 1 == 1 {
                u = self.up[k][u];
            }
            diff >>= 1;
            k += 1;
        }
        if u == v {
            return u;
        }
        for k in (0..self.up.len()).rev() {
            if self.up[k][u] != self.up[k][v] {
                u = self.up[k][u];
                v = self.up[k][v];
            }
        }
        self.parent[u]
    }

    /// Exact distance between vertices via weighted depths.
    pub fn dist_v(&self, u: usize, v: usize) -> f64 {
        let m = self.lca(u, v);
        self.depth_w[u] + self.depth_w[v] - 2.0 * self.depth_w[m]
    }

    pub fn validate_pos(&self, p: &TreePos) -> Result<(), TreeError> {
        match *p {
            TreePos::Vertex(v) => {
                if v >= self.n {
                    return Err(TreeError::BadPosition {
                        reason: format!("vertex {v} out of range"),
                    });
                }
            }
            TreePos::Edge { edge, t } => {
                if edge >= self.edges.len() {
                    return Err(TreeError::BadPosition {
                        reason: format!("edge {edge} out of range"),
                    });
                }
                let len = self.edges[edge].len;
                if !(0.0..=len).contains(&t) {
                    return Err(TreeError::BadPosition {
                        reason: format!("offset {t} outside [0, {len}]"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Snaps edge positions sitting exactly on an endpoint to the vertex.
    pub fn normalize_pos(&self, p: &TreePos) -> TreePos {
        match *p {
            TreePos::Edge { edge, t } if t == 0.0 => TreePos::Vertex(self.edges[edge].a),
            TreePos::Edge { edge, t } if t == self.edges[edge].len => {
                TreePos::Vertex(self.edges[edge].b)
            }
            other => other,
        }
    }

    /// Distance between arbitrary positions.
    pub fn dist(&self, p: &TreePos, q: &TreePos) -> f64 {
        match (self.normalize_pos(p), self.normalize_pos(q)) {
            (TreePos::Vertex(u), TreePos::Vertex(v)) => self.dist_v(u, v),
            (TreePos::Vertex(u), TreePos::Edge { edge, t })
            | (TreePos::Edge { edge, t }, TreePos::Vertex(u)) => {
                let e = &self.edges[edge];
                (t + self.dist_v(e.a, u)).min(e.len - t + self.dist_v(e.b, u))
            }
            (TreePos::Edge { edge: e1, t: t1 }, TreePos::Edge { edge: e2, t: t2 }) => {
                if e1 == e2 {
                    return (t1 - t2).abs();
                }
                let a = &self.edges[e1];
                let b = &self.edges[e2];
                let via = |x: usize, s1: f64, y: usize, s2: f64| s1 + s2 + self.dist_v(x, y);
                via(a.a, t1, b.a, t2)
                    .min(via(a.a, t1, b.b, b.len - t2))
                    .min(via(a.b, a.len - t1, b.a, t2))
                    .min(via(a.b, a.len - t1, b.b, b.len - t2))
            }
        }
    }

    /// Gromov product (q | r)_p = (d(p,q) + d(p,r) - d(q,r)) / 2.
    pub fn gromov(&self, p: &TreePos, q: &TreePos, r: &TreePos) -> f64 {
        0.5 * (self.dist(p, q) + self.dist(p, r) - self.dist(q, r))
    }

    /// Gromov product of a position and a boundary direction. The extension
    /// beyond the ideal leaf cancels, so the marked leaf can stand in.
    pub fn gromov_boundary_point(&self, o: &TreePos, x: &TreePos, eta: TreeBoundary) -> f64 {
        let v = TreePos::Vertex(eta.0);
        0.5 * (self.dist(o, x) + self.dist(o, &v) - self.dist(x, &v))
    }

    /// Gromov product of two boundary directions; infinite when they agree.
    pub fn gromov_boundary_pair(&self, o: &TreePos, a: TreeBoundary, b: TreeBoundary) -> f64 {
        if a == b {
            return f64::INFINITY;
        }
        let va = TreePos::Vertex(a.0);
        let vb = TreePos::Vertex(b.0);
        0.5 * (self.dist(o, &va) + self.dist(o, &vb) - self.dist(&va, &vb))
    }

    /// Busemann cocycle toward an ideal direction: d(x, v) - d(y, v) for the
    /// marked leaf v standing in for the direction. Exact, because extending
    /// the ray past v adds the same amount to both distances.
    pub fn busemann(&self, xi: TreeBoundary, x: &TreePos, y: &TreePos) -> f64 {
        let v = TreePos::Vertex(xi.0);
        self.dist(x, &v) - self.dist(y, &v)
    }

    /// Defect of the four-point condition: among the three pairings
    /// d(x,y)+d(z,w), d(x,z)+d(y,w), d(x,w)+d(y,z), the two largest must
    /// agree in a tree.
    pub fn four_point_defect(&self, x: &TreePos, y: &TreePos, z: &TreePos, w: &TreePos) -> f64 {
        let mut s = [
            self.dist(x, y) + self.dist(z, w),
            self.dist(x, z) + self.dist(y, w),
            self.dist(x, w) + self.dist(y, z),
        ];
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s[0] - s[1]
    }

    /// The vertex path from u to v, inclusive.
    pub fn vertex_path(&self, u: usize, v: usize) -> Vec<usize> {
        let m = self.lca(u, v);
        let mut left = Vec::new();
        let mut x = u;
        while x != m {
            left.push(x);
            x = self.parent[x];
        }
        left.push(m);
        let mut right = Vec::new();
        let mut y = v;
        while y != m {
            right.push(y);
            y = self.parent[y];
        }
        left.extend(right.into_iter().rev());
        left
    }

    /// The point at arclength `s` from `from` on the segment toward `to`.
    pub fn point_along(&self, from: &TreePos, to: &TreePos, s: f64) -> Result<TreePos, TreeError> {
        self.validate_pos(from)?;
        self.validate_pos(to)?;
        let total = self.dist(from, to);
        if !(0.0..=total + tol::IDENTITY).contains(&s) {
            return Err(TreeError::BadPosition {
                reason: format!("arclength {s} outside [0, {total}]"),
            });
        }
        let from_n = self.normalize_pos(from);
        let to_n = self.normalize_pos(to);
        // Same-edge shortcut (also covers vertex endpoints of that edge).
        if let (TreePos::Edge { edge: e1, t: t1 }, TreePos::Edge { edge: e2, t: t2 }) =
            (&from_n, &to_n)
        {
            if e1 == e2 {
                let dir = if t2 >= t1 { 1.0 } else { -1.0 };
                return Ok(self.normalize_pos(&TreePos::Edge {
                    edge: *e1,
                    t: t1 + dir * s,
                }));
            }
        }
        // Entry vertex out of `from`, exit vertex into `to`.
        let (va, off_a) = match from_n {
            TreePos::Vertex(v) => (v, 0.0),
            TreePos::Edge { edge, t } => {
                let e = &self.edges[edge];
                let through_a = t + self.dist(&TreePos::Vertex(e.a), &to_n);
                let through_b = e.len - t + self.dist(&TreePos::Vertex(e.b), &to_n);
                if through_a <= through_b {
                    if s <= t {
                        return Ok(self.normalize_pos(&TreePos::Edge { edge, t: t - s }));
                    }
                    (e.a, t)
                } else {
                    if s <= e.len - t {
                        return Ok(self.normalize_pos(&TreePos::Edge { edge, t: t + s }));
                    }
                    (e.b, e.len - t)
                }
            }
        };
        let vb = match to_n {
            TreePos::Vertex(v) => v,
            TreePos::Edge { edge, t } => {
                let e = &self.edges[edge];
                let through_a = self.dist_v(va, e.a) + t;
                let through_b = self.dist_v(va, e.b) + e.len - t;
                if through_a <= through_b {
                    e.a
                } else {
                    e.b
                }
            }
        };
        let mut walked = off_a;
        if walked >= s {
            return Ok(TreePos::Vertex(va));
        }
        let path = self.vertex_path(va, vb);
        for win in path.windows(2) {
            let (x, y) = (win[0], win[1]);
            let (e, _) = self.adj[x]
                .iter()
                .find(|&&(_, nbr)| nbr == y)
                .copied()
                .expect("path edge exists");
            let len = self.edges[e].len;
            if walked + len >= s {
                let rem = s - walked;
                let t = if self.edges[e].a == x { rem } else { len - rem };
                return Ok(self.normalize_pos(&TreePos::Edge { edge: e, t }));
            }
            walked += len;
        }
        // Remaining arclength continues into to's edge (to_n interior).
        if let TreePos::Edge { edge, t } = to_n {
            let e = &self.edges[edge];
            let rem = s - walked;
            let t_new = if e.a == vb { rem } else { e.len - rem };
            // Guard against accumulated rounding at the far end.
            let t_clamped = t_new.clamp(t.min(t_new), t.max(t_new));
            return Ok(self.normalize_pos(&TreePos::Edge {
                edge,
                t: t_clamped,
            }));
        }
        Ok(TreePos::Vertex(vb))
    }

    /// The median of three positions: the unique point on all three pairwise
    /// segments, at arclength (y|z)_x from x along [x, y].
    pub fn median(&self, x: &TreePos, y: &TreePos, z: &TreePos) -> Result<TreePos, TreeError> {
        let gp = self.gromov(x, y, z);
        self.point_along(x, y, gp)
    }

    /// Distance from p to the subtree spanned by `members`, together with
    /// the nearest point. The span of S is the union of segments between
    /// members, and d(p, [s, s']) = (s | s')_p.
    pub fn project_to_span(
        &self,
        p: &TreePos,
        members: &[TreePos],
    ) -> Result<(TreePos, f64), TreeError> {
        if members.is_empty() {
            return Err(TreeError::BadPosition {
                reason: "projection needs a nonempty span".into(),
            });
        }
        let mut best = (0usize, 0usize, f64::INFINITY);
        for i in 0..members.len() {
            for j in i..members.len() {
                let g = self.gromov(p, &members[i], &members[j]);
                if g < best.2 {
                    best = (i, j, g);
                }
            }
        }
        let foot = self.point_along(p, &members[best.0], best.2)?;
        Ok((foot, best.2))
    }
}

/// Serialization mirror: {vertices, edges, ideal}.
#[derive(Serialize, Deserialize)]
struct RTreeData {
    vertices: usize,
    edges: Vec<Edge>,
    #[serde(default)]
    ideal: Vec<usize>,
}

impl Serialize for RTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RTreeData {
            vertices: self.n,
            edges: self.edges.clone(),
            ideal: self.ideal.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let data = RTreeData::deserialize(d)?;
        let list: Vec<(usize, usize, f64)> =
            data.edges.iter().map(|e| (e.a, e.b, e.len)).collect();
        let mut tree = RTree::from_edges(data.vertices, &list).map_err(serde::de::Error::custom)?;
        for v in data.ideal {
            tree.mark_ideal(v).map_err(serde::de::Error::custom)?;
        }
        Ok(tree)
    }
}
