//! Trees carrying group orbits: Schottky orbit trees for free products,
//! quotients of marked pieces, and cones over counting groups.
//!
//! All three constructions realize a word norm as an orbit distance,
//! d(o, w.o) = |w|, which the tests check against the algebraic side.

use super::build::{cone_build, link_dendrogram, ConeTree, UltrametricSpace};
use super::{RTree, TreeError, TreePos};
use crate::actions::{ActionError, FactorElem, FactorGroup, Letter, SchottkyAction, Word};
use crate::tol;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

/// A direct sum of cyclic groups Z/N_1 + Z/N_2 + ... where every element
/// whose deepest nonzero coordinate sits at level k has norm
/// `thresholds[k-1]`. The thresholds are strictly increasing, so the norm
/// is an ultrametric: |a b| <= max(|a|, |b|) because the deepest level of a
/// sum never exceeds the deeper of the two summands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingSpec {
    thresholds: Vec<f64>,
    sizes: Vec<u32>,
}

impl CountingSpec {
    pub fn new(thresholds: Vec<f64>, sizes: Vec<u32>) -> Result<Self, TreeError> {
        let spec = CountingSpec { thresholds, sizes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.thresholds.is_empty() {
            return Err(TreeError::BadCounting {
                reason: "no levels".into(),
            });
        }
        if self.thresholds.len() != self.sizes.len() {
            return Err(TreeError::BadCounting {
                reason: format!(
                    "{} thresholds but {} sizes",
                    self.thresholds.len(),
                    self.sizes.len()
                ),
            });
        }
        let mut prev = 0.0;
        for (i, &t) in self.thresholds.iter().enumerate() {
            if !(t.is_finite() && t > prev) {
                return Err(TreeError::BadCounting {
                    reason: format!("threshold {i} = {t} must exceed {prev}"),
                });
            }
            prev = t;
        }
        for (i, &n) in self.sizes.iter().enumerate() {
            if n < 2 {
                return Err(TreeError::BadCounting {
                    reason: format!("size {i} = {n} must be at least 2"),
                });
            }
        }
        Ok(())
    }

    /// Recovers a spec from cumulative counts: `counts[i]` elements of norm
    /// at most `rhos[i]`, identity included. Consecutive counts must divide;
    /// a quotient of 1 contributes no level.
    pub fn from_counts(rhos: &[f64], counts: &[u64]) -> Result<Self, TreeError> {
        if rhos.len() != counts.len() {
            return Err(TreeError::BadCounting {
                reason: format!("{} radii but {} counts", rhos.len(), counts.len()),
            });
        }
        let mut thresholds = Vec::new();
        let mut sizes = Vec::new();
        let mut prev = 1u64;
        for i in 0..rhos.len() {
            if counts[i] == 0 || counts[i] % prev != 0 {
                return Err(TreeError::DivisibilityViolation { index: i });
            }
            let step = counts[i] / prev;
            if step > 1 {
                if step > u32::MAX as u64 {
                    return Err(TreeError::BadCounting {
                        reason: format!("count step {step} at {i} is too large"),
                    });
                }
                thresholds.push(rhos[i]);
                sizes.push(step as u32);
            }
            prev = counts[i];
        }
        CountingSpec::new(thresholds, sizes)
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }

    pub fn threshold(&self, level: usize) -> f64 {
        self.thresholds[level]
    }

    pub fn size(&self, level: usize) -> u32 {
        self.sizes[level]
    }

    pub fn max_threshold(&self) -> f64 {
        *self.thresholds.last().expect("validated spec has levels")
    }

    /// Number of elements of norm at most `rho`, identity included:
    /// the product of the sizes of all levels with threshold <= rho.
    pub fn count_up_to(&self, rho: f64) -> u128 {
        let slack = 1e-12 * (1.0 + rho.abs());
        let mut f: u128 = 1;
        for (&t, &n) in self.thresholds.iter().zip(&self.sizes) {
            if t <= rho + slack {
                f = f.saturating_mul(n as u128);
            }
        }
        f
    }

    /// Coordinates are stored up to their deepest nonzero level, so the
    /// identity is the empty vector and is not a valid nontrivial element.
    pub fn is_valid_coords(&self, c: &[u32]) -> bool {
        !c.is_empty()
            && c.len() <= self.sizes.len()
            && c.last() != Some(&0)
            && c.iter().zip(&self.sizes).all(|(&x, &n)| x < n)
    }

    pub fn norm_coords(&self, c: &[u32]) -> f64 {
        if c.is_empty() {
            0.0
        } else {
            self.thresholds[c.len() - 1]
        }
    }

    /// Componentwise sum mod N_k, trimmed back to the deepest nonzero level.
    pub fn mul_coords(&self, a: &[u32], b: &[u32]) -> Vec<u32> {
        let len = a.len().max(b.len());
        let mut out = vec![0u32; len];
        for (i, o) in out.iter_mut().enumerate() {
            let x = a.get(i).copied().unwrap_or(0) as u64;
            let y = b.get(i).copied().unwrap_or(0) as u64;
            *o = ((x + y) % self.sizes[i] as u64) as u32;
        }
        while out.last() == Some(&0) {
            out.pop();
        }
        out
    }

    pub fn inv_coords(&self, a: &[u32]) -> Vec<u32> {
        a.iter()
            .zip(&self.sizes)
            .map(|(&x, &n)| (n - x) % n)
            .collect()
    }

    /// Nontrivial elements of norm at most `max_norm`, grouped by level and
    /// stepped odometer-style with the first coordinate fastest; truncated
    /// at `cap` entries.
    pub fn enumerate_up_to(&self, max_norm: f64, cap: usize) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = Vec::new();
        for level in 1..=self.levels() {
            if self.thresholds[level - 1] > max_norm {
                break;
            }
            let mut c = vec![0u32; level];
            c[level - 1] = 1;
            'level: loop {
                if out.len() >= cap {
                    return out;
                }
                out.push(c.clone());
                let mut i = 0;
                loop {
                    if i == level {
                        break 'level;
                    }
                    c[i] += 1;
                    if c[i] < self.sizes[i] {
                        break;
                    }
                    c[i] = if i == level - 1 { 1 } else { 0 };
                    i += 1;
                }
            }
        }
        out
    }
}

fn lift_action_err(e: ActionError) -> TreeError {
    match e {
        ActionError::EmptyFactor { index } => TreeError::EmptyFactor { index },
        ActionError::BudgetExceeded { budget } => TreeError::Budget { limit: budget },
        other => TreeError::BadCounting {
            reason: other.to_string(),
        },
    }
}

fn single_letter(action: &SchottkyAction, factor: usize, elem: FactorElem) -> Word {
    action
        .reduce(&[Letter { factor, elem }])
        .expect("letter comes from the factor's own enumeration")
}

/// A tree together with a group orbit on its vertices. `orbit()` pairs each
/// enumerated reduced word with the vertex of w.o; the identity comes first.
#[derive(Debug, Clone)]
pub struct OrbitTree {
    pub tree: RTree,
    pub action: SchottkyAction,
    words: Vec<(Word, usize)>,
    index: HashMap<Word, usize>,
}

impl OrbitTree {
    pub fn base_vertex(&self) -> usize {
        self.words[0].1
    }

    pub fn orbit(&self) -> &[(Word, usize)] {
        &self.words
    }

    pub fn vertex_of(&self, w: &Word) -> Option<usize> {
        self.index.get(w).map(|&i| self.words[i].1)
    }
}

/// The orbit tree of a free product acting purely: each factor moves the
/// basepoint through a gadget of its own (a chain of edges for the integers,
/// a dendrogram for factors with an ultrametric norm), and gadgets of
/// distinct letters never overlap. The resulting tree satisfies
/// d(o, w.o) = |w| for every reduced word.
///
/// Words are enumerated up to `max_len` letters, each of norm at most
/// `max_letter_norm`; more than `budget` orbit points is an error. Table
/// factors whose norm violates the strong triangle inequality admit no such
/// gadget and are rejected.
pub fn pure_schottky_tree(
    action: &SchottkyAction,
    max_len: usize,
    max_letter_norm: f64,
    budget: usize,
) -> Result<OrbitTree, TreeError> {
    for (fi, g) in action.factors.iter().enumerate() {
        if g.elems_up_to(max_letter_norm, 1).is_empty() {
            return Err(TreeError::EmptyFactor { index: fi });
        }
        if let FactorGroup::Table { .. } = g {
            // The dendrogram gadget needs d(a, b) = |a^{-1} b| ultrametric
            // over the letters that will appear, identity included.
            let elems = g.elems_up_to(max_letter_norm, budget);
            let mut pts: Vec<Option<&FactorElem>> = vec![None];
            pts.extend(elems.iter().map(Some));
            let dist = |a: Option<&FactorElem>, b: Option<&FactorElem>| -> f64 {
                match (a, b) {
                    (None, None) => 0.0,
                    (None, Some(y)) => g.norm(y),
                    (Some(x), None) => g.norm(x),
                    (Some(x), Some(y)) => g.mul(&g.inv(x), y).map_or(0.0, |d| g.norm(&d)),
                }
            };
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    for k in 0..pts.len() {
                        let (dij, djk, dik) = (
                            dist(pts[i], pts[j]),
                            dist(pts[j], pts[k]),
                            dist(pts[i], pts[k]),
                        );
                        if dik > dij.max(djk) + tol::IDENTITY * (1.0 + dik) {
                            return Err(TreeError::NotTreeGeometric { factor: fi });
                        }
                    }
                }
            }
        }
    }

    let mut n_verts = 1usize;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut words: Vec<(Word, usize)> = vec![(Word::identity(), 0)];
    let mut index: HashMap<Word, usize> = HashMap::new();
    index.insert(Word::identity(), 0);
    // Queue entries: (orbit index, factor of the last letter, word length).
    let mut queue: VecDeque<(usize, Option<usize>, usize)> = VecDeque::new();
    queue.push_back((0, None, 0));

    while let Some((wi, banned, depth)) = queue.pop_front() {
        if depth == max_len {
            continue;
        }
        let (w, vw) = (words[wi].0.clone(), words[wi].1);
        for (fi, g) in action.factors.iter().enumerate() {
            if Some(fi) == banned {
                continue;
            }
            let elems = g.elems_up_to(max_letter_norm, budget);
            if words.len() + elems.len() > budget {
                return Err(TreeError::Budget { limit: budget });
            }
            let mut coset: Vec<(FactorElem, usize)> = Vec::with_capacity(elems.len());
            match g {
                FactorGroup::Cyclic { r } => {
                    // Chain gadget: powers of the generator march away from
                    // the coset basepoint in both directions, one edge of
                    // length r per step. elems_up_to yields 1, -1, 2, -2, ...
                    // so the previous power on each side already exists.
                    let (mut pos_prev, mut neg_prev) = (vw, vw);
                    for elem in elems {
                        let FactorElem::Power(k) = &elem else {
                            unreachable!("cyclic factors enumerate powers")
                        };
                        let k = *k;
                        let v = n_verts;
                        n_verts += 1;
                        if k > 0 {
                            edges.push((pos_prev, v, *r));
                            pos_prev = v;
                        } else {
                            edges.push((neg_prev, v, *r));
                            neg_prev = v;
                        }
                        coset.push((elem, v));
                    }
                }
                _ => {
                    // Dendrogram gadget over the coset, leaves at height 0
                    // and branches of a and b merging at |a^{-1} b| / 2, so
                    // leaf distances equal the norm. One letter degenerates
                    // to a single edge.
                    for elem in &elems {
                        coset.push((elem.clone(), n_verts));
                        n_verts += 1;
                    }
                    if coset.len() == 1 {
                        edges.push((vw, coset[0].1, g.norm(&coset[0].0)));
                    } else {
                        let mut leaf_vertex = vec![vw];
                        leaf_vertex.extend(coset.iter().map(|&(_, v)| v));
                        let leaf_height = vec![0.0; leaf_vertex.len()];
                        let merge_h = |i: usize, j: usize| -> f64 {
                            let d = match (i, j) {
                                (0, _) => g.norm(&coset[j - 1].0),
                                (_, 0) => g.norm(&coset[i - 1].0),
                                _ => {
                                    let a = &coset[i - 1].0;
                                    let b = &coset[j - 1].0;
                                    g.mul(&g.inv(a), b)
                                        .map(|d| g.norm(&d))
                                        .expect("distinct coset members differ")
                                }
                            };
                            0.5 * d
                        };
                        let mut new_vertex = |h: f64| {
                            let _ = h;
                            n_verts += 1;
                            n_verts - 1
                        };
                        link_dendrogram(
                            leaf_vertex.len(),
                            &merge_h,
                            &leaf_vertex,
                            &leaf_height,
                            &mut new_vertex,
                            &mut edges,
                        );
                    }
                }
            }
            for (elem, v) in coset {
                let word = action.mul(&w, &single_letter(action, fi, elem));
                let oi = words.len();
                words.push((word.clone(), v));
                index.insert(word, oi);
                queue.push_back((oi, Some(fi), depth + 1));
            }
        }
    }

    let tree = RTree::from_edges(n_verts, &edges)?;
    Ok(OrbitTree {
        tree,
        action: action.clone(),
        words,
        index,
    })
}

/// A compact tree piece with marked points, each carrying a group. The
/// product construction takes one copy of the piece per reduced word in the
/// free product of the marked groups and identifies (w, p) with (w g, p)
/// for g in the group at p. The orbit of `base` then has
/// d(o, w.o) = d(o, p_1) + d(p_1, p_2) + ... + d(p_n, o) over the marked
/// points of the letters of w, measured inside the piece.
#[derive(Debug, Clone)]
pub struct GeometricProductPlan {
    pub part: RTree,
    pub base: usize,
    pub marks: Vec<(usize, FactorGroup)>,
    pub max_len: usize,
    pub max_letter_norm: f64,
    pub budget: usize,
}

impl GeometricProductPlan {
    /// The orbit norm of a reduced word under this plan, from the geometry
    /// of the piece alone.
    pub fn word_norm(&self, w: &Word) -> f64 {
        if w.is_empty() {
            return 0.0;
        }
        let stops: Vec<usize> = w.letters().iter().map(|l| self.marks[l.factor].0).collect();
        let mut total = self.part.dist_v(self.base, stops[0]);
        for pair in stops.windows(2) {
            total += self.part.dist_v(pair[0], pair[1]);
        }
        total + self.part.dist_v(*stops.last().unwrap(), self.base)
    }
}

pub fn geometric_product_tree(plan: &GeometricProductPlan) -> Result<OrbitTree, TreeError> {
    let nv = plan.part.n_vertices();
    if plan.part.ideal_leaves().next().is_some() {
        return Err(TreeError::BadPosition {
            reason: "product needs a compact piece, but the part has ideal leaves".into(),
        });
    }
    if plan.base >= nv {
        return Err(TreeError::BadPosition {
            reason: format!("basepoint {} is not a vertex of the part", plan.base),
        });
    }
    if plan.marks.is_empty() {
        return Err(TreeError::BadPosition {
            reason: "no marked points".into(),
        });
    }
    for &(p, _) in &plan.marks {
        if p >= nv {
            return Err(TreeError::BadPosition {
                reason: format!("marked point {p} is not a vertex of the part"),
            });
        }
    }
    let groups: Vec<FactorGroup> = plan.marks.iter().map(|(_, g)| g.clone()).collect();
    let action = SchottkyAction::new(groups).map_err(lift_action_err)?;
    let cutoff = crate::actions::Cutoff::Length {
        max_len: plan.max_len,
        max_letter_norm: plan.max_letter_norm,
    };
    let words = action
        .orbit_enumerate(cutoff, plan.budget)
        .map_err(lift_action_err)?;
    let word_index: HashMap<Word, usize> = words
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.clone(), i))
        .collect();

    // Union-find over (copy, part vertex) pairs; identify the marked point p
    // across each coset w Gamma_p. Gluings leading outside the enumerated
    // words are dropped, which leaves a connected subtree of the full
    // quotient.
    let total = words.len() * nv;
    let mut uf: Vec<usize> = (0..total).collect();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        if uf[x] != x {
            let r = find(uf, uf[x]);
            uf[x] = r;
        }
        uf[x]
    }
    for wi in 0..words.len() {
        for (mi, (pv, group)) in plan.marks.iter().enumerate() {
            let pv = *pv;
            for elem in group.elems_up_to(plan.max_letter_norm, plan.budget) {
                let moved = action.mul(&words[wi].0, &single_letter(&action, mi, elem));
                if let Some(&wj) = word_index.get(&moved) {
                    let (a, b) = (find(&mut uf, wi * nv + pv), find(&mut uf, wj * nv + pv));
                    if a != b {
                        uf[a] = b;
                    }
                }
            }
        }
    }
    let mut class_of: HashMap<usize, usize> = HashMap::new();
    let mut quotient = vec![0usize; total];
    for id in 0..total {
        let root = find(&mut uf, id);
        let next = class_of.len();
        quotient[id] = *class_of.entry(root).or_insert(next);
    }
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for wi in 0..words.len() {
        for e in plan.part.edges() {
            edges.push((quotient[wi * nv + e.a], quotient[wi * nv + e.b], e.len));
        }
    }
    let tree = RTree::from_edges(class_of.len(), &edges)?;
    let orbit: Vec<(Word, usize)> = words
        .iter()
        .enumerate()
        .map(|(wi, (w, _))| (w.clone(), quotient[wi * nv + plan.base]))
        .collect();
    let index = orbit
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.clone(), i))
        .collect();
    Ok(OrbitTree {
        tree,
        action,
        words: orbit,
        index,
    })
}

/// A counting group acting on the cone over itself. Branch z carries the
/// group element `elem(z)`; branches of a and b merge at height
/// |a^{-1} b| / 2, so the orbit at unit radius (height 0) realizes the
/// group norm and lies on one horosphere about the cone point at infinity.
#[derive(Debug, Clone)]
pub struct ParabolicOrbit {
    pub cone: ConeTree,
    pub spec: CountingSpec,
    elems: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

pub fn parabolic_from_counting(
    spec: &CountingSpec,
    rho_max: f64,
    budget: usize,
) -> Result<ParabolicOrbit, TreeError> {
    spec.validate()?;
    if spec.count_up_to(rho_max) > budget as u128 {
        return Err(TreeError::Budget { limit: budget });
    }
    let slack = 1e-12 * (1.0 + rho_max.abs());
    let mut elems: Vec<Vec<u32>> = vec![Vec::new()];
    elems.extend(spec.enumerate_up_to(rho_max + slack, budget));
    let m = elems.len();
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let diff = spec.mul_coords(&spec.inv_coords(&elems[i]), &elems[j]);
                d[i][j] = (0.5 * spec.norm_coords(&diff)).exp();
            }
        }
    }
    let space = UltrametricSpace::new(d)?;
    // Window: merges live in (0, max_threshold / 2], the orbit sits at
    // height 0, and the trunk extends one unit past the last merge.
    let cone = cone_build(&space, -1.0, 0.5 * spec.max_threshold() + 1.0)?;
    let index = elems
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    Ok(ParabolicOrbit {
        cone,
        spec: spec.clone(),
        elems,
        index,
    })
}

impl ParabolicOrbit {
    pub fn orbit_len(&self) -> usize {
        self.elems.len()
    }

    pub fn elem(&self, i: usize) -> &[u32] {
        &self.elems[i]
    }

    pub fn index_of(&self, coords: &[u32]) -> Option<usize> {
        self.index.get(coords).copied()
    }

    /// Position of the orbit point of branch i at radius r (height ln r).
    pub fn position(&self, i: usize, r: f64) -> Result<TreePos, TreeError> {
        self.cone.position(i, r)
    }

    /// Left translation as a permutation of the branches. The enumerated
    /// set is closed under products because the norm is an ultrametric.
    pub fn act(&self, g: usize, x: usize) -> usize {
        let c = self.spec.mul_coords(&self.elems[g], &self.elems[x]);
        *self
            .index
            .get(&c)
            .expect("products cannot leave the norm ball")
    }

    /// Number of enumerated elements of norm at most rho.
    pub fn orbit_count(&self, rho: f64) -> usize {
        let slack = 1e-12 * (1.0 + rho.abs());
        self.elems
            .iter()
            .filter(|c| self.spec.norm_coords(c) <= rho + slack)
            .count()
    }
}
