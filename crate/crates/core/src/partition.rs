//! Partition structures and Ahlfors-regular substructure measures.
//!
//! A partition structure is a tree of compact boundary pieces with
//! controlled diameter decay: children shrink by a factor between kappa and
//! lambda, stay kappa-separated from the outside of their parent, and, when
//! the structure is s-thick, their diameters to the s carry at least the
//! parent's. Thickness is exactly what the greedy redistribution argument
//! needs to extract a subtree carrying a measure with two-sided power
//! bounds at every node, and that measure is Ahlfors regular of dimension
//! s, which lower-bounds the Hausdorff dimension of the support by the
//! mass distribution principle.
//!
//! Structures here live on their canonical tree realization: boundary
//! points are root-to-leaf paths and the distance of two points is the
//! diameter at their meet, so balls are cylinders and every check is exact
//! on the tree. The redistribution recursion runs in exact rational
//! arithmetic on the (exactly rational) double-precision inputs, which
//! makes consistency an identity rather than an estimate.

use num::{BigRational, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::measures::{AtomicMeasure, CylinderMeasure};

/// Depth used by the bundled structures; deeper trees multiply leaf counts
/// past what the exhaustive checks can sweep comfortably.
pub const DEFAULT_DEPTH_CAP: usize = 12;

/// Slack for the inequality checks that survive double-precision inputs.
const CHECK_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clause {
    Nesting,
    Separation,
    Ratio,
    Thickness,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionError {
    /// The tree data itself is unusable.
    BadStructure { reason: String },
    /// The first node and clause where an invariant fails.
    Violation { node: Vec<usize>, clause: Clause, detail: String },
    /// A node whose children cannot redistribute its weight.
    NotThick { node: Vec<usize>, total: f64, needed: f64 },
    /// A sampled ball escapes the regularity envelope.
    BoundFail { address: Vec<usize>, radius: f64, ratio: f64, lo: f64, hi: f64 },
}

impl std::fmt::Display for PartitionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionError::BadStructure { reason } => write!(f, "bad structure: {reason}"),
            PartitionError::Violation { node, clause, detail } => {
                write!(f, "invariant {clause:?} fails at node {node:?}: {detail}")
            }
            PartitionError::NotThick { node, total, needed } => {
                write!(
                    f,
                    "not thick at node {node:?}: children carry {total}, the node needs more \
                     than {needed}"
                )
            }
            PartitionError::BoundFail { address, radius, ratio, lo, hi } => {
                write!(
                    f,
                    "ball ratio {ratio} at leaf {address:?}, radius {radius} escapes \
                     [{lo}, {hi}]"
                )
            }
        }
    }
}

impl std::error::Error for PartitionError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionNode {
    pub diam: f64,
    pub children: Vec<PartitionNode>,
}

/// A finite-depth partition structure with its contraction constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStructure {
    pub root: PartitionNode,
    pub kappa: f64,
    pub lambda: f64,
}

/// The uniform structure: every node has `arity` children shrunk by
/// exactly `ratio`, so kappa = lambda = ratio.
pub fn uniform_structure(
    arity: usize,
    ratio: f64,
    root_diam: f64,
    depth: usize,
) -> Result<PartitionStructure, PartitionError> {
    if arity == 0 || !(ratio > 0.0 && ratio < 1.0) || !(root_diam > 0.0 && root_diam.is_finite()) {
        return Err(PartitionError::BadStructure {
            reason: format!("arity {arity}, ratio {ratio}, root diameter {root_diam}"),
        });
    }
    if depth > DEFAULT_DEPTH_CAP {
        return Err(PartitionError::BadStructure {
            reason: format!("depth {depth} exceeds the cap {DEFAULT_DEPTH_CAP}"),
        });
    }
    fn build(arity: usize, ratio: f64, diam: f64, depth: usize) -> PartitionNode {
        let children = if depth == 0 {
            Vec::new()
        } else {
            (0..arity)
                .map(|_| build(arity, ratio, diam * ratio, depth - 1))
                .collect()
        };
        PartitionNode { diam, children }
    }
    Ok(PartitionStructure {
        root: build(arity, ratio, root_diam, depth),
        kappa: ratio,
        lambda: ratio,
    })
}

/// The cylinder structure of a boundary chain: nodes are state paths, the
/// diameter of a cylinder is e^{-(path norm)}, and the contraction
/// constants are e^{-norm} over the extreme state norms.
pub fn cylinder_structure(
    chain: &CylinderMeasure,
    depth: usize,
) -> Result<PartitionStructure, PartitionError> {
    if depth > DEFAULT_DEPTH_CAP {
        return Err(PartitionError::BadStructure {
            reason: format!("depth {depth} exceeds the cap {DEFAULT_DEPTH_CAP}"),
        });
    }
    let norms: Vec<f64> = chain.states().iter().map(|st| st.norm).collect();
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    fn build(chain: &CylinderMeasure, state: Option<usize>, diam: f64, depth: usize) -> PartitionNode {
        let succ: Vec<usize> = match state {
            None => (0..chain.states().len()).collect(),
            Some(q) => chain.out(q).to_vec(),
        };
        let children = if depth == 0 {
            Vec::new()
        } else {
            succ.into_iter()
                .map(|q| {
                    let d = diam * (-chain.states()[q].norm).exp();
                    build(chain, Some(q), d, depth - 1)
                })
                .collect()
        };
        PartitionNode { diam, children }
    }
    Ok(PartitionStructure {
        root: build(chain, None, 1.0, depth),
        kappa: (-max).exp(),
        lambda: (-min).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub nodes: usize,
    pub max_depth: usize,
    pub thick_exponent: Option<f64>,
}

/// Checks every node exhaustively: diameters positive and nested, child
/// ratios within [kappa, lambda], separation from the parent's complement
/// at least kappa times the diameter, and, when an exponent is supplied,
/// thickness at every interior node. On the canonical realization the
/// distance from a child to the outside of its parent is the diameter of
/// the deepest proper ancestor with a second branch, so the separation
/// check is exact. Returns the first violating node and clause.
pub fn validate(
    structure: &PartitionStructure,
    thick_s: Option<f64>,
) -> Result<ValidationReport, PartitionError> {
    let (kappa, lambda) = (structure.kappa, structure.lambda);
    if !(kappa > 0.0 && kappa < 1.0 && lambda > 0.0 && lambda < 1.0 && kappa <= lambda) {
        return Err(PartitionError::BadStructure {
            reason: format!("contraction constants kappa = {kappa}, lambda = {lambda}"),
        });
    }
    let mut report = ValidationReport {
        nodes: 0,
        max_depth: 0,
        thick_exponent: thick_s,
    };
    // Diameter of the deepest ancestor that branches; infinity until one
    // exists, which keeps the root's separation clause vacuous.
    fn walk(
        node: &PartitionNode,
        addr: &mut Vec<usize>,
        outside_at: f64,
        kappa: f64,
        lambda: f64,
        thick_s: Option<f64>,
        report: &mut ValidationReport,
    ) -> Result<(), PartitionError> {
        report.nodes += 1;
        report.max_depth = report.max_depth.max(addr.len());
        if !(node.diam > 0.0 && node.diam.is_finite()) {
            return Err(PartitionError::Violation {
                node: addr.clone(),
                clause: Clause::Nesting,
                detail: format!("diameter {} is not positive and finite", node.diam),
            });
        }
        let slack = CHECK_SLACK * node.diam;
        for (a, child) in node.children.iter().enumerate() {
            addr.push(a);
            if child.diam > node.diam + slack {
                return Err(PartitionError::Violation {
                    node: addr.clone(),
                    clause: Clause::Nesting,
                    detail: format!("child diameter {} exceeds the parent's {}", child.diam, node.diam),
                });
            }
            if child.diam < kappa * node.diam - slack || child.diam > lambda * node.diam + slack {
                return Err(PartitionError::Violation {
                    node: addr.clone(),
                    clause: Clause::Ratio,
                    detail: format!(
                        "child diameter {} outside [{}, {}]",
                        child.diam,
                        kappa * node.diam,
                        lambda * node.diam
                    ),
                });
            }
            if outside_at < kappa * child.diam - CHECK_SLACK * child.diam {
                return Err(PartitionError::Violation {
                    node: addr.clone(),
                    clause: Clause::Separation,
                    detail: format!(
                        "outside points at distance {} are closer than kappa D = {}",
                        outside_at,
                        kappa * child.diam
                    ),
                });
            }
            let child_outside = if node.children.len() >= 2 { node.diam } else { outside_at };
            walk(child, addr, child_outside, kappa, lambda, thick_s, report)?;
            addr.pop();
        }
        if let Some(s) = thick_s {
            if !node.children.is_empty() {
                let total: f64 = node.children.iter().map(|c| c.diam.powf(s)).sum();
                let needed = node.diam.powf(s);
                if total < needed - CHECK_SLACK * needed {
                    return Err(PartitionError::Violation {
                        node: addr.clone(),
                        clause: Clause::Thickness,
                        detail: format!("children carry {total} against the node's {needed}"),
                    });
                }
            }
        }
        Ok(())
    }
    let mut addr = Vec::new();
    walk(
        &structure.root,
        &mut addr,
        f64::INFINITY,
        kappa,
        lambda,
        thick_s,
        &mut report,
    )?;
    Ok(report)
}

/// A retained node of the thick substructure with its raw weight.
#[derive(Debug, Clone, Serialize)]
pub struct ThickNode {
    pub diam: f64,
    pub weight: f64,
    #[serde(skip)]
    pub(crate) exact: BigRational,
    pub children: Vec<ThickNode>,
}

/// The substructure extracted by the redistribution recursion: retained
/// children form initial segments, raw node weights sit in
/// [c D^s, D^s) with c = 1 - lambda^s, and a parent's weight is exactly
/// the sum of its children's.
#[derive(Debug, Clone, Serialize)]
pub struct ThickSubstructure {
    pub s: f64,
    pub c: f64,
    pub root: ThickNode,
}

impl ThickSubstructure {
    /// Total raw mass, which is c times the root diameter to the s.
    pub fn raw_mass(&self) -> f64 {
        self.root.weight
    }

    /// The normalized probability measure on retained leaves, keyed by
    /// child-index addresses.
    pub fn leaf_measure(&self) -> AtomicMeasure<Vec<usize>> {
        let total = &self.root.exact;
        let mut atoms = Vec::new();
        let mut addr = Vec::new();
        fn walk(
            node: &ThickNode,
            addr: &mut Vec<usize>,
            total: &BigRational,
            atoms: &mut Vec<(Vec<usize>, f64)>,
        ) {
            if node.children.is_empty() {
                let w = (&node.exact / total).to_f64().unwrap_or(0.0);
                atoms.push((addr.clone(), w));
                return;
            }
            for (a, child) in node.children.iter().enumerate() {
                addr.push(a);
                walk(child, addr, total, atoms);
                addr.pop();
            }
        }
        walk(&self.root, &mut addr, total, &mut atoms);
        AtomicMeasure::new(atoms).expect("retained leaf weights are positive")
    }

    /// Raw weight of the retained node at an address, if retained.
    pub fn node_weight(&self, address: &[usize]) -> Option<f64> {
        let mut node = &self.root;
        for &a in address {
            node = node.children.get(a)?;
        }
        Some(node.weight)
    }
}

fn rationalize(x: f64) -> Result<BigRational, PartitionError> {
    BigRational::from_float(x).ok_or(PartitionError::BadStructure {
        reason: format!("value {x} has no rational form"),
    })
}

/// Extracts the thick substructure measure. The recursion starts at
/// c D^s on the root; at each retained node it takes the smallest initial
/// segment of children whose D^s sum strictly exceeds the node's weight
/// and splits the weight proportionally within it. Thickness is exactly
/// what keeps the prefix available, so a node whose full child sum cannot
/// cover its weight ends the construction with the failing node. All
/// weights are exact rationals over the double-precision inputs:
/// consistency is an identity, and the two-sided regularity bound is
/// checked at every node as it is produced.
pub fn thick_substructure_measure(
    structure: &PartitionStructure,
    s: f64,
) -> Result<ThickSubstructure, PartitionError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(PartitionError::BadStructure {
            reason: format!("exponent {s} must be positive and finite"),
        });
    }
    let c = 1.0 - structure.lambda.powf(s);
    let c_exact = BigRational::one() - rationalize(structure.lambda.powf(s))?;
    let root_pow = rationalize(structure.root.diam.powf(s))?;

    fn build(
        node: &PartitionNode,
        weight: BigRational,
        s: f64,
        c_exact: &BigRational,
        addr: &mut Vec<usize>,
    ) -> Result<ThickNode, PartitionError> {
        let d_pow = rationalize(node.diam.powf(s))?;
        // Two-sided regularity at this node: exact on exactly-representable
        // inputs, else within the double-precision slack.
        let lo = c_exact * &d_pow;
        if weight < lo || weight >= d_pow {
            let w = weight.to_f64().unwrap_or(f64::NAN);
            let d = node.diam.powf(s);
            let ok_lo = w >= c_exact.to_f64().unwrap_or(0.0) * d - CHECK_SLACK * d;
            let ok_hi = w < d + CHECK_SLACK * d;
            if !(ok_lo && ok_hi) {
                return Err(PartitionError::BadStructure {
                    reason: format!("weight {w} escapes the regularity window at {addr:?}"),
                });
            }
        }
        if node.children.is_empty() {
            return Ok(ThickNode {
                diam: node.diam,
                weight: weight.to_f64().unwrap_or(f64::NAN),
                exact: weight,
                children: Vec::new(),
            });
        }
        let child_pows: Vec<BigRational> = node
            .children
            .iter()
            .map(|ch| rationalize(ch.diam.powf(s)))
            .collect::<Result<_, _>>()?;
        // Smallest initial segment strictly exceeding the node's weight.
        let mut prefix_sum = BigRational::zero();
        let mut retained = 0usize;
        for pow in &child_pows {
            prefix_sum += pow;
            retained += 1;
            if prefix_sum > weight {
                break;
            }
        }
        if prefix_sum <= weight {
            return Err(PartitionError::NotThick {
                node: addr.clone(),
                total: prefix_sum.to_f64().unwrap_or(f64::NAN),
                needed: weight.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut children = Vec::with_capacity(retained);
        for (a, pow) in child_pows.iter().take(retained).enumerate() {
            addr.push(a);
            let share = pow * &weight / &prefix_sum;
            children.push(build(&node.children[a], share, s, c_exact, addr)?);
            addr.pop();
        }
        // Proportional shares of an exact rational split: consistency is
        // an identity, asserted rather than trusted.
        let total: BigRational = children.iter().map(|ch| ch.exact.clone()).sum();
        assert_eq!(total, weight, "redistribution lost mass");
        Ok(ThickNode {
            diam: node.diam,
            weight: weight.to_f64().unwrap_or(f64::NAN),
            exact: weight,
            children,
        })
    }

    let mut addr = Vec::new();
    let root = build(&structure.root, c_exact.clone() * root_pow, s, &c_exact, &mut addr)?;
    Ok(ThickSubstructure { s, c, root })
}

/// Ball/cylinder exchange on the canonical realization: the ball of radius
/// r around a leaf is exactly the cylinder at the first ancestor whose
/// diameter is at most r. None when r is below the leaf diameter, where
/// the truncation cannot resolve the ball.
pub fn ball_depth(path_diams: &[f64], r: f64) -> Option<usize> {
    path_diams.iter().position(|&d| d <= r)
}

/// The depth shift k with lambda^k <= kappa^2, which is how far the ball
/// sandwich P_{n+k} within B(z, r) within P_n can spread.
pub fn sandwich_shift(kappa: f64, lambda: f64) -> usize {
    ((2.0 * kappa.ln() / lambda.ln()) - CHECK_SLACK).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AhlforsReport {
    pub c_lower: f64,
    pub c_upper: f64,
    pub envelope_lower: f64,
    pub envelope_upper: f64,
    pub shift: usize,
    pub samples: usize,
}

/// Sweeps mu(B(z, r))/r^s over every retained leaf and a geometric grid of
/// radii, using the exact ball/cylinder exchange. The measured extremes
/// must stay inside the envelope the redistribution argument guarantees,
/// scaled to the normalized measure: kappa^{s(k-1)}/D^s from below and
/// kappa^{-2s}/(c D^s) from above with k the sandwich shift. A finite
/// upper constant is the mass distribution certificate that the support
/// has Hausdorff dimension at least s.
pub fn ahlfors_check(
    sub: &ThickSubstructure,
    structure: &PartitionStructure,
) -> Result<AhlforsReport, PartitionError> {
    let (kappa, lambda, s) = (structure.kappa, structure.lambda, sub.s);
    let k = sandwich_shift(kappa, lambda);
    let root_pow = sub.root.diam.powf(s);
    let envelope_lower = kappa.powf(s * (k as f64 - 1.0)) / root_pow;
    let envelope_upper = kappa.powf(-2.0 * s) / (sub.c * root_pow);
    let raw_mass = sub.raw_mass();

    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    let mut samples = 0usize;
    let r_top = kappa * sub.root.diam * (1.0 - 1e-9);
    let grid_step = (-0.25f64).exp();

    struct Sweep<'a> {
        s: f64,
        raw_mass: f64,
        r_top: f64,
        grid_step: f64,
        c_lower: &'a mut f64,
        c_upper: &'a mut f64,
        samples: &'a mut usize,
    }
    fn walk(
        node: &ThickNode,
        addr: &mut Vec<usize>,
        diams: &mut Vec<f64>,
        weights: &mut Vec<f64>,
        sw: &mut Sweep,
    ) -> Result<(), PartitionError> {
        diams.push(node.diam);
        weights.push(node.weight);
        if node.children.is_empty() {
            let mut r = sw.r_top;
            while r >= node.diam {
                let n_star = ball_depth(diams, r).expect("grid stops at the leaf diameter");
                let ratio = weights[n_star] / sw.raw_mass / r.powf(sw.s);
                *sw.c_lower = sw.c_lower.min(ratio);
                *sw.c_upper = sw.c_upper.max(ratio);
                *sw.samples += 1;
                r *= sw.grid_step;
            }
        }
        for (a, child) in node.children.iter().enumerate() {
            addr.push(a);
            walk(child, addr, diams, weights, sw)?;
            addr.pop();
        }
        diams.pop();
        weights.pop();
        Ok(())
    }

    // The witness search reruns the sweep on failure, so keep the fast
    // pass allocation-light.
    {
        let mut sw = Sweep {
            s,
            raw_mass,
            r_top,
            grid_step,
            c_lower: &mut c_lower,
            c_upper: &mut c_upper,
            samples: &mut samples,
        };
        let mut addr = Vec::new();
        walk(&sub.root, &mut addr, &mut Vec::new(), &mut Vec::new(), &mut sw)?;
    }
    if samples == 0 {
        return Err(PartitionError::BadStructure {
            reason: "no radius fits between the leaf diameters and kappa D".into(),
        });
    }
    if c_lower < envelope_lower - CHECK_SLACK || c_upper > envelope_upper + CHECK_SLACK {
        let witness = find_witness(sub, r_top, grid_step, envelope_lower, envelope_upper);
        let (address, radius, ratio) = witness.unwrap_or((Vec::new(), f64::NAN, f64::NAN));
        return Err(PartitionError::BoundFail {
            address,
            radius,
            ratio,
            lo: envelope_lower,
            hi: envelope_upper,
        });
    }
    Ok(AhlforsReport {
        c_lower,
        c_upper,
        envelope_lower,
        envelope_upper,
        shift: k,
        samples,
    })
}

fn find_witness(
    sub: &ThickSubstructure,
    r_top: f64,
    grid_step: f64,
    lo: f64,
    hi: f64,
) -> Option<(Vec<usize>, f64, f64)> {
    fn walk(
        node: &ThickNode,
        addr: &mut Vec<usize>,
        diams: &mut Vec<f64>,
        weights: &mut Vec<f64>,
        sub: &ThickSubstructure,
        r_top: f64,
        grid_step: f64,
        lo: f64,
        hi: f64,
    ) -> Option<(Vec<usize>, f64, f64)> {
        diams.push(node.diam);
        weights.push(node.weight);
        if node.children.is_empty() {
            let mut r = r_top;
            while r >= node.diam {
                let n_star = ball_depth(diams, r)?;
                let ratio = weights[n_star] / sub.raw_mass() / r.powf(sub.s);
                if ratio < lo - CHECK_SLACK || ratio > hi + CHECK_SLACK {
                    return Some((addr.clone(), r, ratio));
                }
                r *= grid_step;
            }
        }
        for (a, child) in node.children.iter().enumerate() {
            addr.push(a);
            let hit = walk(child, addr, diams, weights, sub, r_top, grid_step, lo, hi);
            addr.pop();
            if hit.is_some() {
                diams.pop();
                weights.pop();
                return hit;
            }
        }
        diams.pop();
        weights.pop();
        None
    }
    let mut addr = Vec::new();
    walk(
        &sub.root,
        &mut addr,
        &mut Vec::new(),
        &mut Vec::new(),
        sub,
        r_top,
        grid_step,
        lo,
        hi,
    )
}
