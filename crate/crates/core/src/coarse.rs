//! Coarse geometry shared by the model spaces and the R-trees: Gromov
//! products with boundary arguments, the visual metric, Hamenstadt
//! distances, shadows, boundary derivatives of isometries, and polar
//! coordinates around a pair of directions.
//!
//! All exponentials use base e. In the constant-curvature models and in
//! R-trees the Gromov product extends continuously to the boundary and the
//! visual kernel e^{-(x|y)_o} satisfies the triangle inequality on the
//! nose, so the routines here promise closed-form values rather than
//! coarse bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::models::{
    self, bilinear_q, busemann, BoundaryPoint, LorentzMap, ModelError, ModelPoint,
};
use crate::rtree::{RTree, TreeBoundary, TreeError, TreePos};
use crate::tol;

#[derive(Debug, Clone, PartialEq)]
pub enum CoarseError {
    /// An argument lives in a different space than the context, or a
    /// boundary direction arrived where an interior point was required.
    SpaceMismatch { expected: String, got: String },
    /// A Hamenstadt distance was evaluated at its reference direction,
    /// where the metric blows up.
    EqualsXi,
    /// The direction is not fixed by the isometry; `moved` is the chart
    /// displacement of the normalized null lift.
    NotFixed { moved: f64 },
    /// Degenerate data: equal directions for polar coordinates, a bad
    /// shadow margin, or a failed internal consistency check.
    Degenerate { reason: String },
    Model(ModelError),
    Tree(TreeError),
}

impl std::fmt::Display for CoarseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoarseError::SpaceMismatch { expected, got } => {
                write!(f, "space mismatch: expected {expected}, got {got}")
            }
            CoarseError::EqualsXi => {
                write!(f, "argument coincides with the reference direction")
            }
            CoarseError::NotFixed { moved } => {
                write!(f, "direction is not fixed by the isometry (moved {moved:.3e})")
            }
            CoarseError::Degenerate { reason } => write!(f, "degenerate input: {reason}"),
            CoarseError::Model(e) => write!(f, "{e}"),
            CoarseError::Tree(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CoarseError {}

impl From<ModelError> for CoarseError {
    fn from(e: ModelError) -> Self {
        CoarseError::Model(e)
    }
}

impl From<TreeError> for CoarseError {
    fn from(e: TreeError) -> Self {
        CoarseError::Tree(e)
    }
}

/// A point of the space or of its boundary, tagged by space kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "kebab-case")]
pub enum Site {
    Model(ModelPoint),
    ModelBoundary(BoundaryPoint),
    Tree(TreePos),
    TreeBoundary(TreeBoundary),
}

/// A boundary direction alone, for operations that require one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "kebab-case")]
pub enum Direction {
    Model(BoundaryPoint),
    Tree(TreeBoundary),
}

impl Direction {
    /// The same boundary point as a general site.
    pub fn site(&self) -> Site {
        match self {
            Direction::Model(b) => Site::ModelBoundary(b.clone()),
            Direction::Tree(t) => Site::TreeBoundary(*t),
        }
    }
}

fn site_kind(s: &Site) -> &'static str {
    match s {
        Site::Model(_) => "a model point",
        Site::ModelBoundary(_) => "a model boundary direction",
        Site::Tree(_) => "a tree position",
        Site::TreeBoundary(_) => "a tree direction",
    }
}

/// The ambient space together with the basepoint that normalizes visual
/// quantities. Gromov products take an explicit base; the context basepoint
/// feeds `visual_dist`, `hamenstadt_dist`, the boundary derivatives and
/// `polar_coords`.
#[derive(Debug, Clone, PartialEq)]
pub enum GromovContext {
    Model { basepoint: ModelPoint },
    Tree { tree: RTree, basepoint: TreePos },
}

impl GromovContext {
    pub fn model(basepoint: ModelPoint) -> Result<Self, CoarseError> {
        basepoint.validate()?;
        Ok(GromovContext::Model { basepoint })
    }

    pub fn tree(tree: RTree, basepoint: TreePos) -> Result<Self, CoarseError> {
        tree.validate_pos(&basepoint)?;
        Ok(GromovContext::Tree { tree, basepoint })
    }

    pub fn basepoint(&self) -> Site {
        match self {
            GromovContext::Model { basepoint } => Site::Model(basepoint.clone()),
            GromovContext::Tree { basepoint, .. } => Site::Tree(*basepoint),
        }
    }
}

fn model_interior<'a>(s: &'a Site, role: &str) -> Result<&'a ModelPoint, CoarseError> {
    match s {
        Site::Model(p) => Ok(p),
        other => Err(CoarseError::SpaceMismatch {
            expected: format!("a model point for {role}"),
            got: site_kind(other).into(),
        }),
    }
}

fn tree_interior<'a>(s: &'a Site, role: &str) -> Result<&'a TreePos, CoarseError> {
    match s {
        Site::Tree(p) => Ok(p),
        other => Err(CoarseError::SpaceMismatch {
            expected: format!("a tree position for {role}"),
            got: site_kind(other).into(),
        }),
    }
}

fn require_interior(s: &Site, role: &str) -> Result<(), CoarseError> {
    match s {
        Site::Model(_) | Site::Tree(_) => Ok(()),
        other => Err(CoarseError::SpaceMismatch {
            expected: format!("an interior point for {role}"),
            got: site_kind(other).into(),
        }),
    }
}

/// Directions must point at marked ideal leaves; a plain leaf has no
/// extension to infinity behind it.
fn checked_direction(tree: &RTree, d: TreeBoundary) -> Result<(), CoarseError> {
    if !tree.is_ideal(d.0) {
        return Err(CoarseError::Tree(TreeError::BadPosition {
            reason: format!("vertex {} is not an ideal leaf", d.0),
        }));
    }
    Ok(())
}

/// Gromov product (x | y)_base. Interior arguments use the distance
/// formula, boundary arguments the continuous extension: a closed form on
/// lifts in the models and exact leaf arithmetic in trees. Two equal
/// boundary directions give +infinity.
pub fn gromov_product(
    ctx: &GromovContext,
    x: &Site,
    y: &Site,
    base: &Site,
) -> Result<f64, CoarseError> {
    match ctx {
        GromovContext::Model { .. } => {
            let z = model_interior(base, "the base")?;
            z.validate()?;
            match (x, y) {
                (Site::Model(px), Site::Model(py)) => {
                    let dzx = models::dist(z, px)?;
                    let dzy = models::dist(z, py)?;
                    let dxy = models::dist(px, py)?;
                    Ok(0.5 * (dzx + dzy - dxy))
                }
                (Site::ModelBoundary(bx), Site::Model(py))
                | (Site::Model(py), Site::ModelBoundary(bx)) => {
                    Ok(0.5 * (busemann(bx, z, py)? + models::dist(z, py)?))
                }
                (Site::ModelBoundary(bx), Site::ModelBoundary(by)) => {
                    model_boundary_pair(z, bx, by)
                }
                (sx, sy) => Err(CoarseError::SpaceMismatch {
                    expected: "model sites".into(),
                    got: format!("{} and {}", site_kind(sx), site_kind(sy)),
                }),
            }
        }
        GromovContext::Tree { tree, .. } => {
            let z = tree_interior(base, "the base")?;
            tree.validate_pos(z)?;
            match (x, y) {
                (Site::Tree(px), Site::Tree(py)) => {
                    tree.validate_pos(px)?;
                    tree.validate_pos(py)?;
                    Ok(tree.gromov(z, px, py))
                }
                (Site::TreeBoundary(bx), Site::Tree(py))
                | (Site::Tree(py), Site::TreeBoundary(bx)) => {
                    checked_direction(tree, *bx)?;
                    tree.validate_pos(py)?;
                    Ok(tree.gromov_boundary_point(z, py, *bx))
                }
                (Site::TreeBoundary(bx), Site::TreeBoundary(by)) => {
                    checked_direction(tree, *bx)?;
                    checked_direction(tree, *by)?;
                    Ok(tree.gromov_boundary_pair(z, *bx, *by))
                }
                (sx, sy) => Err(CoarseError::SpaceMismatch {
                    expected: "tree sites".into(),
                    got: format!("{} and {}", site_kind(sx), site_kind(sy)),
                }),
            }
        }
    }
}

/// Product of two boundary directions on lifts: with null lifts u, v scaled
/// so that B(u, z) = B(v, z) = -1, the product is -log(-B(u, v) / 2) / 2.
/// At the ball center this reduces to -log sin(angle / 2).
fn model_boundary_pair(
    z: &ModelPoint,
    bx: &BoundaryPoint,
    by: &BoundaryPoint,
) -> Result<f64, CoarseError> {
    if bx.model != z.model || by.model != z.model {
        return Err(CoarseError::Model(ModelError::ModelMismatch {
            expected: format!("{} boundary points", z.model),
            got: format!("{} and {}", bx.model, by.model),
        }));
    }
    let n = z.dim();
    let u = bx.null_lift_dim(n)?;
    let v = by.null_lift_dim(n)?;
    let zl = z.lift();
    let bu = -bilinear_q(&u, &zl);
    let bv = -bilinear_q(&v, &zl);
    // Upper null vectors pair negatively with upper timelike vectors and
    // nonpositively with each other; clamp the rounding residue.
    let q = (-bilinear_q(&u, &v)).max(0.0);
    if q == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-0.5 * (q / (2.0 * bu * bv)).ln())
}

/// Visual distance D_o(x, y) = e^{-(x|y)_o} at the context basepoint.
/// Interior points satisfy D_o(x, x) = e^{-d(o, x)}; on the ball seen from
/// its center the boundary restriction is half the Euclidean chord, and on
/// a tree it is e^{-(split depth)}.
pub fn visual_dist(ctx: &GromovContext, x: &Site, y: &Site) -> Result<f64, CoarseError> {
    let o = ctx.basepoint();
    let p = gromov_product(ctx, x, y, &o)?;
    Ok((-p).exp())
}

fn direction_matches_site(ctx: &GromovContext, xi: &Direction, s: &Site) -> bool {
    match (ctx, xi, s) {
        (GromovContext::Model { basepoint }, Direction::Model(b), Site::ModelBoundary(c)) => {
            b.chart_close(c, basepoint.dim(), tol::IDENTITY)
        }
        (_, Direction::Tree(t), Site::TreeBoundary(u)) => t == u,
        _ => false,
    }
}

fn directions_equal(ctx: &GromovContext, a: &Direction, b: &Direction) -> bool {
    match (ctx, a, b) {
        (GromovContext::Model { basepoint }, Direction::Model(p), Direction::Model(q)) => {
            p.chart_close(q, basepoint.dim(), tol::EXACT)
        }
        (_, Direction::Tree(t), Direction::Tree(u)) => t == u,
        _ => false,
    }
}

/// Hamenstadt distance based at the direction xi:
/// D_xi(x, y) = exp((x|xi)_o + (y|xi)_o - (x|y)_o).
/// It blows up toward xi and is rescaled by 1/g'(xi) under an isometry g
/// fixing xi. At the point at infinity of the half-space with basepoint
/// (1, 0, ...) it restricts to the Euclidean distance on the boundary.
pub fn hamenstadt_dist(
    ctx: &GromovContext,
    xi: &Direction,
    x: &Site,
    y: &Site,
) -> Result<f64, CoarseError> {
    if direction_matches_site(ctx, xi, x) || direction_matches_site(ctx, xi, y) {
        return Err(CoarseError::EqualsXi);
    }
    let o = ctx.basepoint();
    let xs = xi.site();
    let gxy = gromov_product(ctx, x, y, &o)?;
    let gx = gromov_product(ctx, x, &xs, &o)?;
    let gy = gromov_product(ctx, y, &xs, &o)?;
    if gx.is_infinite() || gy.is_infinite() {
        return Err(CoarseError::EqualsXi);
    }
    Ok((gx + gy - gxy).exp())
}

/// The shadow cast from z past x with margin sigma: the set of boundary
/// directions xi with (z|xi)_x <= sigma. With sigma = 0 on a tree this
/// means the ray from z toward xi passes through x exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub z: Site,
    pub x: Site,
    pub sigma: f64,
}

/// Membership test, inclusive at the threshold.
pub fn in_shadow(
    ctx: &GromovContext,
    shadow: &Shadow,
    xi: &Direction,
) -> Result<bool, CoarseError> {
    if !(shadow.sigma.is_finite() && shadow.sigma >= 0.0) {
        return Err(CoarseError::Degenerate {
            reason: format!(
                "shadow margin {} must be finite and nonnegative",
                shadow.sigma
            ),
        });
    }
    require_interior(&shadow.z, "the shadow source")?;
    require_interior(&shadow.x, "the shadow anchor")?;
    let p = gromov_product(ctx, &shadow.z, &xi.site(), &shadow.x)?;
    Ok(p <= shadow.sigma)
}

/// Derivative of the boundary action of g at xi, measured in the visual
/// metric at the context basepoint: exp(-beta_xi(g^{-1} o, o)). Defined at
/// every boundary direction, fixed by g or not; two points contract or
/// spread by exactly this factor in the mean value identity
/// D(gx, gy)^2 = g'(x) g'(y) D(x, y)^2.
pub fn metric_derivative(
    ctx: &GromovContext,
    g: &LorentzMap,
    xi: &BoundaryPoint,
) -> Result<f64, CoarseError> {
    let GromovContext::Model { basepoint } = ctx else {
        return Err(CoarseError::SpaceMismatch {
            expected: "a model context".into(),
            got: "a tree context".into(),
        });
    };
    let o_prev = g.inverse().apply(basepoint)?;
    Ok((-busemann(xi, &o_prev, basepoint)?).exp())
}

/// Derivative of g at a boundary direction it fixes, from the Busemann
/// escape rate g'(xi) = exp(-lim beta_xi(g^{-n} o, o) / n). The limit is
/// averaged over up to n_max steps computed on hyperboloid lifts, which
/// keeps relative errors small even for long orbits. Verifies the fixed
/// point equation and the reciprocal law g'(xi) (g^{-1})'(xi) = 1.
pub fn dynamical_derivative(
    ctx: &GromovContext,
    g: &LorentzMap,
    xi: &BoundaryPoint,
    n_max: usize,
) -> Result<f64, CoarseError> {
    let GromovContext::Model { basepoint } = ctx else {
        return Err(CoarseError::SpaceMismatch {
            expected: "a model context".into(),
            got: "a tree context".into(),
        });
    };
    if n_max < 8 {
        return Err(CoarseError::Degenerate {
            reason: format!("derivative averaging needs n_max >= 8, got {n_max}"),
        });
    }
    let n = basepoint.dim();
    if xi.model != basepoint.model {
        return Err(CoarseError::Model(ModelError::ModelMismatch {
            expected: format!("{} boundary point", basepoint.model),
            got: format!("{} boundary point", xi.model),
        }));
    }
    if g.mat.nrows() != n + 1 {
        return Err(CoarseError::Model(ModelError::ModelMismatch {
            expected: format!("matrix of size {}", n + 1),
            got: format!("matrix of size {}", g.mat.nrows()),
        }));
    }
    let w = xi.null_lift_dim(n)?;
    let gw = &g.mat * &w;
    let gw = if gw[0] < 0.0 { -gw } else { gw };
    let moved = (&w / w.norm() - &gw / gw.norm()).norm();
    if moved > tol::FITTED {
        return Err(CoarseError::NotFixed { moved });
    }
    let ol = basepoint.lift();
    let der = escape_rate(&g.mat, &w, &ol, n_max);
    let der_inv = escape_rate(&g.inverse().mat, &w, &ol, n_max);
    let (Some(der), Some(der_inv)) = (der, der_inv) else {
        return Err(CoarseError::Degenerate {
            reason: "orbit left the representable range before the first step".into(),
        });
    };
    if (der * der_inv - 1.0).abs() > tol::FITTED {
        return Err(CoarseError::Degenerate {
            reason: format!(
                "reciprocal law fails: g'(xi) = {der}, (g^-1)'(xi) = {der_inv}"
            ),
        });
    }
    Ok(der)
}

/// exp(-avg_k beta_xi(M^{-k} o, o) / k), with the Busemann cocycle read off
/// as log(-B(M^k w, o)) - log(-B(w, o)): a Lorentz matrix moves across B
/// onto the null lift, and pairing a null vector with the fixed timelike
/// basepoint lift stays a fixed fraction of its norm, so nothing cancels
/// even when the point orbit converges to xi. Stops early once the
/// transported lift overflows; None only if even the first step fails.
fn escape_rate(
    m: &DMatrix<f64>,
    w: &DVector<f64>,
    ol: &DVector<f64>,
    n_max: usize,
) -> Option<f64> {
    let b0 = (-bilinear_q(w, ol)).ln();
    let mut u = w.clone();
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut first = f64::NAN;
    for k in 1..=n_max {
        u = m * &u;
        let bk = -bilinear_q(&u, ol);
        if !(bk.is_finite() && bk > 0.0) {
            break;
        }
        let est = (bk.ln() - b0) / k as f64;
        if used == 0 {
            first = est;
        } else if (est - first).abs() > tol::EXACT * (1.0 + first.abs()) {
            // For a truly fixed direction the estimates agree for every k
            // (the cocycle telescopes), but iterating into the contracting
            // eigendirection loses a factor of stretch^2 in precision per
            // step; a drifting estimate marks the corrupted tail.
            break;
        }
        sum += est;
        used = k;
    }
    if used == 0 {
        return None;
    }
    Some((-(sum / used as f64)).exp())
}

/// Polar coordinates of x around the ordered pair of directions
/// (xi1, xi2): the signed axis coordinate r = (beta_1 - beta_2) / 2, which
/// grows toward xi2 and vanishes where the horoball gauges balance, and the
/// excursion theta = (beta_1 + beta_2) / 2, zero exactly on the geodesic
/// from xi1 to xi2 through symmetric points. Both cocycles are taken
/// against the context basepoint.
pub fn polar_coords(
    ctx: &GromovContext,
    xi1: &Direction,
    xi2: &Direction,
    x: &Site,
) -> Result<(f64, f64), CoarseError> {
    if directions_equal(ctx, xi1, xi2) {
        return Err(CoarseError::Degenerate {
            reason: "polar coordinates need two distinct directions".into(),
        });
    }
    match (ctx, xi1, xi2) {
        (GromovContext::Model { basepoint }, Direction::Model(b1), Direction::Model(b2)) => {
            let p = model_interior(x, "the evaluation point")?;
            let b1x = busemann(b1, p, basepoint)?;
            let b2x = busemann(b2, p, basepoint)?;
            Ok((0.5 * (b1x - b2x), 0.5 * (b1x + b2x)))
        }
        (GromovContext::Tree { tree, basepoint }, Direction::Tree(t1), Direction::Tree(t2)) => {
            let p = tree_interior(x, "the evaluation point")?;
            tree.validate_pos(p)?;
            checked_direction(tree, *t1)?;
            checked_direction(tree, *t2)?;
            let b1x = tree.busemann(*t1, p, basepoint);
            let b2x = tree.busemann(*t2, p, basepoint);
            Ok((0.5 * (b1x - b2x), 0.5 * (b1x + b2x)))
        }
        _ => Err(CoarseError::SpaceMismatch {
            expected: "directions from the context's space".into(),
            got: "mixed space kinds".into(),
        }),
    }
}
