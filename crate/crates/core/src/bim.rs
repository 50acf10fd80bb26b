//! Isometric embedding of finite tree configurations into the hyperboloid.
//!
//! For a base lambda > 1, the matrix B[i][j] = -lambda^{d(v_i, v_j)} over a
//! finite tree-metric configuration has signature (m-1, 1), so the span of
//! the configuration with this form is a Minkowski space in disguise.
//! Splitting off the negative direction writes each abstract basis vector as
//! an explicit hyperboloid lift, and tree distances turn into hyperbolic
//! ones through a single identity: cosh d_H(x_i, x_j) = lambda^{d(v_i, v_j)}.
//! Configuration symmetries become Lorentz matrices by a change of basis, a
//! symmetry defined on only part of the configuration extends to a full
//! Lorentz matrix through matched frames, and translation lengths in the
//! model land on log(lambda) times the tree translation length.
//!
//! The embedding of m points is rigid about its ambient dimension: it needs
//! exactly m - 1, which can fall outside the window the chart-level model
//! API accepts (a pair of points embeds into a line, a large configuration
//! into dimension m - 1 > 64). The returned points therefore carry raw
//! hyperboloid coordinates, certified internally on their lifts, and the
//! caller should stay on lift-level routines when outside the window.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::models::{bilinear_q, LorentzMap, Model, ModelPoint};
use crate::rtree::{RTree, TreeError, TreePos};
use crate::tol;

#[derive(Debug, Clone, PartialEq)]
pub enum BimError {
    /// The base of the power law must be a finite number above 1.
    BadLambda { lambda: f64 },
    /// The distance matrix is not that of a tree metric.
    NotTreeMetric { reason: String },
    /// lambda^d leaves the representable range for some pair.
    Overflow { lambda: f64, dist: f64 },
    /// The form lost its expected signature or conditioning.
    SignatureFail { reason: String },
    /// The requested permutation or pairing does not preserve distances.
    NotIsometry { reason: String },
    Tree(TreeError),
}

impl std::fmt::Display for BimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BimError::BadLambda { lambda } => {
                write!(f, "base lambda = {lambda} must be a finite number above 1")
            }
            BimError::NotTreeMetric { reason } => write!(f, "not a tree metric: {reason}"),
            BimError::Overflow { lambda, dist } => write!(
                f,
                "{lambda}^{dist} exceeds 1e300; use a smaller base or rescale the tree"
            ),
            BimError::SignatureFail { reason } => write!(f, "signature failure: {reason}"),
            BimError::NotIsometry { reason } => write!(f, "not an isometry: {reason}"),
            BimError::Tree(e) => write!(f, "tree error: {e}"),
        }
    }
}

impl std::error::Error for BimError {}

impl From<TreeError> for BimError {
    fn from(e: TreeError) -> Self {
        BimError::Tree(e)
    }
}

/// The power of lambda that marks the overflow guard: lambda^d must stay
/// below 1e300 so squares and sums of entries remain representable.
const MAX_POW: f64 = 690.0; // ln(1e300) rounded down

/// A finite configuration to embed: the base of the power law and the
/// pairwise distance matrix, validated to be a tree metric with distinct
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct BimConfig {
    lambda: f64,
    dist: DMatrix<f64>,
}

impl BimConfig {
    /// Validates and stores a distance matrix: square, symmetric, zero
    /// diagonal, positive off-diagonal, triangle inequality, and the
    /// four-point condition (the two largest of the three pairings of every
    /// quadruple agree). Distances large enough to overflow lambda^d are
    /// rejected up front.
    pub fn new(lambda: f64, dist: &[Vec<f64>]) -> Result<Self, BimError> {
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(BimError::BadLambda { lambda });
        }
        let m = dist.len();
        if m == 0 {
            return Err(BimError::NotTreeMetric {
                reason: "empty configuration".into(),
            });
        }
        if dist.iter().any(|row| row.len() != m) {
            return Err(BimError::NotTreeMetric {
                reason: "distance matrix is not square".into(),
            });
        }
        let mut d = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let v = dist[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(BimError::NotTreeMetric {
                        reason: format!("entry ({i}, {j}) = {v} is not a distance"),
                    });
                }
                if v * lambda.ln() > MAX_POW {
                    return Err(BimError::Overflow { lambda, dist: v });
                }
                d[(i, j)] = v;
            }
        }
        for i in 0..m {
            if d[(i, i)] != 0.0 {
                return Err(BimError::NotTreeMetric {
                    reason: format!("diagonal entry {i} is {}", d[(i, i)]),
                });
            }
            for j in (i + 1)..m {
                if (d[(i, j)] - d[(j, i)]).abs() > tol::IDENTITY * (1.0 + d[(i, j)]) {
                    return Err(BimError::NotTreeMetric {
                        reason: format!("entries ({i}, {j}) and ({j}, {i}) differ"),
                    });
                }
                if d[(i, j)] <= 0.0 {
                    return Err(BimError::NotTreeMetric {
                        reason: format!("points {i} and {j} coincide"),
                    });
                }
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                for k in (j + 1)..m {
                    let (a, b, c) = (d[(i, j)], d[(j, k)], d[(i, k)]);
                    let slack = tol::EXACT * (1.0 + a + b + c);
                    if c > a + b + slack || a > b + c + slack || b > a + c + slack {
                        return Err(BimError::NotTreeMetric {
                            reason: format!("triangle inequality fails on ({i}, {j}, {k})"),
                        });
                    }
                }
            }
        }
        // Four-point condition: among the three ways to pair a quadruple,
        // the two largest sums agree exactly for a tree metric.
        for i in 0..m {
            for j in (i + 1)..m {
                for k in (j + 1)..m {
                    for l in (k + 1)..m {
                        let mut s = [
                            d[(i, j)] + d[(k, l)],
                            d[(i, k)] + d[(j, l)],
                            d[(i, l)] + d[(j, k)],
                        ];
                        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        if (s[2] - s[1]).abs() > tol::EXACT * (1.0 + s[2]) {
                            return Err(BimError::NotTreeMetric {
                                reason: format!(
                                    "four-point condition fails on ({i}, {j}, {k}, {l})"
                                ),
                            });
                        }
                    }
                }
            }
        }
        Ok(BimConfig { lambda, dist: d })
    }

    /// Reads the configuration off tree positions directly; the resulting
    /// matrix then passes through the same validation as `new`.
    pub fn from_tree(lambda: f64, tree: &RTree, points: &[TreePos]) -> Result<Self, BimError> {
        for p in points {
            tree.validate_pos(p)?;
        }
        let m = points.len();
        let mut rows = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = tree.dist(&points[i], &points[j]);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        Self::new(lambda, &rows)
    }

    pub fn len(&self) -> usize {
        self.dist.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // validation rejects empty configurations
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }
}

/// The bilinear form of a configuration, with a conditioning report.
#[derive(Debug, Clone, PartialEq)]
pub struct BimForm {
    /// B[i][j] = -lambda^{d(v_i, v_j)}; symmetric with diagonal -1.
    pub matrix: DMatrix<f64>,
    /// Smallest |eigenvalue|, as a margin against degeneracy.
    pub min_abs_eigenvalue: f64,
}

/// Builds the form and certifies its signature (m-1, 1) by eigenvalue
/// signs: exactly one negative eigenvalue and none within noise of zero.
pub fn build_form(cfg: &BimConfig) -> Result<BimForm, BimError> {
    let m = cfg.len();
    let matrix = DMatrix::from_fn(m, m, |i, j| -cfg.lambda.powf(cfg.dist(i, j)));
    let eigs = matrix.clone().symmetric_eigen().eigenvalues;
    let max_abs = eigs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min_abs = eigs.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min_abs <= 1e-12 * max_abs {
        return Err(BimError::SignatureFail {
            reason: format!(
                "eigenvalue {min_abs:.3e} sits within noise of zero (largest {max_abs:.3e}); \
                 a smaller lambda or a rescaled tree keeps the form away from degeneracy"
            ),
        });
    }
    let negatives = eigs.iter().filter(|&&v| v < 0.0).count();
    if negatives != 1 {
        return Err(BimError::SignatureFail {
            reason: format!("{negatives} negative eigenvalues, expected exactly one"),
        });
    }
    Ok(BimForm {
        matrix,
        min_abs_eigenvalue: min_abs,
    })
}

/// Embeds the configuration as hyperboloid lifts in R^m (time coordinate
/// first), splitting the form along its negative eigenvector: the
/// eigenvector u_s with Q(u_s) = -1 plays the role of a center, every basis
/// vector gets the time component -B(e_i, u_s), and the spatial parts come
/// from a Cholesky factorization of the positive remainder. The defining
/// identity -B(x_i, x_j) = lambda^{d_ij} is certified on all pairs before
/// anything is returned.
fn embed_lifts(cfg: &BimConfig) -> Result<Vec<DVector<f64>>, BimError> {
    let form = build_form(cfg)?;
    let b = &form.matrix;
    let m = cfg.len();

    let se = b.clone().symmetric_eigen();
    let mut neg_idx = 0;
    for (i, &v) in se.eigenvalues.iter().enumerate() {
        if v < se.eigenvalues[neg_idx] {
            neg_idx = i;
        }
    }
    let neg_val = se.eigenvalues[neg_idx];
    let mut u = se.eigenvectors.column(neg_idx).clone_owned();
    if u[u.iamax()] < 0.0 {
        u = -u;
    }
    // The form is minus an entrywise positive matrix, so its most negative
    // direction is a Perron vector: entrywise positive once oriented.
    if u.iter().any(|&c| c <= 0.0) {
        return Err(BimError::SignatureFail {
            reason: "negative-direction eigenvector is not entrywise positive".into(),
        });
    }
    let us = u / (-neg_val).sqrt();
    let t = -(b * &us);
    if t.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(BimError::SignatureFail {
            reason: "a time component failed to come out positive".into(),
        });
    }

    let mut lifts: Vec<DVector<f64>> = Vec::with_capacity(m);
    if m == 1 {
        lifts.push(DVector::from_vec(vec![t[0]]));
    } else {
        // Gram matrix of the projections of e_1..e_{m-1} to the orthogonal
        // complement of u_s, where the form is positive definite.
        let g = DMatrix::from_fn(m - 1, m - 1, |k, l| b[(k + 1, l + 1)] + t[k + 1] * t[l + 1]);
        let chol = Cholesky::new(g).ok_or_else(|| BimError::SignatureFail {
            reason: "restricted form is not positive definite; \
                     a smaller lambda or a rescaled tree improves conditioning"
                .into(),
        })?;
        let lower = chol.l();
        // The basepoint's spatial part is determined by its products with
        // the other points: row_i(L) . s_0 = B[i][0] + t_i t_0.
        let rhs = DVector::from_fn(m - 1, |k, _| b[(k + 1, 0)] + t[k + 1] * t[0]);
        let s0 = lower
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| BimError::SignatureFail {
                reason: "Cholesky factor is singular".into(),
            })?;
        let mut x0 = DVector::zeros(m);
        x0[0] = t[0];
        for k in 0..(m - 1) {
            x0[k + 1] = s0[k];
        }
        lifts.push(x0);
        for i in 1..m {
            let mut x = DVector::zeros(m);
            x[0] = t[i];
            for k in 0..(m - 1) {
                x[k + 1] = lower[(i - 1, k)];
            }
            lifts.push(x);
        }
    }

    for i in 0..m {
        for j in i..m {
            let target = cfg.lambda.powf(cfg.dist(i, j));
            let got = -bilinear_q(&lifts[i], &lifts[j]);
            if (got - target).abs() > tol::MATRIX {
                return Err(BimError::SignatureFail {
                    reason: format!(
                        "identity residual {:.3e} on pair ({i}, {j}); \
                         a smaller lambda or a rescaled tree improves conditioning",
                        (got - target).abs()
                    ),
                });
            }
        }
    }
    Ok(lifts)
}

/// Embeds the configuration into the hyperboloid of dimension m - 1. The
/// coordinates of each returned point are its full lift, time first, and
/// cosh of the hyperbolic distance between points i and j equals
/// lambda^{d(v_i, v_j)} to 1e-8, certified before returning. Dimensions
/// outside the chart window are allowed here; stay on lifts for those.
pub fn embed(cfg: &BimConfig) -> Result<Vec<ModelPoint>, BimError> {
    let lifts = embed_lifts(cfg)?;
    Ok(lifts
        .into_iter()
        .map(|v| ModelPoint {
            model: Model::Hyperboloid,
            coords: v.iter().copied().collect(),
        })
        .collect())
}

/// Conjugates a configuration symmetry through the embedding: sigma must
/// permute the points without changing any distance, and the returned M is
/// the unique linear map with M x_i = x_{sigma(i)}, verified to satisfy the
/// Lorentz identity to 1e-8 and to hit the permuted points to 1e-8.
pub fn represent_isometry(cfg: &BimConfig, sigma: &[usize]) -> Result<LorentzMap, BimError> {
    let m = cfg.len();
    if sigma.len() != m {
        return Err(BimError::NotIsometry {
            reason: format!("permutation has length {}, expected {m}", sigma.len()),
        });
    }
    let mut seen = vec![false; m];
    for &s in sigma {
        if s >= m || seen[s] {
            return Err(BimError::NotIsometry {
                reason: "not a permutation of the configuration".into(),
            });
        }
        seen[s] = true;
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (cfg.dist(i, j), cfg.dist(sigma[i], sigma[j]));
            if (a - b).abs() > tol::IDENTITY * (1.0 + a) {
                return Err(BimError::NotIsometry {
                    reason: format!(
                        "distance ({i}, {j}) = {a} maps to ({}, {}) = {b}",
                        sigma[i], sigma[j]
                    ),
                });
            }
        }
    }

    let lifts = embed_lifts(cfg)?;
    let mut x = DMatrix::zeros(m, m);
    let mut y = DMatrix::zeros(m, m);
    for i in 0..m {
        x.set_column(i, &lifts[i]);
        y.set_column(i, &lifts[sigma[i]]);
    }
    let x_inv = x.lu().try_inverse().ok_or_else(|| BimError::SignatureFail {
        reason: "configuration lifts do not span".into(),
    })?;
    let map = LorentzMap { mat: y * x_inv };
    certify_map(&map, &lifts, sigma.iter().copied().enumerate().map(|(i, s)| (i, s)))?;
    Ok(map)
}

/// Extends a distance-preserving partial pairing of configuration points to
/// a full Lorentz matrix. A finite configuration is rarely carried into
/// itself by the group elements of interest (a ball is not invariant under
/// a shift), so their action only pairs part of the configuration with
/// another part; matching orthonormal frames over the two sides, completed
/// against the standard basis, fills in the rest. The result satisfies
/// M x_i = x_j on every pair to 1e-8 and the Lorentz identity to 1e-8; the
/// action away from the paired points is the canonical frame completion,
/// unique up to an elliptic factor fixing the image span.
pub fn extend_partial_isometry(
    cfg: &BimConfig,
    pairs: &[(usize, usize)],
) -> Result<LorentzMap, BimError> {
    let m = cfg.len();
    if pairs.is_empty() {
        return Err(BimError::NotIsometry {
            reason: "no pairs to extend".into(),
        });
    }
    let mut src_seen = vec![false; m];
    let mut dst_seen = vec![false; m];
    for &(i, j) in pairs {
        if i >= m || j >= m {
            return Err(BimError::NotIsometry {
                reason: format!("pair ({i}, {j}) is out of range"),
            });
        }
        if src_seen[i] || dst_seen[j] {
            return Err(BimError::NotIsometry {
                reason: format!("pair ({i}, {j}) repeats a point"),
            });
        }
        src_seen[i] = true;
        dst_seen[j] = true;
    }
    for &(i, j) in pairs {
        for &(k, l) in pairs {
            let (a, b) = (cfg.dist(i, k), cfg.dist(j, l));
            if (a - b).abs() > tol::IDENTITY * (1.0 + a) {
                return Err(BimError::NotIsometry {
                    reason: format!("distance ({i}, {k}) = {a} maps to ({j}, {l}) = {b}"),
                });
            }
        }
    }

    let lifts = embed_lifts(cfg)?;
    let dom: Vec<DVector<f64>> = pairs.iter().map(|&(i, _)| lifts[i].clone()).collect();
    let img: Vec<DVector<f64>> = pairs.iter().map(|&(_, j)| lifts[j].clone()).collect();
    let (mut fa, kept) = q_frame(&dom, None)?;
    let (mut fb, _) = q_frame(&img, Some(&kept))?;
    complete_frame(&mut fa, m)?;
    complete_frame(&mut fb, m)?;
    if fa.len() != m || fb.len() != m {
        return Err(BimError::SignatureFail {
            reason: "frame completion did not reach full dimension".into(),
        });
    }
    for (a, b) in fa.iter().zip(fb.iter()) {
        if a.1 != b.1 {
            return Err(BimError::SignatureFail {
                reason: "frame signs of the two sides disagree".into(),
            });
        }
    }

    // M = Fb D Fa^T J sends the k-th domain frame vector to the k-th image
    // frame vector: Fa^T J picks out B(fa_k, .), and D undoes the sign of
    // the timelike slot.
    let mut fam = DMatrix::zeros(m, m);
    let mut fbm = DMatrix::zeros(m, m);
    let mut d = DMatrix::zeros(m, m);
    for k in 0..m {
        fam.set_column(k, &fa[k].0);
        fbm.set_column(k, &fb[k].0);
        d[(k, k)] = fa[k].1;
    }
    let mut j = DMatrix::identity(m, m);
    j[(0, 0)] = -1.0;
    let mut mat = fbm * d * fam.transpose() * &j;
    lorentz_polish(&mut mat, &j);
    let map = LorentzMap { mat };
    certify_map(&map, &lifts, pairs.iter().copied())?;
    Ok(map)
}

/// Newton iteration toward the Lorentz group, M <- (M + J M^{-T} J) / 2.
/// Frames assembled from lifts of large norm can miss the group identity by
/// the conditioning of the configuration; the iteration converges
/// quadratically from there and stops once the defect no longer improves.
fn lorentz_polish(mat: &mut DMatrix<f64>, j: &DMatrix<f64>) {
    let defect = |m: &DMatrix<f64>| (m.transpose() * j * m - j).amax();
    let mut best = defect(mat);
    for _ in 0..4 {
        if best <= 1e-15 {
            break;
        }
        let Some(inv) = mat.clone().try_inverse() else {
            break;
        };
        let next = 0.5 * (&*mat + j * inv.transpose() * j);
        let nd = defect(&next);
        if nd >= best {
            break;
        }
        *mat = next;
        best = nd;
    }
}

/// Shared post-check: the Lorentz identity and the required images, both to
/// the matrix tolerance relative to the largest lift in the configuration
/// (the error floor of anything assembled from those lifts).
fn certify_map(
    map: &LorentzMap,
    lifts: &[DVector<f64>],
    pairs: impl Iterator<Item = (usize, usize)>,
) -> Result<(), BimError> {
    let scale = lifts
        .iter()
        .map(|x| x.amax())
        .fold(1.0f64, f64::max);
    let defect = map.lorentz_defect();
    if defect > tol::MATRIX * scale {
        return Err(BimError::SignatureFail {
            reason: format!("conjugated map fails the Lorentz identity by {defect:.3e}"),
        });
    }
    for (i, j) in pairs {
        let image = &map.mat * &lifts[i];
        let err = (&image - &lifts[j]).amax();
        if err > tol::MATRIX * scale {
            return Err(BimError::SignatureFail {
                reason: format!("image of point {i} misses point {j} by {err:.3e}"),
            });
        }
    }
    Ok(())
}

/// Orthonormalizes `inputs` against the Minkowski form by modified
/// Gram-Schmidt with one reorthogonalization pass, recording which inputs
/// were kept. With `pattern` given, the keep decisions are replayed instead
/// of re-derived, so the two sides of a partial isometry stay aligned even
/// when a vector sits near the dependence threshold.
fn q_frame(
    inputs: &[DVector<f64>],
    pattern: Option<&[bool]>,
) -> Result<(Vec<(DVector<f64>, f64)>, Vec<bool>), BimError> {
    let mut frame: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut kept = Vec::with_capacity(inputs.len());
    for (idx, v) in inputs.iter().enumerate() {
        let mut r = v.clone();
        for _ in 0..2 {
            for (f, eta) in &frame {
                let c = eta * bilinear_q(&r, f);
                r -= f * c;
            }
        }
        let q = bilinear_q(&r, &r);
        let dependent = match pattern {
            Some(p) => !p[idx],
            None => q.abs() <= 1e-10 * r.norm_squared().max(1e-300),
        };
        if dependent {
            kept.push(false);
            continue;
        }
        if q.abs() <= 1e-12 * r.norm_squared().max(1e-300) {
            return Err(BimError::SignatureFail {
                reason: "frame replay hit a numerically null vector".into(),
            });
        }
        let eta = if q > 0.0 { 1.0 } else { -1.0 };
        r /= q.abs().sqrt();
        frame.push((r, eta));
        kept.push(true);
    }
    Ok((frame, kept))
}

/// Completes a frame to a full basis of R^m by sweeping the standard basis
/// through the same orthogonalization. The first frame vector of any
/// nonempty input is timelike (it is a lift), so every residual here comes
/// out spacelike and the completed signs read (-1, +1, ..., +1).
fn complete_frame(frame: &mut Vec<(DVector<f64>, f64)>, m: usize) -> Result<(), BimError> {
    for k in 0..m {
        if frame.len() == m {
            break;
        }
        let mut r = DVector::zeros(m);
        r[k] = 1.0;
        for _ in 0..2 {
            for (f, eta) in frame.iter() {
                let c = eta * bilinear_q(&r, f);
                r -= f * c;
            }
        }
        let q = bilinear_q(&r, &r);
        if q.abs() <= 1e-10 * r.norm_squared().max(1e-300) {
            continue;
        }
        if q < 0.0 {
            return Err(BimError::SignatureFail {
                reason: "frame completion produced a second timelike direction".into(),
            });
        }
        r /= q.sqrt();
        frame.push((r, 1.0));
    }
    Ok(())
}
