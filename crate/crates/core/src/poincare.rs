//! Orbital counting and critical exponents.
//!
//! An orbit of basepoint displacements ||g|| = d(o, g(o)) carries three
//! intertwined summaries: the counting function N(rho) = #{g : ||g|| <= rho},
//! the weighted series Sigma_s = sum e^{-s ||g||}, and the exponent delta
//! where the series flips from divergent to convergent. This module builds
//! counting profiles from norm streams, fits the exponent with an honest
//! residual band, coarsens orbits to maximal separated nets (whose exponent
//! is the right invariant when point stabilizers are infinite), solves the
//! exponent of free products acting on trees exactly from per-factor series,
//! and checks the lower bound delta >= alpha/2 relating the exponent of a
//! parabolic lattice to its polynomial growth degree alpha.
//!
//! Everything runs in base e: series weight e^{-s ||g||}, exponents in nats.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::actions::{FactorGroup, SchottkyAction};
use crate::numeric::{acosh_stable, bisect, line_fit};
use crate::rtree::CountingSpec;

/// Bracket and width for the exact product-exponent bisection. The criterion
/// is strictly decreasing where finite, so the root is simple; 2e-11 of
/// bracket width leaves the midpoint within 1e-10 of the root.
const BRACKET: (f64, f64) = (1e-6, 50.0);
const BISECT_WIDTH: f64 = 2e-11;

/// Counting groups and torsion orbits are written out element by element;
/// the expansion refuses to materialize more than this.
const EXPANSION_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum PoincareError {
    /// The norm stream has no entries.
    EmptyOrbit,
    /// The norm stream has no zero entry, so the identity is missing.
    MissingIdentity { min_norm: f64 },
    /// A norm or distance is negative, infinite, or NaN.
    BadNorm { value: f64 },
    /// The counting function does not grow enough inside the fit window.
    InsufficientRange { reason: String },
    /// Separation radius must be a positive finite number.
    BadSeparation { rho: f64 },
    /// No factors were given to the product solver.
    EmptyProduct,
    /// A factor series is outside what the solver can certify.
    FactorSeriesUnknown { reason: String },
    /// Enumeration hit its state budget before reaching the target range.
    BudgetExceeded { budget: usize },
    /// The two inputs describe different groups.
    MismatchedGroup { expected: String, got: String },
}

impl std::fmt::Display for PoincareError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoincareError::EmptyOrbit => write!(f, "empty orbit stream"),
            PoincareError::MissingIdentity { min_norm } => {
                write!(f, "no zero norm in the stream; smallest is {min_norm}")
            }
            PoincareError::BadNorm { value } => {
                write!(f, "norm {value} is not a finite nonnegative number")
            }
            PoincareError::InsufficientRange { reason } => {
                write!(f, "insufficient range for an exponent fit: {reason}")
            }
            PoincareError::BadSeparation { rho } => {
                write!(f, "separation radius {rho} must be positive and finite")
            }
            PoincareError::EmptyProduct => write!(f, "no factors given"),
            PoincareError::FactorSeriesUnknown { reason } => {
                write!(f, "factor series outside the certified range: {reason}")
            }
            PoincareError::BudgetExceeded { budget } => {
                write!(f, "enumeration exceeded its budget of {budget} states")
            }
            PoincareError::MismatchedGroup { expected, got } => {
                write!(f, "inputs describe different groups: {expected} vs {got}")
            }
        }
    }
}

impl std::error::Error for PoincareError {}

/// A sorted multiset of orbit norms with its counting function and partial
/// series. Profiles from independently enumerated sub-streams merge by
/// concatenating the raw norms and rebuilding; the sort makes the result
/// independent of stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareProfile {
    norms: Vec<f64>,
}

/// Validates and sorts a raw norm stream. The stream must be nonempty, all
/// norms finite and nonnegative, and the identity (norm zero) present.
pub fn build_profile(norms: &[f64]) -> Result<PoincareProfile, PoincareError> {
    if norms.is_empty() {
        return Err(PoincareError::EmptyOrbit);
    }
    for &v in norms {
        if !(v.is_finite() && v >= 0.0) {
            return Err(PoincareError::BadNorm { value: v });
        }
    }
    let mut norms = norms.to_vec();
    norms.sort_by(f64::total_cmp);
    if norms[0] != 0.0 {
        return Err(PoincareError::MissingIdentity { min_norm: norms[0] });
    }
    Ok(PoincareProfile { norms })
}

impl PoincareProfile {
    /// The stored norms, ascending.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    /// Never true: construction rejects empty streams.
    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        *self.norms.last().expect("profile is never empty")
    }

    /// N(rho) = #{g : ||g|| <= rho}. Right-continuous, zero left of the
    /// origin, and N(0) >= 1 because the identity is always stored.
    pub fn counting(&self, rho: f64) -> usize {
        self.norms.partition_point(|&v| v <= rho)
    }

    /// The partial series sum e^{-s ||g||} over the stored multiset, summed
    /// term by term in norm order. Strictly decreasing in s whenever some
    /// norm is positive.
    pub fn sigma(&self, s: f64) -> f64 {
        self.norms.iter().map(|&v| (-s * v).exp()).sum()
    }
}

/// Least-squares exponent fit delta_hat with a residual band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentEstimate {
    pub delta_hat: f64,
    /// Residual-based slope uncertainty, max residual over window half-span.
    /// A heuristic scale, not a confidence interval.
    pub band: f64,
    /// Fit window in norm units: the upper half of the sampled range.
    pub window: (f64, f64),
    /// Distinct norm values inside the window.
    pub points: usize,
}

/// Fits log N(rho) against rho by least squares over the upper half of the
/// sampled range, where the leading exponential behavior dominates edge
/// effects. The fit abscissae are the distinct norm values in the window,
/// each contributing the count at its own jump.
pub fn exponent_estimate(profile: &PoincareProfile) -> Result<ExponentEstimate, PoincareError> {
    let hi = profile.max_norm();
    let lo = hi / 2.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &v in &profile.norms {
        if v >= lo && v != prev {
            xs.push(v);
            ys.push((profile.counting(v) as f64).ln());
            prev = v;
        }
    }
    if xs.len() < 3 {
        return Err(PoincareError::InsufficientRange {
            reason: format!(
                "only {} distinct norms in the window [{lo}, {hi}]; the counting function looks bounded",
                xs.len()
            ),
        });
    }
    let fit = line_fit(&xs, &ys).expect("three distinct abscissae");
    Ok(ExponentEstimate {
        delta_hat: fit.slope,
        band: fit.slope_band(),
        window: (lo, hi),
        points: xs.len(),
    })
}

/// A maximal rho-separated subset of an orbit sample, with its own counting
/// profile and exponent. Where stabilizers are infinite the plain exponent
/// degenerates, but the net exponent is stable: any maximal separated set of
/// the orbit sees the same divergence behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct NetProfile {
    pub rho: f64,
    /// Indices into the input sample, in acceptance order; the basepoint
    /// (index 0) is always kept first.
    pub kept: Vec<usize>,
    /// Counting profile of the net, norms measured from the basepoint.
    pub profile: PoincareProfile,
    /// Exponent of the net: a least-squares fit, or exactly 0 for a
    /// singleton net (the sample then sits inside one rho-ball).
    pub delta_hat: f64,
    pub band: f64,
}

/// Greedily extracts a maximal rho-separated subset of the sample, walking
/// it in the given order: a point joins the net when it is at distance at
/// least rho from everything already kept. Maximality within the sample is
/// automatic, since every rejected point witnessed a net point within rho.
/// The first sample point serves as basepoint for the net norms.
pub fn modified_exponent<T, D: Fn(&T, &T) -> f64>(
    sample: &[T],
    dist: D,
    rho: f64,
) -> Result<NetProfile, PoincareError> {
    if sample.is_empty() {
        return Err(PoincareError::EmptyOrbit);
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(PoincareError::BadSeparation { rho });
    }
    let mut kept: Vec<usize> = vec![0];
    for i in 1..sample.len() {
        let mut separated = true;
        for &j in &kept {
            let d = dist(&sample[i], &sample[j]);
            if !(d.is_finite() && d >= 0.0) {
                return Err(PoincareError::BadNorm { value: d });
            }
            if d < rho {
                separated = false;
                break;
            }
        }
        if separated {
            kept.push(i);
        }
    }
    let norms: Vec<f64> = kept.iter().map(|&i| dist(&sample[0], &sample[i])).collect();
    let profile = build_profile(&norms)?;
    let (delta_hat, band) = if kept.len() == 1 {
        (0.0, 0.0)
    } else {
        let est = exponent_estimate(&profile)?;
        (est.delta_hat, est.band)
    };
    Ok(NetProfile {
        rho,
        kept,
        profile,
        delta_hat,
        band,
    })
}

/// A factor of a free product acting on its tree, described by enough of its
/// weighted series Sigma_s(H) = sum_h e^{-s ||h||} for exact work. The
/// solver consumes the excess Sigma_s(H) - 1, the series over nontrivial
/// elements, which is what alternating words see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorSeries {
    /// The integers, generator translating by `step`: excess 2q/(1 - q)
    /// with q = e^{-s step}, infinite exactly at s = 0.
    Cyclic { step: f64 },
    /// A finite group whose `count - 1` nontrivial elements share one norm.
    Uniform { count: u32, norm: f64 },
    /// A finite group listed by its nontrivial norms.
    Finite { norms: Vec<f64> },
    /// An increasing union of finite groups with (branch - 1) branch^{k-1}
    /// new elements at norm k * step: excess (branch - 1) x / (1 - branch x)
    /// with x = e^{-s step}, divergent on s <= ln(branch) / step including
    /// the endpoint, where the terms stop decaying.
    GeometricTower { branch: u32, step: f64 },
    /// Certified numeric series: the nontrivial norms below `cutoff` are
    /// listed in full, and beyond it at most `per_window` elements fall in
    /// each window [cutoff + k gap, cutoff + (k+1) gap). The excess is then
    /// known only between the listed sum and listed sum plus geometric tail.
    TailBounded {
        norms: Vec<f64>,
        cutoff: f64,
        per_window: u32,
        gap: f64,
    },
    /// A bare truncated sample with no tail certificate. Profiles can carry
    /// one, but the exact solver rejects it: its excess has no upper bound.
    Empirical { norms: Vec<f64> },
}

impl FactorSeries {
    pub fn validate(&self) -> Result<(), PoincareError> {
        let positive = |v: f64| -> Result<(), PoincareError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PoincareError::BadNorm { value: v })
            }
        };
        let order = |n: u32| -> Result<(), PoincareError> {
            if n >= 2 {
                Ok(())
            } else {
                Err(PoincareError::FactorSeriesUnknown {
                    reason: format!("order {n} leaves no nontrivial elements"),
                })
            }
        };
        let listed = |norms: &[f64]| -> Result<(), PoincareError> {
            if norms.is_empty() {
                return Err(PoincareError::FactorSeriesUnknown {
                    reason: "a factor with no nontrivial elements is not a factor".into(),
                });
            }
            norms.iter().try_for_each(|&v| positive(v))
        };
        match self {
            FactorSeries::Cyclic { step } => positive(*step),
            FactorSeries::Uniform { count, norm } => {
                order(*count)?;
                positive(*norm)
            }
            FactorSeries::Finite { norms } | FactorSeries::Empirical { norms } => listed(norms),
            FactorSeries::GeometricTower { branch, step } => {
                order(*branch)?;
                positive(*step)
            }
            FactorSeries::TailBounded {
                norms,
                cutoff,
                per_window,
                gap,
            } => {
                listed(norms)?;
                positive(*cutoff)?;
                positive(*gap)?;
                if *per_window == 0 {
                    // A zero tail is a finite group; ask for the honest form.
                    return Err(PoincareError::FactorSeriesUnknown {
                        reason: "empty tail; use a finite series instead".into(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Translates an action factor into its series. Counting groups are
    /// expanded level by level: the elements whose deepest nonzero
    /// coordinate is level k all share the level-k threshold as norm.
    pub fn from_group(factor: &FactorGroup) -> Result<FactorSeries, PoincareError> {
        factor
            .validate()
            .map_err(|reason| PoincareError::FactorSeriesUnknown { reason })?;
        let series = match factor {
            FactorGroup::Cyclic { r } => FactorSeries::Cyclic { step: *r },
            FactorGroup::FiniteCyclic { n, lambda } => FactorSeries::Uniform {
                count: *n,
                norm: *lambda,
            },
            FactorGroup::Table { norms, .. } => FactorSeries::Finite {
                norms: norms[1..].to_vec(),
            },
            FactorGroup::Counting(spec) => {
                let mut norms = Vec::new();
                let mut below: u128 = 1;
                for level in 0..spec.levels() {
                    if below * u128::from(spec.size(level)) > EXPANSION_CAP {
                        return Err(PoincareError::FactorSeriesUnknown {
                            reason: format!(
                                "counting group outgrows the {EXPANSION_CAP}-element expansion cap at level {level}"
                            ),
                        });
                    }
                    let new = below * (u128::from(spec.size(level)) - 1);
                    for _ in 0..new {
                        norms.push(spec.threshold(level));
                    }
                    below *= u128::from(spec.size(level));
                }
                FactorSeries::Finite { norms }
            }
        };
        series.validate()?;
        Ok(series)
    }

    /// Lower and upper bounds for the excess Sigma_s(H) - 1. Exact variants
    /// return equal bounds; the tail-bounded variant brackets its tail by
    /// zero and the full geometric envelope. Both bounds decrease in s.
    pub fn excess_bounds(&self, s: f64) -> (f64, f64) {
        let listed = |norms: &[f64]| norms.iter().map(|&v| (-s * v).exp()).sum::<f64>();
        match self {
            FactorSeries::Cyclic { step } => {
                let q = (-s * step).exp();
                if q >= 1.0 {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    let v = 2.0 * q / (1.0 - q);
                    (v, v)
                }
            }
            FactorSeries::Uniform { count, norm } => {
                let v = f64::from(*count - 1) * (-s * norm).exp();
                (v, v)
            }
            FactorSeries::Finite { norms } => {
                let v = listed(norms);
                (v, v)
            }
            FactorSeries::GeometricTower { branch, step } => {
                let x = (-s * step).exp();
                let b = f64::from(*branch);
                if b * x >= 1.0 {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    let v = (b - 1.0) * x / (1.0 - b * x);
                    (v, v)
                }
            }
            FactorSeries::TailBounded {
                norms,
                cutoff,
                per_window,
                gap,
            } => {
                let base = listed(norms);
                let r = (-s * gap).exp();
                if r >= 1.0 {
                    (base, f64::INFINITY)
                } else {
                    let tail = f64::from(*per_window) * (-s * cutoff).exp() / (1.0 - r);
                    (base, base + tail)
                }
            }
            FactorSeries::Empirical { norms } => (listed(norms), f64::INFINITY),
        }
    }

    /// Whether the series is known exactly at every s.
    pub fn exact(&self) -> bool {
        matches!(
            self,
            FactorSeries::Cyclic { .. }
                | FactorSeries::Uniform { .. }
                | FactorSeries::Finite { .. }
                | FactorSeries::GeometricTower { .. }
        )
    }

    /// The divergence locus of this factor alone, for single-factor calls.
    fn own_poincare_set(&self) -> PoincareSet {
        match self {
            // Sigma_0 counts the group, infinite; every s > 0 converges, so
            // the locus is the single point [0, 0].
            FactorSeries::Cyclic { .. } => PoincareSet {
                delta: 0.0,
                gap: 0.0,
                divergence: Divergence::Divergent,
            },
            // Finite groups converge everywhere: the locus [0, 0) is empty.
            FactorSeries::Uniform { .. } | FactorSeries::Finite { .. } => PoincareSet {
                delta: 0.0,
                gap: 0.0,
                divergence: Divergence::Convergent,
            },
            // At s = ln(branch)/step the terms freeze at (branch-1)/branch,
            // so the endpoint still diverges.
            FactorSeries::GeometricTower { branch, step } => PoincareSet {
                delta: f64::from(*branch).ln() / step,
                gap: 0.0,
                divergence: Divergence::Divergent,
            },
            // The tail keeps every s > 0 finite; s = 0 depends on whether
            // the group is infinite, which the certificate does not say.
            FactorSeries::TailBounded { .. } | FactorSeries::Empirical { .. } => PoincareSet {
                delta: 0.0,
                gap: 0.0,
                divergence: Divergence::Undecided,
            },
        }
    }
}

/// Whether the series still diverges at its critical exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    Divergent,
    Convergent,
    Undecided,
}

/// The divergence locus {s >= 0 : Sigma_s = infinity}: always a ray from 0,
/// closed at delta for divergence type, open for convergence type. For
/// delta = 0 and convergence type the ray [0, 0) is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareSet {
    pub delta: f64,
    /// Half-width of the certification interval around delta: bisection
    /// width for exact series, tail slack otherwise.
    pub gap: f64,
    pub divergence: Divergence,
}

impl std::fmt::Display for PoincareSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.divergence {
            Divergence::Divergent => write!(f, "[0, {:.12}]", self.delta),
            Divergence::Convergent => write!(f, "[0, {:.12})", self.delta),
            Divergence::Undecided => {
                write!(f, "[0, {:.12}] up to an undecided endpoint", self.delta)
            }
        }
    }
}

/// The exact divergence locus of a free product from its factor series.
///
/// An alternating word's norm is the sum of its letter norms, so the full
/// series factors through the per-factor excesses v_j(s) = Sigma_s(H_j) - 1:
/// summing words grouped by factor pattern turns the series into a geometric
/// series in the transfer matrix A(s), the matrix with v_j filling row j off
/// the diagonal; it diverges exactly when the spectral radius of A(s)
/// reaches 1, which for two factors reads v_1 v_2 >= 1. Each v_j is
/// continuous and strictly decreasing where finite and blows up at the
/// factor's own divergence point, so the criterion crosses 1 at a single
/// root, found by bisection. At the root the grouped series has unit ratio
/// and diverges, which makes every exact product divergence type.
/// Tail-bounded factors bracket the root instead and leave the endpoint
/// undecided.
pub fn schottky_poincare_set(factors: &[FactorSeries]) -> Result<PoincareSet, PoincareError> {
    if factors.is_empty() {
        return Err(PoincareError::EmptyProduct);
    }
    for (i, factor) in factors.iter().enumerate() {
        factor.validate()?;
        if let FactorSeries::Empirical { .. } = factor {
            return Err(PoincareError::FactorSeriesUnknown {
                reason: format!("factor {i} is a truncated sample with no tail bound"),
            });
        }
    }
    if factors.len() == 1 {
        return Ok(factors[0].own_poincare_set());
    }

    let radius = |s: f64, upper: bool| -> f64 {
        let v: Vec<f64> = factors
            .iter()
            .map(|f| {
                let (lo, hi) = f.excess_bounds(s);
                if upper {
                    hi
                } else {
                    lo
                }
            })
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        let k = v.len();
        let a = DMatrix::from_fn(k, k, |r, c| if r == c { 0.0 } else { v[r] });
        a.complex_eigenvalues()
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    };

    // Every factor contributes at least one nontrivial element even to its
    // lower excess at s = 0, so the radius starts at 1 or above and s = 0
    // always belongs to the locus. A radius already below 1 at the bracket
    // start therefore pins delta = 0 with a divergent endpoint.
    if radius(BRACKET.0, true) < 1.0 {
        return Ok(PoincareSet {
            delta: 0.0,
            gap: BRACKET.0,
            divergence: Divergence::Divergent,
        });
    }
    if radius(BRACKET.1, false) >= 1.0 {
        return Err(PoincareError::FactorSeriesUnknown {
            reason: format!(
                "criterion still at least 1 at s = {}; the exponent leaves the certified bracket",
                BRACKET.1
            ),
        });
    }
    if radius(BRACKET.1, true) >= 1.0 {
        return Err(PoincareError::FactorSeriesUnknown {
            reason: format!(
                "tail bound too weak to settle the criterion below s = {}",
                BRACKET.1
            ),
        });
    }

    let root = |upper: bool| -> f64 {
        if radius(BRACKET.0, upper) < 1.0 {
            // Only reachable for the lower bound of a tail-bounded factor:
            // its root sits below the bracket, indistinguishable from 0.
            return 0.0;
        }
        bisect(
            |s| radius(s, upper) - 1.0,
            BRACKET.0,
            BRACKET.1,
            BISECT_WIDTH,
        )
        .expect("criterion changes sign across the bracket")
    };
    if factors.iter().all(FactorSeries::exact) {
        Ok(PoincareSet {
            delta: root(true),
            gap: BISECT_WIDTH,
            divergence: Divergence::Divergent,
        })
    } else {
        let lo = root(false);
        let hi = root(true);
        Ok(PoincareSet {
            delta: 0.5 * (lo + hi),
            gap: 0.5 * (hi - lo) + BISECT_WIDTH,
            divergence: Divergence::Undecided,
        })
    }
}

/// Norms of all elements of a free product up to `rho_max`, one entry per
/// reduced alternating word, identity included. Deterministic depth-first
/// order: factors ascending, letters in each factor's own enumeration
/// order. Word norms are letter-norm sums, which is exactly the tree
/// displacement of the product action.
pub fn free_product_norms(
    action: &SchottkyAction,
    rho_max: f64,
    budget: usize,
) -> Result<Vec<f64>, PoincareError> {
    if !(rho_max.is_finite() && rho_max >= 0.0) {
        return Err(PoincareError::BadNorm { value: rho_max });
    }
    fn extend(
        action: &SchottkyAction,
        last: usize,
        used: f64,
        rho_max: f64,
        budget: usize,
        out: &mut Vec<f64>,
    ) -> Result<(), PoincareError> {
        for (fi, factor) in action.factors.iter().enumerate() {
            if fi == last {
                continue;
            }
            for elem in factor.elems_up_to(rho_max - used, budget) {
                let total = used + factor.norm(&elem);
                if out.len() >= budget {
                    return Err(PoincareError::BudgetExceeded { budget });
                }
                out.push(total);
                extend(action, fi, total, rho_max, budget, out)?;
            }
        }
        Ok(())
    }
    let mut out = vec![0.0];
    extend(action, usize::MAX, 0.0, rho_max, budget, &mut out)?;
    Ok(out)
}

/// A finitely generated group whose word-metric balls the workbench can
/// enumerate, or a locally finite torsion label whose growth degree is zero
/// by definition (all its finitely generated subgroups are finite).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CayleySpec {
    FreeAbelian { rank: u32 },
    Heisenberg,
    Torsion,
}

impl std::fmt::Display for CayleySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CayleySpec::FreeAbelian { rank } => write!(f, "Z^{rank}"),
            CayleySpec::Heisenberg => write!(f, "Heisenberg"),
            CayleySpec::Torsion => write!(f, "locally finite torsion"),
        }
    }
}

/// Word-metric ball sizes and the fitted polynomial growth degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub spec: CayleySpec,
    pub alpha_hat: f64,
    pub band: f64,
    /// |B(R)| for R = 0..=r_max; empty for the torsion label.
    pub ball_sizes: Vec<u64>,
}

/// Grows word-metric balls by breadth-first search and fits log |B(R)|
/// against log R over the upper half of the radii. Bounded ball sequences
/// short-circuit to degree exactly 0 (the balls exhaust the group), as does
/// the torsion label.
pub fn growth_rate(
    spec: &CayleySpec,
    r_max: u32,
    budget: usize,
) -> Result<GrowthReport, PoincareError> {
    if *spec == CayleySpec::Torsion {
        return Ok(GrowthReport {
            spec: spec.clone(),
            alpha_hat: 0.0,
            band: 0.0,
            ball_sizes: Vec::new(),
        });
    }
    let moves: Vec<Vec<i64>> = match spec {
        CayleySpec::FreeAbelian { rank } => (0..*rank as usize)
            .flat_map(|i| {
                let mut e = vec![0i64; *rank as usize];
                e[i] = 1;
                let mut f = e.clone();
                f[i] = -1;
                [e, f]
            })
            .collect(),
        CayleySpec::Heisenberg => vec![
            vec![1, 0, 0],
            vec![-1, 0, 0],
            vec![0, 1, 0],
            vec![0, -1, 0],
        ],
        CayleySpec::Torsion => unreachable!(),
    };
    // Right multiplication by a generator; the Heisenberg center picks up
    // +-x whenever the second coordinate moves.
    let step = |state: &[i64], mv: &[i64]| -> Vec<i64> {
        match spec {
            CayleySpec::Heisenberg => vec![
                state[0] + mv[0],
                state[1] + mv[1],
                state[2] + mv[1] * state[0],
            ],
            _ => state.iter().zip(mv).map(|(a, b)| a + b).collect(),
        }
    };

    let origin: Vec<i64> = vec![0; moves.first().map_or(0, Vec::len)];
    let mut seen: HashSet<Vec<i64>> = HashSet::from([origin.clone()]);
    let mut frontier = vec![origin];
    let mut ball_sizes = vec![1u64];
    for _ in 1..=r_max {
        let mut next = Vec::new();
        for state in &frontier {
            for mv in &moves {
                let to = step(state, mv);
                if seen.insert(to.clone()) {
                    if seen.len() > budget {
                        return Err(PoincareError::BudgetExceeded { budget });
                    }
                    next.push(to);
                }
            }
        }
        ball_sizes.push(seen.len() as u64);
        frontier = next;
    }

    if ball_sizes.last() == ball_sizes.first() {
        // The ball never left the origin: the trivial group.
        return Ok(GrowthReport {
            spec: spec.clone(),
            alpha_hat: 0.0,
            band: 0.0,
            ball_sizes,
        });
    }
    let r_lo = (r_max / 2).max(1);
    let xs: Vec<f64> = (r_lo..=r_max).map(|r| f64::from(r).ln()).collect();
    let ys: Vec<f64> = (r_lo..=r_max)
        .map(|r| (ball_sizes[r as usize] as f64).ln())
        .collect();
    if xs.len() < 3 {
        return Err(PoincareError::InsufficientRange {
            reason: format!("only {} radii in the upper window; raise r_max", xs.len()),
        });
    }
    let fit = line_fit(&xs, &ys).expect("three distinct radii");
    Ok(GrowthReport {
        spec: spec.clone(),
        alpha_hat: fit.slope,
        band: fit.slope_band(),
        ball_sizes,
    })
}

/// Orbit norms of a parabolic group tagged with the group they came from,
/// so that exponent and growth data can be matched up safely.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicProfile {
    pub spec: CayleySpec,
    pub profile: PoincareProfile,
}

/// Norms of the rank-d lattice of boundary translations extended to the
/// half-space, measured at the basepoint of height 1: the extension of
/// x -> x + n moves the basepoint horizontally by |n|, and the half-space
/// metric gives cosh ||g_n|| = 1 + |n|^2 / 2. Enumerates the whole lattice
/// box with |n|^2 <= 2 (cosh rho_max - 1), lexicographically.
pub fn parabolic_translation_norms(
    rank: u32,
    rho_max: f64,
    budget: usize,
) -> Result<ParabolicProfile, PoincareError> {
    if !(rho_max.is_finite() && rho_max >= 0.0) {
        return Err(PoincareError::BadNorm { value: rho_max });
    }
    let sq_max = 2.0 * (rho_max.cosh() - 1.0);
    let n_max = sq_max.sqrt().floor() as i64;
    let mut norms = Vec::new();
    let mut coord = vec![-n_max; rank as usize];
    loop {
        let sq: f64 = coord.iter().map(|&c| (c * c) as f64).sum();
        if sq <= sq_max {
            if norms.len() >= budget {
                return Err(PoincareError::BudgetExceeded { budget });
            }
            norms.push(acosh_stable(1.0 + sq / 2.0));
        }
        // Odometer step through the box [-n_max, n_max]^rank.
        let mut i = 0;
        loop {
            if i == coord.len() {
                let profile = build_profile(&norms)?;
                return Ok(ParabolicProfile {
                    spec: CayleySpec::FreeAbelian { rank },
                    profile,
                });
            }
            if coord[i] < n_max {
                coord[i] += 1;
                break;
            }
            coord[i] = -n_max;
            i += 1;
        }
    }
}

/// Orbit norms of a counting group acting parabolically: every element
/// whose deepest level is k sits at the level-k threshold. Expands the
/// whole (finite) group, tagged as torsion.
pub fn torsion_orbit_norms(
    spec: &CountingSpec,
    budget: usize,
) -> Result<ParabolicProfile, PoincareError> {
    spec.validate()
        .map_err(|e| PoincareError::FactorSeriesUnknown {
            reason: e.to_string(),
        })?;
    let mut norms = vec![0.0];
    let mut below: u128 = 1;
    for level in 0..spec.levels() {
        let new = below * (u128::from(spec.size(level)) - 1);
        below *= u128::from(spec.size(level));
        if below > budget as u128 || below > EXPANSION_CAP {
            return Err(PoincareError::BudgetExceeded { budget });
        }
        for _ in 0..new {
            norms.push(spec.threshold(level));
        }
    }
    Ok(ParabolicProfile {
        spec: CayleySpec::Torsion,
        profile: build_profile(&norms)?,
    })
}

/// The two sides of the parabolic lower bound delta >= alpha / 2, with the
/// verdict computed from the fitted values and their bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicBound {
    pub delta_hat: f64,
    pub delta_band: f64,
    pub alpha_hat: f64,
    pub alpha_band: f64,
    pub holds: bool,
}

/// Checks the exponent of a parabolic orbit against half its growth degree:
/// delta_hat + band >= (alpha_hat - band) / 2, each side pushed to the
/// favorable edge of its own uncertainty so that only a genuine violation
/// trips the flag. The orbit and growth report must carry the same group.
pub fn parabolic_bound_check(
    orbit: &ParabolicProfile,
    growth: &GrowthReport,
) -> Result<ParabolicBound, PoincareError> {
    if orbit.spec != growth.spec {
        return Err(PoincareError::MismatchedGroup {
            expected: orbit.spec.to_string(),
            got: growth.spec.to_string(),
        });
    }
    let est = exponent_estimate(&orbit.profile)?;
    let holds = est.delta_hat + est.band >= (growth.alpha_hat - growth.band) / 2.0;
    Ok(ParabolicBound {
        delta_hat: est.delta_hat,
        delta_band: est.band,
        alpha_hat: growth.alpha_hat,
        alpha_band: growth.band,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{FactorElem, Letter, Word};
    use crate::models::{dist, poincare_extension, ModelPoint, Similarity};
    use crate::rtree::{RTree, TreePos};
    use nalgebra::DVector;

    fn f2() -> SchottkyAction {
        SchottkyAction::new(vec![
            FactorGroup::Cyclic { r: 1.0 },
            FactorGroup::Cyclic { r: 1.0 },
        ])
        .unwrap()
    }

    #[test]
    fn f2_counts_match_the_reduced_word_formula() {
        let norms = free_product_norms(&f2(), 12.0, 2_000_000).unwrap();
        let profile = build_profile(&norms).unwrap();
        assert_eq!(profile.counting(-1e-9), 0);
        for k in 0..=12u32 {
            let expected = 2 * 3u64.pow(k) - 1;
            assert_eq!(profile.counting(f64::from(k)) as u64, expected);
            assert_eq!(profile.counting(f64::from(k) + 0.5) as u64, expected);
        }
        assert_eq!(profile.len() as u64, 2 * 3u64.pow(12) - 1);
    }

    #[test]
    fn identity_only_profile_has_unit_series() {
        let profile = build_profile(&[0.0]).unwrap();
        for s in [0.0, 0.7, 3.0] {
            assert_eq!(profile.sigma(s), 1.0);
        }
        assert!(matches!(
            exponent_estimate(&profile),
            Err(PoincareError::InsufficientRange { .. })
        ));
    }

    #[test]
    fn profile_validation_rejects_bad_streams() {
        assert_eq!(build_profile(&[]), Err(PoincareError::EmptyOrbit));
        assert!(matches!(
            build_profile(&[0.5, 1.0]),
            Err(PoincareError::MissingIdentity { .. })
        ));
        assert!(matches!(
            build_profile(&[0.0, -1.0]),
            Err(PoincareError::BadNorm { .. })
        ));
        assert!(matches!(
            build_profile(&[0.0, f64::NAN]),
            Err(PoincareError::BadNorm { .. })
        ));
    }

    #[test]
    fn sigma_is_the_stieltjes_sum_and_decreases() {
        let norms = [0.0, 1.0, 1.0, 2.5, 4.0];
        let profile = build_profile(&norms).unwrap();
        for s in [0.0, 0.3, 1.1] {
            let direct: f64 = profile.norms().iter().map(|&v| (-s * v).exp()).sum();
            assert_eq!(profile.sigma(s), direct);
        }
        let grid: Vec<f64> = (0..20).map(|i| 0.25 * f64::from(i)).collect();
        for w in grid.windows(2) {
            assert!(profile.sigma(w[1]) < profile.sigma(w[0]));
        }
    }

    #[test]
    fn f2_exponent_estimate_brackets_log3() {
        let norms = free_product_norms(&f2(), 12.0, 2_000_000).unwrap();
        let profile = build_profile(&norms).unwrap();
        let est = exponent_estimate(&profile).unwrap();
        assert_eq!(est.window, (6.0, 12.0));
        assert_eq!(est.points, 7);
        assert!(est.delta_hat > 1.06 && est.delta_hat < 1.13, "{est:?}");
        assert!(est.band < 0.01);
    }

    #[test]
    fn free_product_enumeration_respects_its_budget() {
        assert_eq!(
            free_product_norms(&f2(), 12.0, 1000),
            Err(PoincareError::BudgetExceeded { budget: 1000 })
        );
    }

    #[test]
    fn translation_norms_match_the_poincare_extension() {
        let orbit = parabolic_translation_norms(1, 6.0, 10_000).unwrap();
        // Direct comparison against the model isometry: extend x -> x + 1
        // from the boundary line and displace the height-1 basepoint.
        let shift = poincare_extension(
            Similarity::new(
                1.0,
                nalgebra::DMatrix::identity(1, 1),
                DVector::from_element(1, 1.0),
            )
            .unwrap(),
        )
        .unwrap();
        let o = ModelPoint::half_space(vec![1.0, 0.0]).unwrap();
        let mut p = o.clone();
        for n in 1..=5u32 {
            p = shift.apply(&p).unwrap();
            let expected = acosh_stable(1.0 + f64::from(n * n) / 2.0);
            assert!((dist(&o, &p).unwrap() - expected).abs() <= crate::tol::EXACT);
            assert_eq!(orbit.profile.counting(expected) as u32, 2 * n + 1);
        }
        assert_eq!(orbit.spec, CayleySpec::FreeAbelian { rank: 1 });
    }

    #[test]
    fn line_orbit_exponent_is_one_half() {
        let orbit = parabolic_translation_norms(1, 14.0, 10_000).unwrap();
        let est = exponent_estimate(&orbit.profile).unwrap();
        assert!(
            (est.delta_hat - 0.5).abs() < 0.03,
            "delta_hat = {}",
            est.delta_hat
        );
    }

    #[test]
    fn plane_orbit_exponent_is_one() {
        let orbit = parabolic_translation_norms(2, 10.0, 200_000).unwrap();
        let est = exponent_estimate(&orbit.profile).unwrap();
        assert!(
            (est.delta_hat - 1.0).abs() < 0.08,
            "delta_hat = {}",
            est.delta_hat
        );
    }

    #[test]
    fn bounded_orbit_reports_insufficient_range() {
        let profile = build_profile(&[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            exponent_estimate(&profile),
            Err(PoincareError::InsufficientRange { .. })
        ));
    }

    /// The 3-regular tree out to the given depth, unit edges, root 0.
    fn three_regular_tree(depth: u32) -> RTree {
        let mut edges = Vec::new();
        let mut next = 1usize;
        let mut ring = vec![0usize];
        for level in 0..depth {
            let mut fresh = Vec::new();
            for &v in &ring {
                let children = if level == 0 { 3 } else { 2 };
                for _ in 0..children {
                    edges.push((v, next, 1.0));
                    fresh.push(next);
                    next += 1;
                }
            }
            ring = fresh;
        }
        RTree::from_edges(next, &edges).unwrap()
    }

    #[test]
    fn vertex_net_of_the_three_regular_tree_has_exponent_log2() {
        let tree = three_regular_tree(9);
        let sample: Vec<TreePos> = (0..tree.n_vertices()).map(TreePos::Vertex).collect();
        let net = modified_exponent(&sample, |a, b| tree.dist(a, b), 1.0).unwrap();
        // Unit-distance vertices are already 1-separated, so nothing drops.
        assert_eq!(net.kept.len(), 1534);
        assert_eq!(net.profile.counting(9.0), 1534);
        assert!(
            (net.delta_hat - 2f64.ln()).abs() < 0.05,
            "delta_hat = {}",
            net.delta_hat
        );
    }

    #[test]
    fn net_bands_for_doubled_separation_overlap() {
        let tree = three_regular_tree(10);
        let sample: Vec<TreePos> = (0..tree.n_vertices()).map(TreePos::Vertex).collect();
        let d = |a: &TreePos, b: &TreePos| tree.dist(a, b);
        let fine = modified_exponent(&sample, d, 1.0).unwrap();
        let coarse = modified_exponent(&sample, d, 2.0).unwrap();
        // The coarse net keeps exactly the even depths: odd vertices sit at
        // distance 1 from a kept parent.
        assert!(coarse.kept.len() < fine.kept.len());
        assert_eq!(coarse.profile.max_norm(), 10.0);
        let lo = (fine.delta_hat - fine.band).max(coarse.delta_hat - coarse.band);
        let hi = (fine.delta_hat + fine.band).min(coarse.delta_hat + coarse.band);
        assert!(lo <= hi, "bands {fine:?} and {coarse:?} do not overlap");
    }

    #[test]
    fn collapsed_word_sample_net_matches_the_profile_exponent() {
        // Stream all strings over the four generators, duplicates included:
        // the 1-separated net collapses them back to the reduced ball, so
        // the net exponent agrees with the plain profile exponent.
        let action = f2();
        let letters: Vec<Word> = [(0usize, 1i64), (0, -1), (1, 1), (1, -1)]
            .iter()
            .map(|&(factor, power)| {
                action
                    .reduce(&[Letter {
                        factor,
                        elem: FactorElem::Power(power),
                    }])
                    .unwrap()
            })
            .collect();
        let mut sample = vec![Word::identity()];
        let mut frontier = vec![Word::identity()];
        for _ in 0..5 {
            let mut next = Vec::new();
            for w in &frontier {
                for l in &letters {
                    next.push(action.mul(w, l));
                }
            }
            sample.extend(next.iter().cloned());
            frontier = next;
        }
        let d = |a: &Word, b: &Word| action.norm(&action.mul(&action.inv(a), b));
        let net = modified_exponent(&sample, d, 1.0).unwrap();
        assert_eq!(net.kept.len() as u64, 2 * 3u64.pow(5) - 1);

        let profile = build_profile(&free_product_norms(&action, 5.0, 100_000).unwrap()).unwrap();
        let est = exponent_estimate(&profile).unwrap();
        let lo = (net.delta_hat - net.band).max(est.delta_hat - est.band);
        let hi = (net.delta_hat + net.band).min(est.delta_hat + est.band);
        assert!(lo <= hi, "net {net:?} vs profile {est:?}");
    }

    #[test]
    fn singleton_net_has_exponent_zero() {
        let tree = three_regular_tree(2);
        let sample: Vec<TreePos> = (0..tree.n_vertices()).map(TreePos::Vertex).collect();
        let net = modified_exponent(&sample, |a, b| tree.dist(a, b), 10.0).unwrap();
        assert_eq!(net.kept, vec![0]);
        assert_eq!(net.delta_hat, 0.0);
        assert_eq!(net.band, 0.0);
    }

    #[test]
    fn net_construction_rejects_bad_inputs() {
        let sample = [0.0f64, 3.0];
        let d = |a: &f64, b: &f64| (a - b).abs();
        assert!(matches!(
            modified_exponent::<f64, _>(&[], d, 1.0),
            Err(PoincareError::EmptyOrbit)
        ));
        assert!(matches!(
            modified_exponent(&sample, d, 0.0),
            Err(PoincareError::BadSeparation { .. })
        ));
        assert!(matches!(
            modified_exponent(&sample, |_: &f64, _: &f64| f64::NAN, 1.0),
            Err(PoincareError::BadNorm { .. })
        ));
    }

    #[test]
    fn z_star_z_exponent_is_log3_divergence_type() {
        let set = schottky_poincare_set(&[
            FactorSeries::Cyclic { step: 1.0 },
            FactorSeries::Cyclic { step: 1.0 },
        ])
        .unwrap();
        assert!((set.delta - 3f64.ln()).abs() <= 1e-10, "{set:?}");
        assert_eq!(set.divergence, Divergence::Divergent);
        assert!(set.gap <= 1e-10);
        assert!(set.to_string().starts_with("[0, ") && set.to_string().ends_with(']'));
    }

    #[test]
    fn identical_cyclic_factors_solve_to_log_2k_minus_1() {
        for k in [3usize, 4] {
            let factors = vec![FactorSeries::Cyclic { step: 1.0 }; k];
            let set = schottky_poincare_set(&factors).unwrap();
            let expected = (2.0 * k as f64 - 1.0).ln();
            assert!((set.delta - expected).abs() <= 1e-10, "k = {k}: {set:?}");
            assert_eq!(set.divergence, Divergence::Divergent);
        }
    }

    #[test]
    fn single_factor_sets_are_the_factor_sets() {
        let z = schottky_poincare_set(&[FactorSeries::Cyclic { step: 2.0 }]).unwrap();
        assert_eq!((z.delta, z.divergence), (0.0, Divergence::Divergent));
        let finite = schottky_poincare_set(&[FactorSeries::Uniform {
            count: 4,
            norm: 1.0,
        }])
        .unwrap();
        assert_eq!(finite.divergence, Divergence::Convergent);
        assert_eq!(finite.to_string(), "[0, 0.000000000000)");
        let tower = schottky_poincare_set(&[FactorSeries::GeometricTower {
            branch: 2,
            step: 1.0,
        }])
        .unwrap();
        assert!((tower.delta - 2f64.ln()).abs() <= 1e-12);
        assert_eq!(tower.divergence, Divergence::Divergent);
    }

    #[test]
    fn products_strictly_beat_their_divergence_type_factors() {
        // Z * Z/2 against the closed-form criterion 2q/(1-q) e^{-s} = 1,
        // solved independently here by bisection on the scalar equation.
        let set = schottky_poincare_set(&[
            FactorSeries::Cyclic { step: 1.0 },
            FactorSeries::Uniform { count: 2, norm: 1.0 },
        ])
        .unwrap();
        let scalar = bisect(
            |s| {
                let q = (-s).exp();
                2.0 * q / (1.0 - q) * q - 1.0
            },
            1e-6,
            50.0,
            1e-12,
        )
        .unwrap();
        assert!((set.delta - scalar).abs() <= 1e-9, "{set:?} vs {scalar}");
        assert!(set.delta > 0.0);

        // Attaching a line to the tower pushes the exponent strictly past
        // the tower's own delta = log 2.
        let tower = FactorSeries::GeometricTower {
            branch: 2,
            step: 1.0,
        };
        let product =
            schottky_poincare_set(&[FactorSeries::Cyclic { step: 1.0 }, tower.clone()]).unwrap();
        let alone = schottky_poincare_set(&[tower]).unwrap();
        assert!(
            product.delta > alone.delta + 0.1,
            "{product:?} vs {alone:?}"
        );
        assert_eq!(product.divergence, Divergence::Divergent);
    }

    #[test]
    fn exact_product_exponent_sits_inside_the_fitted_band() {
        let norms = free_product_norms(&f2(), 12.0, 2_000_000).unwrap();
        let est = exponent_estimate(&build_profile(&norms).unwrap()).unwrap();
        let set = schottky_poincare_set(&[
            FactorSeries::Cyclic { step: 1.0 },
            FactorSeries::Cyclic { step: 1.0 },
        ])
        .unwrap();
        assert!(
            (set.delta - est.delta_hat).abs() <= est.band + 0.05 * set.delta,
            "exact {} vs fitted {est:?}",
            set.delta
        );
    }

    #[test]
    fn tail_bounded_factors_bracket_the_root_but_leave_the_endpoint_open() {
        // The integers again, but listed only out to norm 40, the rest
        // certified by the window bound: two elements per unit window.
        let listed: Vec<f64> = (1..=40).flat_map(|i| [f64::from(i); 2]).collect();
        let z_tail = FactorSeries::TailBounded {
            norms: listed,
            cutoff: 41.0,
            per_window: 2,
            gap: 1.0,
        };
        let set = schottky_poincare_set(&[z_tail.clone(), z_tail]).unwrap();
        assert!((set.delta - 3f64.ln()).abs() <= 1e-6, "{set:?}");
        assert_eq!(set.divergence, Divergence::Undecided);
        assert!(set.gap <= 1e-6);
    }

    #[test]
    fn product_solver_rejects_unknown_series() {
        assert_eq!(schottky_poincare_set(&[]), Err(PoincareError::EmptyProduct));
        assert!(matches!(
            schottky_poincare_set(&[
                FactorSeries::Empirical { norms: vec![1.0] },
                FactorSeries::Cyclic { step: 1.0 },
            ]),
            Err(PoincareError::FactorSeriesUnknown { .. })
        ));
        // Tiny steps push the root past the bracket end.
        assert!(matches!(
            schottky_poincare_set(&[
                FactorSeries::Cyclic { step: 0.01 },
                FactorSeries::Cyclic { step: 0.01 },
            ]),
            Err(PoincareError::FactorSeriesUnknown { .. })
        ));
    }

    #[test]
    fn factor_series_translate_from_action_factors() {
        assert_eq!(
            FactorSeries::from_group(&FactorGroup::Cyclic { r: 1.5 }).unwrap(),
            FactorSeries::Cyclic { step: 1.5 }
        );
        assert_eq!(
            FactorSeries::from_group(&FactorGroup::FiniteCyclic { n: 5, lambda: 2.0 }).unwrap(),
            FactorSeries::Uniform { count: 5, norm: 2.0 }
        );
        let spec = CountingSpec::new(vec![1.0, 2.0], vec![2, 3]).unwrap();
        assert_eq!(
            FactorSeries::from_group(&FactorGroup::Counting(spec)).unwrap(),
            FactorSeries::Finite {
                norms: vec![1.0, 2.0, 2.0, 2.0, 2.0]
            }
        );
    }

    #[test]
    fn plane_growth_degree_is_two() {
        let report = growth_rate(&CayleySpec::FreeAbelian { rank: 2 }, 20, 10_000).unwrap();
        for (r, &size) in report.ball_sizes.iter().enumerate() {
            let r = r as u64;
            assert_eq!(size, 2 * r * r + 2 * r + 1);
        }
        assert!(
            report.alpha_hat > 1.9 && report.alpha_hat < 2.1,
            "alpha_hat = {}",
            report.alpha_hat
        );
    }

    #[test]
    fn heisenberg_growth_degree_is_four() {
        let report = growth_rate(&CayleySpec::Heisenberg, 20, 500_000).unwrap();
        assert_eq!(report.ball_sizes[0], 1);
        assert_eq!(report.ball_sizes[1], 5);
        assert!(report.ball_sizes.windows(2).all(|w| w[0] < w[1]));
        assert!(
            report.alpha_hat > 3.5 && report.alpha_hat < 4.5,
            "alpha_hat = {}",
            report.alpha_hat
        );
    }

    #[test]
    fn degenerate_growth_inputs_are_handled() {
        let trivial = growth_rate(&CayleySpec::FreeAbelian { rank: 0 }, 10, 100).unwrap();
        assert_eq!((trivial.alpha_hat, trivial.band), (0.0, 0.0));
        let torsion = growth_rate(&CayleySpec::Torsion, 10, 100).unwrap();
        assert_eq!((torsion.alpha_hat, torsion.band), (0.0, 0.0));
        assert_eq!(
            growth_rate(&CayleySpec::Heisenberg, 20, 100),
            Err(PoincareError::BudgetExceeded { budget: 100 })
        );
        assert!(matches!(
            growth_rate(&CayleySpec::FreeAbelian { rank: 1 }, 2, 100),
            Err(PoincareError::InsufficientRange { .. })
        ));
    }

    #[test]
    fn line_translations_meet_the_half_growth_bound() {
        let orbit = parabolic_translation_norms(1, 14.0, 10_000).unwrap();
        let growth = growth_rate(&CayleySpec::FreeAbelian { rank: 1 }, 20, 1000).unwrap();
        let check = parabolic_bound_check(&orbit, &growth).unwrap();
        assert!(check.holds, "{check:?}");
        assert!((check.delta_hat - 0.5).abs() < 0.03);
        assert!((check.alpha_hat - 1.0).abs() < 0.1);
    }

    #[test]
    fn plane_translations_meet_the_half_growth_bound() {
        let orbit = parabolic_translation_norms(2, 10.0, 200_000).unwrap();
        let growth = growth_rate(&CayleySpec::FreeAbelian { rank: 2 }, 20, 10_000).unwrap();
        let check = parabolic_bound_check(&orbit, &growth).unwrap();
        assert!(check.holds, "{check:?}");
    }

    #[test]
    fn torsion_orbit_bound_is_trivially_met() {
        let spec = CountingSpec::new((1..=12).map(f64::from).collect(), vec![2; 12]).unwrap();
        let orbit = torsion_orbit_norms(&spec, 10_000).unwrap();
        assert_eq!(orbit.profile.len(), 1 << 12);
        assert_eq!(orbit.profile.counting(5.0), 1 << 5);
        let growth = growth_rate(&CayleySpec::Torsion, 10, 100).unwrap();
        let check = parabolic_bound_check(&orbit, &growth).unwrap();
        assert!(check.holds);
        assert!((check.delta_hat - 2f64.ln()).abs() < 0.05);
    }

    #[test]
    fn mismatched_groups_are_rejected() {
        let orbit = parabolic_translation_norms(1, 10.0, 10_000).unwrap();
        let growth = growth_rate(&CayleySpec::Heisenberg, 12, 100_000).unwrap();
        assert!(matches!(
            parabolic_bound_check(&orbit, &growth),
            Err(PoincareError::MismatchedGroup { .. })
        ));
    }
}
