//! Evidence-carrying classification of single isometries, plus symbolic
//! coding of boundary points for free-product tree actions.
//!
//! Classification with a finite budget cannot prove a trichotomy, so each
//! outcome carries the evidence that justified it (orbit bounds, fixed
//! vectors, drift of the displacement sequence) and ambiguous data comes
//! back as an explicit inconclusive error instead of a guess.

use super::{ActionError, Letter, SchottkyAction, Word};
use crate::models::{
    bilinear_q, busemann, dist, BoundaryPoint, LorentzMap, Model, ModelPoint,
};
use crate::numeric::acosh_stable;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub enum IsometryClass {
    /// Bounded orbit with a fixed interior point.
    Elliptic {
        fixed_point: ModelPoint,
        orbit_bound: f64,
    },
    /// Single neutral fixed direction on the boundary.
    Parabolic {
        fixed: BoundaryPoint,
        derivative: f64,
    },
    /// North-south dynamics with positive translation length.
    Loxodromic {
        length: f64,
        attracting: BoundaryPoint,
        repelling: BoundaryPoint,
        /// max_n |d(o, g^n o) - n length| over the sampled budget.
        max_drift: f64,
    },
}

fn inconclusive<T>(reason: impl Into<String>) -> Result<T, ActionError> {
    Err(ActionError::Inconclusive {
        reason: reason.into(),
    })
}

/// Dominant invariant direction of M, found by repeated squaring with
/// renormalization; robust even when the spectral gap is small.
fn dominant_direction(m: &DMatrix<f64>) -> DVector<f64> {
    let mut p = m.clone();
    let scale = p.amax();
    if scale > 0.0 {
        p /= scale;
    }
    for _ in 0..40 {
        p = &p * &p;
        let s = p.amax();
        if !(s.is_finite() && s > 0.0) {
            break;
        }
        p /= s;
    }
    let n = m.nrows();
    let mut seed = DVector::zeros(n);
    seed[0] = 1.0;
    let mut u = &p * seed;
    // One exact power step polishes the direction.
    u = m * u;
    let s = u.amax();
    if s > 0.0 {
        u /= s;
    }
    u
}

/// Classifies a Lorentz map by spectral data, with dynamical evidence
/// gathered from the orbit of the basepoint over at most `n_max` steps.
pub fn classify_lorentz(
    map: &LorentzMap,
    n_max: usize,
) -> Result<IsometryClass, ActionError> {
    map.check()
        .map_err(|e| ActionError::Inconclusive {
            reason: format!("not a Lorentz map: {e}"),
        })?;
    let m = map.mat.nrows();
    let n = m - 1;
    let o = ModelPoint::base(Model::Hyperboloid, n);
    let o_lift = o.lift();

    // Orbit displacements d_k = d(o, g^k o), stopped before overflow. No
    // renormalization: evaluating Q(v, v) on a grown orbit vector cancels
    // catastrophically, while -Q(o, v) = v[0] is cancellation-free and the
    // matrix action keeps relative errors small.
    let mut displacements = Vec::with_capacity(n_max);
    let mut v = o_lift.clone();
    for _ in 0..n_max.max(4) {
        v = &map.mat * v;
        let d = acosh_stable(-bilinear_q(&o_lift, &v));
        displacements.push(d);
        if d > 250.0 {
            break;
        }
    }

    let eigs = map.mat.complex_eigenvalues();
    let rho = eigs.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    let length = rho.ln();

    // Neutral eigenvalues of a parabolic sit in a Jordan block, where
    // numerical eigenvalues scatter by roughly the cube root of machine
    // precision; the loxodromic gate has to clear that scatter.
    if length > 1e-4 {
        let att = dominant_direction(&map.mat);
        let rep = dominant_direction(&map.inverse().mat);
        let attracting = BoundaryPoint::from_null(Model::Hyperboloid, &att)
            .map_err(|e| ActionError::Inconclusive {
                reason: format!("attracting direction is not null: {e}"),
            })?;
        let repelling = BoundaryPoint::from_null(Model::Hyperboloid, &rep)
            .map_err(|e| ActionError::Inconclusive {
                reason: format!("repelling direction is not null: {e}"),
            })?;
        // The direction must actually be stretched by e^length.
        let image = &map.mat * &att;
        let factor = image.amax() / att.amax();
        if (factor.ln() - length).abs() > 1e-6 * (1.0 + length) {
            return inconclusive(format!(
                "axis direction stretched by {factor}, spectral radius {rho}"
            ));
        }
        let max_drift = displacements
            .iter()
            .enumerate()
            .map(|(i, d)| (d - (i + 1) as f64 * length).abs())
            .fold(0.0_f64, f64::max);
        return Ok(IsometryClass::Loxodromic {
            length,
            attracting,
            repelling,
            max_drift,
        });
    }

    // Neutral case: look for fixed directions in the kernel of M - I.
    let k = &map.mat - DMatrix::identity(m, m);
    let svd = k.svd(false, true);
    let smax = svd.singular_values.amax().max(1.0);
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= 1e-8 * smax {
            basis.push(v_t.row(i).transpose());
        }
    }
    if basis.is_empty() {
        return inconclusive("no fixed direction; translation length below resolution");
    }
    // Signature of the bilinear form restricted to the fixed space.
    let kdim = basis.len();
    let mut gram = DMatrix::zeros(kdim, kdim);
    for i in 0..kdim {
        for j in 0..kdim {
            gram[(i, j)] = bilinear_q(&basis[i], &basis[j]);
        }
    }
    let sym = nalgebra::SymmetricEigen::new(gram);
    let mut min_idx = 0;
    for i in 0..kdim {
        if sym.eigenvalues[i] < sym.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let combo = |idx: usize| -> DVector<f64> {
        let mut w = DVector::zeros(m);
        for i in 0..kdim {
            w += sym.eigenvectors[(i, idx)] * &basis[i];
        }
        w
    };
    if sym.eigenvalues[min_idx] < -1e-6 {
        // Timelike fixed vector: an interior fixed point.
        let mut w = combo(min_idx);
        let q = bilinear_q(&w, &w);
        w /= (-q).sqrt();
        if w[0] < 0.0 {
            w = -w;
        }
        let fixed_point = ModelPoint::from_lift(Model::Hyperboloid, &w)
            .map_err(|e| ActionError::Inconclusive {
                reason: format!("fixed vector does not normalize: {e}"),
            })?;
        let moved = map
            .apply(&fixed_point)
            .and_then(|img| dist(&img, &fixed_point))
            .map_err(|e| ActionError::Inconclusive {
                reason: format!("fixed point check failed: {e}"),
            })?;
        if moved > 1e-6 {
            return inconclusive(format!("candidate fixed point moves by {moved}"));
        }
        let orbit_bound = displacements.iter().fold(0.0_f64, |a, &b| a.max(b));
        return Ok(IsometryClass::Elliptic {
            fixed_point,
            orbit_bound,
        });
    }
    // Otherwise look for a null fixed direction.
    let mut best: Option<(f64, usize)> = None;
    for i in 0..kdim {
        let a = sym.eigenvalues[i].abs();
        if best.map_or(true, |(ba, _)| a < ba) {
            best = Some((a, i));
        }
    }
    let (a, idx) = best.unwrap();
    if a > 1e-6 {
        return inconclusive("fixed space carries no null or timelike direction");
    }
    let w = combo(idx);
    let fixed = BoundaryPoint::from_null(Model::Hyperboloid, &w).map_err(|e| {
        ActionError::Inconclusive {
            reason: format!("neutral direction is not null: {e}"),
        }
    })?;
    let g_inv_o = map
        .inverse()
        .apply(&o)
        .map_err(|e| ActionError::Inconclusive {
            reason: format!("orbit step failed: {e}"),
        })?;
    let beta = busemann(&fixed, &g_inv_o, &o).map_err(|e| ActionError::Inconclusive {
        reason: format!("Busemann evaluation failed: {e}"),
    })?;
    let derivative = (-beta).exp();
    if (derivative - 1.0).abs() > 1e-6 {
        return inconclusive(format!(
            "boundary derivative {derivative} at the fixed direction is not neutral"
        ));
    }
    Ok(IsometryClass::Parabolic { fixed, derivative })
}

/// Classification of a reduced word acting on its orbit tree. Exact: the
/// word is conjugated into cyclically reduced form; a torsion core fixes a
/// point, anything else translates by the norm of the core.
#[derive(Debug, Clone, PartialEq)]
pub enum WordClass {
    Elliptic { conjugator: Word, core: Word },
    Loxodromic {
        length: f64,
        conjugator: Word,
        core: Word,
    },
}

pub fn classify_word(action: &SchottkyAction, w: &Word) -> Result<WordClass, ActionError> {
    for l in w.letters() {
        action.check_letter(l)?;
    }
    let mut core: Vec<Letter> = w.letters().to_vec();
    let mut conjugator = Word::identity();
    while core.len() >= 2 && core[0].factor == core[core.len() - 1].factor {
        let first = core.remove(0);
        conjugator = action.mul(
            &conjugator,
            &Word {
                letters: vec![first.clone()],
            },
        );
        core.push(first);
        core = action.reduce(&core)?.letters().to_vec();
    }
    let core = Word { letters: core };
    let torsion_core = match core.letters() {
        [] => true,
        [l] => action.factors[l.factor].is_torsion(&l.elem),
        _ => false,
    };
    if torsion_core {
        Ok(WordClass::Elliptic { conjugator, core })
    } else {
        Ok(WordClass::Loxodromic {
            length: action.norm(&core),
            conjugator,
            core,
        })
    }
}

/// Result of following a symbolic address toward the boundary: the orbit
/// point of the prefix approximates the coded limit point to within
/// `radius` in the visual metric at the basepoint.
#[derive(Debug, Clone)]
pub struct CodedLimit {
    pub prefix: Word,
    pub prefix_norm: f64,
    /// C * exp(-prefix_norm) with the fitted C below.
    pub radius: f64,
    /// Largest cylinder-diameter inflation observed among continuation
    /// pairs, fitted over letters of norm at most the reported cap.
    pub c_fitted: f64,
    pub letter_cap: f64,
}

pub fn coding_limit_point(
    action: &SchottkyAction,
    address: &[Letter],
    depth: usize,
    letter_cap: f64,
) -> Result<CodedLimit, ActionError> {
    if depth > address.len() {
        return Err(ActionError::BadLetter {
            reason: format!("depth {depth} exceeds address length {}", address.len()),
        });
    }
    let as_written = address.len();
    let reduced_full = action.reduce(address)?;
    if reduced_full.len() != as_written {
        return Err(ActionError::BadLetter {
            reason: "address must be a reduced letter sequence".into(),
        });
    }
    let prefix = action.reduce(&address[..depth])?;
    let prefix_norm = action.norm(&prefix);
    // Cylinder diameters scale like exp(-norm) times a bonus picked up when
    // two continuations share an extra-long meet inside one factor.
    let mut max_bonus = 0.0_f64;
    let excluded = prefix.letters().last().map(|l| l.factor);
    for (fi, g) in action.factors.iter().enumerate() {
        if Some(fi) == excluded {
            continue;
        }
        let elems = g.elems_up_to(letter_cap, 64);
        for i in 0..elems.len() {
            for j in (i + 1)..elems.len() {
                let cross = g.mul(&g.inv(&elems[i]), &elems[j]);
                let cross_norm = cross.map_or(0.0, |e| g.norm(&e));
                let bonus = 0.5 * (g.norm(&elems[i]) + g.norm(&elems[j]) - cross_norm);
                max_bonus = max_bonus.max(bonus);
            }
        }
    }
    let c_fitted = max_bonus.exp();
    Ok(CodedLimit {
        radius: c_fitted * (-prefix_norm).exp(),
        prefix,
        prefix_norm,
        c_fitted,
        letter_cap,
    })
}
