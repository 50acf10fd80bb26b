//! Rotation-block isometries of a Hilbert space truncation whose orbit of
//! the origin is unbounded while displacements along a subsequence stay
//! small. The n-th power moves the origin by
//! ||g^n(0)||^2 = sum_k 4 b_k^2 sin^2(pi n a_k),
//! evaluated here with the angle reduced mod 1 first so integer multiples
//! contribute exactly zero.

use super::ActionError;
use crate::numeric::acosh_stable;

#[derive(Debug, Clone, PartialEq)]
pub struct EdelsteinSpec {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl EdelsteinSpec {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, ActionError> {
        if a.len() != b.len() {
            return Err(ActionError::BadLetter {
                reason: format!("{} angles vs {} radii", a.len(), b.len()),
            });
        }
        for (k, (&x, &y)) in a.iter().zip(&b).enumerate() {
            if !(x.is_finite() && x > 0.0 && y.is_finite() && y > 0.0) {
                return Err(ActionError::BadLetter {
                    reason: format!("block {k}: angle {x}, radius {y} must be positive"),
                });
            }
        }
        Ok(EdelsteinSpec { a, b })
    }

    /// Angles 2^-k, unit radii, k = 1..=k_max.
    pub fn dyadic(k_max: u32) -> Self {
        let a = (1..=k_max).map(|k| 0.5f64.powi(k as i32)).collect();
        let b = vec![1.0; k_max as usize];
        EdelsteinSpec { a, b }
    }

    /// Angles 1/k!, unit radii, k = 1..=k_max. Computed by running
    /// reciprocal products, so no factorial ever overflows.
    pub fn factorial(k_max: u32) -> Self {
        let mut a = Vec::with_capacity(k_max as usize);
        let mut cur = 1.0;
        for k in 1..=k_max as u64 {
            cur /= k as f64;
            a.push(cur);
        }
        let b = vec![1.0; k_max as usize];
        EdelsteinSpec { a, b }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.a
    }

    /// ||g^n(0)||^2 over the truncation, exact partial sum.
    pub fn displacement_sq(&self, n: u64) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| {
                let x = n as f64 * a;
                let frac = x - x.round();
                let s = (std::f64::consts::PI * frac).sin();
                4.0 * b * b * s * s
            })
            .sum()
    }

    /// Displacement with a certified bound on the omitted blocks, assuming
    /// the products a_k b_k keep shrinking by at least `ratio` < 1 past the
    /// truncation. The bound uses sin^2(x) <= x^2 on the geometric tail.
    pub fn displacement_sq_certified(
        &self,
        n: u64,
        ratio: f64,
        tail_tol: f64,
    ) -> Result<(f64, f64), ActionError> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(ActionError::BadLetter {
                reason: format!("decay ratio {ratio} must lie in [0, 1)"),
            });
        }
        let value = self.displacement_sq(n);
        let (last_a, last_b) = match (self.a.last(), self.b.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0.0, 0.0),
        };
        let first_omitted = std::f64::consts::PI * n as f64 * last_a * last_b * ratio;
        let tail = 4.0 * first_omitted * first_omitted / (1.0 - ratio * ratio);
        if tail > tail_tol {
            return Err(ActionError::TailTooLarge { bound: tail });
        }
        Ok((value, tail))
    }
}

/// The displacement sum at n = k! for the factorial family, where blocks up
/// to k contribute exactly zero: sum_{m > k} 4 sin^2(pi k!/m!). The angle
/// k!/m! is accumulated as a running product of reciprocals.
pub fn factorial_displacement_sq(k: u32, m_max: u32) -> f64 {
    let mut total = 0.0;
    let mut angle = 1.0_f64;
    for m in (k + 1)..=m_max {
        angle /= m as f64;
        let s = (std::f64::consts::PI * angle).sin();
        total += 4.0 * s * s;
    }
    total
}

/// The comparison sum sum_{j = k+1}^{k_max} (2^{k-j})^2 = sum 4^{-m}; the
/// limit over j is exactly 1/3.
pub fn dyadic_comparison_sum(k: u32, k_max: u32) -> f64 {
    let mut total = 0.0;
    for j in (k + 1)..=k_max {
        let term = 0.5f64.powi((j - k) as i32);
        total += term * term;
    }
    total
}

/// sum_j dist(n a_j, Z)^2: the squared distances of the rotated angles to
/// the nearest integer.
pub fn dist_to_int_sq_sum(a: &[f64], n: u64) -> f64 {
    a.iter()
        .map(|&a| {
            let x = n as f64 * a;
            let d = x - x.round();
            d * d
        })
        .sum()
}

/// Hyperbolic displacement of the half-space extension: with the origin
/// moved by squared distance d2 on the boundary, the lifted isometry moves
/// the basepoint by acosh(1 + d2/2).
pub fn hyperbolic_displacement_from_sq(d2: f64) -> f64 {
    acosh_stable(1.0 + 0.5 * d2)
}
