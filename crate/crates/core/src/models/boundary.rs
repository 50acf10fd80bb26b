//! Boundary points of the models and the Busemann cocycle.
//!
//! A boundary point is a ray class in the null cone of Q. Charts:
//! unit direction vectors for the hyperboloid and the ball (the class of
//! (1, u)), and for the half-space either a point of R^{n-1} (the class of
//! ((1 + |v|^2) / 2, (1 - |v|^2) / 2, v)) or the point at infinity (the
//! class of (1, -1, 0, ..., 0)).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{bilinear_q, Model, ModelError, ModelPoint};
use crate::tol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRep {
    Infinity,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub model: Model,
    pub rep: BoundaryRep,
}

impl BoundaryPoint {
    /// Boundary point of the ball or hyperboloid given by a unit direction.
    pub fn from_direction(model: Model, u: Vec<f64>) -> Result<Self, ModelError> {
        if model == Model::HalfSpace {
            return Err(ModelError::ModelMismatch {
                expected: "ball or hyperboloid".into(),
                got: "half-space".into(),
            });
        }
        let b = BoundaryPoint {
            model,
            rep: BoundaryRep::Vector(u),
        };
        b.validate()?;
        Ok(b)
    }

    /// Finite boundary point of the half-space, a point of R^{n-1}.
    pub fn half_space_finite(v: Vec<f64>) -> Result<Self, ModelError> {
        let b = BoundaryPoint {
            model: Model::HalfSpace,
            rep: BoundaryRep::Vector(v),
        };
        b.validate()?;
        Ok(b)
    }

    /// The point at infinity of the half-space.
    pub fn half_space_infinity(n: usize) -> Result<Self, ModelError> {
        super::check_dim_pub(n)?;
        Ok(BoundaryPoint {
            model: Model::HalfSpace,
            rep: BoundaryRep::Infinity,
        })
    }

    /// Hyperbolic dimension of the ambient space, when recoverable from the
    /// representation (the half-space infinity carries no dimension).
    pub fn dim(&self) -> Option<usize> {
        match (&self.model, &self.rep) {
            (Model::HalfSpace, BoundaryRep::Vector(v)) => Some(v.len() + 1),
            (Model::HalfSpace, BoundaryRep::Infinity) => None,
            (_, BoundaryRep::Vector(v)) => Some(v.len()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (&self.model, &self.rep) {
            (Model::HalfSpace, BoundaryRep::Infinity) => Ok(()),
            (Model::HalfSpace, BoundaryRep::Vector(v)) => {
                if v.iter().any(|c| !c.is_finite()) {
                    return Err(ModelError::InvalidPoint {
                        reason: "non-finite boundary coordinate".into(),
                    });
                }
                super::check_dim_pub(v.len() + 1)
            }
            (_, BoundaryRep::Infinity) => Err(ModelError::InvalidPoint {
                reason: format!("{} has no distinguished infinity", self.model),
            }),
            (_, BoundaryRep::Vector(u)) => {
                if u.iter().any(|c| !c.is_finite()) {
                    return Err(ModelError::InvalidPoint {
                        reason: "non-finite boundary coordinate".into(),
                    });
                }
                super::check_dim_pub(u.len())?;
                let r2: f64 = u.iter().map(|c| c * c).sum();
                if (r2 - 1.0).abs() > tol::EXACT {
                    return Err(ModelError::InvalidPoint {
                        reason: format!("boundary direction has |u|^2 = {r2}, expected 1"),
                    });
                }
                Ok(())
            }
        }
    }

    /// A null vector over this boundary point (first coordinate positive).
    /// The scale is the chart's defining section; Busemann and product
    /// formulas divide scales out, so any representative would do.
    pub fn null_lift(&self) -> Result<DVector<f64>, ModelError> {
        self.validate()?;
        match (&self.model, &self.rep) {
            (Model::HalfSpace, BoundaryRep::Infinity) => Err(ModelError::Degenerate {
                reason: "lifting infinity needs a dimension; use null_lift_dim".into(),
            }),
            (Model::HalfSpace, BoundaryRep::Vector(v)) => {
                let r2: f64 = v.iter().map(|c| c * c).sum();
                let mut w = DVector::zeros(v.len() + 2);
                w[0] = (1.0 + r2) / 2.0;
                w[1] = (1.0 - r2) / 2.0;
                for (i, c) in v.iter().enumerate() {
                    w[i + 2] = *c;
                }
                Ok(w)
            }
            (_, BoundaryRep::Vector(u)) => {
                let mut w = DVector::zeros(u.len() + 1);
                w[0] = 1.0;
                for (i, c) in u.iter().enumerate() {
                    w[i + 1] = *c;
                }
                Ok(w)
            }
            _ => unreachable!("validate rejects other combinations"),
        }
    }

    /// Null lift with the ambient dimension supplied, so the half-space
    /// infinity can be lifted too.
    pub fn null_lift_dim(&self, n: usize) -> Result<DVector<f64>, ModelError> {
        if let (Model::HalfSpace, BoundaryRep::Infinity) = (&self.model, &self.rep) {
            super::check_dim_pub(n)?;
            let mut w = DVector::zeros(n + 1);
            w[0] = 1.0;
            w[1] = -1.0;
            return Ok(w);
        }
        let w = self.null_lift()?;
        if w.len() != n + 1 {
            return Err(ModelError::ModelMismatch {
                expected: format!("boundary point of dimension {n}"),
                got: format!("dimension {}", w.len() - 1),
            });
        }
        Ok(w)
    }

    /// Rebuilds a boundary point of `model` from a vector in (or numerically
    /// near) the null cone.
    pub fn from_null(model: Model, v: &DVector<f64>) -> Result<Self, ModelError> {
        let scale2: f64 = v.iter().map(|c| c * c).sum();
        if scale2 <= 0.0 {
            return Err(ModelError::Degenerate {
                reason: "zero vector has no boundary class".into(),
            });
        }
        let q = bilinear_q(v, v);
        if q.abs() > tol::FITTED * scale2 {
            return Err(ModelError::InvalidPoint {
                reason: format!("vector is not null: Q/|v|^2 = {}", q / scale2),
            });
        }
        let w = if v[0] < 0.0 { -v.clone() } else { v.clone() };
        match model {
            Model::Hyperboloid | Model::Ball => {
                let mut u: Vec<f64> = (1..w.len()).map(|i| w[i] / w[0]).collect();
                // Renormalize the direction to kill the residual of the null
                // constraint.
                let r = u.iter().map(|c| c * c).sum::<f64>().sqrt();
                for c in &mut u {
                    *c /= r;
                }
                BoundaryPoint::from_direction(model, u)
            }
            Model::HalfSpace => {
                let s = w[0] + w[1];
                if s.abs() <= tol::EXACT * w[0].abs() {
                    return Ok(BoundaryPoint {
                        model,
                        rep: BoundaryRep::Infinity,
                    });
                }
                if s < 0.0 {
                    return Err(ModelError::InvalidPoint {
                        reason: "null vector lies outside the upper light cone".into(),
                    });
                }
                let v: Vec<f64> = (2..w.len()).map(|i| w[i] / s).collect();
                BoundaryPoint::half_space_finite(v)
            }
        }
    }

    /// Chart-level closeness of two boundary points, measured on normalized
    /// null lifts; used by fixed-point checks.
    pub fn chart_close(&self, other: &BoundaryPoint, n: usize, tol: f64) -> bool {
        let (Ok(a), Ok(b)) = (self.null_lift_dim(n), other.null_lift_dim(n)) else {
            return false;
        };
        let a = &a / a.norm();
        let b = &b / b.norm();
        (&a - &b).norm() <= tol
    }
}

/// Converts a boundary point to another model's chart through the null cone.
pub fn convert_boundary(
    b: &BoundaryPoint,
    target: Model,
    n: usize,
) -> Result<BoundaryPoint, ModelError> {
    let v = b.null_lift_dim(n)?;
    BoundaryPoint::from_null(target, &v)
}

/// The Busemann cocycle beta_xi(x, y): the renormalized difference
/// d(x, xi) - d(y, xi). Positive when x sits farther from xi than y.
/// Computed as log |B(xi, x)| - log |B(xi, y)| on lifts, which is
/// independent of the null representative.
pub fn busemann(
    xi: &BoundaryPoint,
    x: &ModelPoint,
    y: &ModelPoint,
) -> Result<f64, ModelError> {
    if x.model != y.model || x.dim() != y.dim() {
        return Err(ModelError::ModelMismatch {
            expected: format!("{} (n = {})", x.model, x.dim()),
            got: format!("{} (n = {})", y.model, y.dim()),
        });
    }
    if xi.model != x.model {
        return Err(ModelError::ModelMismatch {
            expected: format!("{} boundary point", x.model),
            got: format!("{} boundary point", xi.model),
        });
    }
    x.validate()?;
    y.validate()?;
    let n = x.dim();
    let w = xi.null_lift_dim(n)?;
    let bx = bilinear_q(&w, &x.lift()).abs();
    let by = bilinear_q(&w, &y.lift()).abs();
    if bx <= 0.0 || by <= 0.0 {
        return Err(ModelError::Degenerate {
            reason: "point pairs with the boundary lift to zero".into(),
        });
    }
    Ok(bx.ln() - by.ln())
}

/// Busemann cocycle at the point at infinity of the half-space:
/// beta_inf(x, y) = -log(x_1 / y_1).
pub fn busemann_halfspace(x: &ModelPoint, y: &ModelPoint) -> Result<f64, ModelError> {
    if x.model != Model::HalfSpace {
        return Err(ModelError::ModelMismatch {
            expected: "half-space".into(),
            got: x.model.to_string(),
        });
    }
    let inf = BoundaryPoint {
        model: Model::HalfSpace,
        rep: BoundaryRep::Infinity,
    };
    busemann(&inf, x, y)
}
