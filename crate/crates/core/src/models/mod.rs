//! Coordinate models of hyperbolic n-space and conversions between them.
//!
//! Three charts are supported:
//!
//! * `Hyperboloid`: vectors x in R^{n+1} with Q(x) = -x_0^2 + sum x_i^2 = -1
//!   and x_0 > 0. Distance: cosh d(x, y) = -B(x, y) where B is the bilinear
//!   form polarizing Q.
//! * `Ball` (projective disc): x in R^n with |x| < 1, obtained from the
//!   hyperboloid by the section x -> (1, x) / sqrt(1 - |x|^2). Distance:
//!   cosh d(x, y) = (1 - <x, y>) / sqrt((1 - |x|^2)(1 - |y|^2)). Geodesics
//!   are straight chords.
//! * `HalfSpace`: x in R^n with x_1 > 0 (the first coordinate is the
//!   height). Distance: cosh d(x, y) = 1 + |x - y|^2 / (2 x_1 y_1).
//!
//! All conversions go through the hyperboloid: every model is a section of
//! the projectivized negative cone of Q, so a point is represented by the
//! unique Q-normalized vector (Q = -1, x_0 > 0) over it. This makes the
//! conversion maps isometries by construction and keeps boundary handling
//! (null vectors) uniform.

mod boundary;
mod isometry;

pub use boundary::{busemann, busemann_halfspace, convert_boundary, BoundaryPoint, BoundaryRep};
pub use isometry::{poincare_extension, HalfSpaceMap, LorentzMap, Similarity};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::numeric::acosh_stable;
use crate::tol;

/// Smallest supported dimension of the hyperbolic space.
pub const MIN_DIM: usize = 2;
/// Largest supported dimension of the hyperbolic space.
pub const MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Hyperboloid,
    Ball,
    HalfSpace,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::Hyperboloid => write!(f, "hyperboloid"),
            Model::Ball => write!(f, "ball"),
            Model::HalfSpace => write!(f, "half-space"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// Operands live in different models or dimensions.
    ModelMismatch { expected: String, got: String },
    /// Coordinates violate the defining constraint of the model.
    InvalidPoint { reason: String },
    /// A construction degenerates (coincident points, null normalization,
    /// non-isometric matrix data).
    Degenerate { reason: String },
    /// A numeric parameter leaves its validated range.
    OutOfRange { what: String, value: f64 },
    /// A coordinate axis index outside 1..=n.
    BadAxis { axis: usize, dim: usize },
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::ModelMismatch { expected, got } => {
                write!(f, "model mismatch: expected {expected}, got {got}")
            }
            ModelError::InvalidPoint { reason } => write!(f, "invalid point: {reason}"),
            ModelError::Degenerate { reason } => write!(f, "degenerate input: {reason}"),
            ModelError::OutOfRange { what, value } => {
                write!(f, "{what} out of range: {value}")
            }
            ModelError::BadAxis { axis, dim } => {
                write!(f, "axis {axis} invalid for dimension {dim} (need 1..={dim})")
            }
        }
    }
}

impl std::error::Error for ModelError {}

/// A point of hyperbolic n-space in one of the coordinate models.
///
/// `coords` has length n+1 for the hyperboloid and n otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub model: Model,
    pub coords: Vec<f64>,
}

/// The bilinear form B(x, y) = -x_0 y_0 + sum_{i >= 1} x_i y_i on R^{n+1}.
pub fn bilinear_q(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut s = -x[0] * y[0];
    for i in 1..x.len() {
        s += x[i] * y[i];
    }
    s
}

fn check_dim(n: usize) -> Result<(), ModelError> {
    if !(MIN_DIM..=MAX_DIM).contains(&n) {
        return Err(ModelError::OutOfRange {
            what: format!("dimension (supported {MIN_DIM}..={MAX_DIM})"),
            value: n as f64,
        });
    }
    Ok(())
}

pub(crate) fn check_dim_pub(n: usize) -> Result<(), ModelError> {
    check_dim(n)
}

impl ModelPoint {
    pub fn new(model: Model, coords: Vec<f64>) -> Result<Self, ModelError> {
        let p = ModelPoint { model, coords };
        p.validate()?;
        Ok(p)
    }

    pub fn hyperboloid(coords: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(Model::Hyperboloid, coords)
    }

    pub fn ball(coords: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(Model::Ball, coords)
    }

    pub fn half_space(coords: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(Model::HalfSpace, coords)
    }

    /// The distinguished basepoint of each model: apex (1, 0, ..., 0) of the
    /// hyperboloid, the origin of the ball, the height-1 point of the
    /// half-space.
    pub fn base(model: Model, n: usize) -> Self {
        match model {
            Model::Hyperboloid => {
                let mut c = vec![0.0; n + 1];
                c[0] = 1.0;
                ModelPoint { model, coords: c }
            }
            Model::Ball => ModelPoint {
                model,
                coords: vec![0.0; n],
            },
            Model::HalfSpace => {
                let mut c = vec![0.0; n];
                c[0] = 1.0;
                ModelPoint { model, coords: c }
            }
        }
    }

    /// Hyperbolic dimension n regardless of the chart.
    pub fn dim(&self) -> usize {
        match self.model {
            Model::Hyperboloid => self.coords.len().saturating_sub(1),
            _ => self.coords.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.dim();
        check_dim(n)?;
        if self.coords.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidPoint {
                reason: "non-finite coordinate".into(),
            });
        }
        match self.model {
            Model::Hyperboloid => {
                let v = DVector::from_column_slice(&self.coords);
                let q = bilinear_q(&v, &v);
                if (q + 1.0).abs() > tol::EXACT {
                    return Err(ModelError::InvalidPoint {
                        reason: format!("Q(x) = {q}, expected -1"),
                    });
                }
                if self.coords[0] <= 0.0 {
                    return Err(ModelError::InvalidPoint {
                        reason: "x_0 must be positive (upper sheet)".into(),
                    });
                }
            }
            Model::Ball => {
                let r2: f64 = self.coords.iter().map(|c| c * c).sum();
                if r2 >= 1.0 {
                    return Err(ModelError::InvalidPoint {
                        reason: format!("|x|^2 = {r2}, expected < 1"),
                    });
                }
            }
            Model::HalfSpace => {
                if self.coords[0] <= 0.0 {
                    return Err(ModelError::InvalidPoint {
                        reason: format!("height x_1 = {}, expected > 0", self.coords[0]),
                    });
                }
            }
        }
        Ok(())
    }

    /// The Q-normalized hyperboloid vector over this point.
    pub fn lift(&self) -> DVector<f64> {
        match self.model {
            Model::Hyperboloid => DVector::from_column_slice(&self.coords),
            Model::Ball => {
                let r2: f64 = self.coords.iter().map(|c| c * c).sum();
                let s = 1.0 / (1.0 - r2).sqrt();
                let mut v = DVector::zeros(self.coords.len() + 1);
                v[0] = s;
                for (i, c) in self.coords.iter().enumerate() {
                    v[i + 1] = s * c;
                }
                v
            }
            Model::HalfSpace => {
                // Inverse of the paraboloid section: the class of
                // ((1 + |x|^2) / (2 x_1), (1 - |x|^2) / (2 x_1), x_2 / x_1, ...).
                let h = self.coords[0];
                let norm2: f64 = self.coords.iter().map(|c| c * c).sum();
                let mut v = DVector::zeros(self.coords.len() + 1);
                v[0] = (1.0 + norm2) / (2.0 * h);
                v[1] = (1.0 - norm2) / (2.0 * h);
                for i in 1..self.coords.len() {
                    v[i + 1] = self.coords[i] / h;
                }
                v
            }
        }
    }

    /// Rebuilds a point of `model` from a vector in the negative cone of Q.
    /// The vector is renormalized, so images under Lorentz maps can be fed
    /// back directly.
    pub fn from_lift(model: Model, v: &DVector<f64>) -> Result<Self, ModelError> {
        let q = bilinear_q(v, v);
        if q >= 0.0 {
            return Err(ModelError::InvalidPoint {
                reason: format!("lift has Q = {q}, expected negative"),
            });
        }
        let w = v / (-q).sqrt();
        let w = if w[0] < 0.0 { -w } else { w };
        match model {
            Model::Hyperboloid => ModelPoint::new(model, w.iter().copied().collect()),
            Model::Ball => {
                let coords: Vec<f64> = (1..w.len()).map(|i| w[i] / w[0]).collect();
                ModelPoint::new(model, coords)
            }
            Model::HalfSpace => {
                let s = w[0] + w[1];
                if s <= 0.0 {
                    return Err(ModelError::Degenerate {
                        reason: "lift lies over the point at infinity of the half-space".into(),
                    });
                }
                let mut coords = vec![0.0; w.len() - 1];
                coords[0] = 1.0 / s;
                for i in 2..w.len() {
                    coords[i - 1] = w[i] / s;
                }
                ModelPoint::new(model, coords)
            }
        }
    }
}

fn same_chart(p: &ModelPoint, q: &ModelPoint) -> Result<(), ModelError> {
    if p.model != q.model || p.dim() != q.dim() {
        return Err(ModelError::ModelMismatch {
            expected: format!("{} (n = {})", p.model, p.dim()),
            got: format!("{} (n = {})", q.model, q.dim()),
        });
    }
    Ok(())
}

/// Hyperbolic distance, computed by the closed form native to the chart.
pub fn dist(p: &ModelPoint, q: &ModelPoint) -> Result<f64, ModelError> {
    same_chart(p, q)?;
    p.validate()?;
    q.validate()?;
    let c = match p.model {
        Model::Hyperboloid => {
            let x = DVector::from_column_slice(&p.coords);
            let y = DVector::from_column_slice(&q.coords);
            -bilinear_q(&x, &y)
        }
        Model::Ball => {
            let dot: f64 = p.coords.iter().zip(&q.coords).map(|(a, b)| a * b).sum();
            let rp: f64 = 1.0 - p.coords.iter().map(|c| c * c).sum::<f64>();
            let rq: f64 = 1.0 - q.coords.iter().map(|c| c * c).sum::<f64>();
            (1.0 - dot) / (rp * rq).sqrt()
        }
        Model::HalfSpace => {
            let d2: f64 = p
                .coords
                .iter()
                .zip(&q.coords)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            1.0 + d2 / (2.0 * p.coords[0] * q.coords[0])
        }
    };
    let d = acosh_stable(c);
    if d.is_nan() {
        return Err(ModelError::Degenerate {
            reason: format!("cosh distance evaluated to {c} < 1"),
        });
    }
    Ok(d)
}

/// Converts a point to another model through the hyperboloid section.
pub fn convert(p: &ModelPoint, target: Model) -> Result<ModelPoint, ModelError> {
    p.validate()?;
    if p.model == target {
        return Ok(p.clone());
    }
    ModelPoint::from_lift(target, &p.lift())
}

/// The point at arclength t on the unit-speed geodesic from p through q,
/// returned in p's model. Negative t walks backwards; t past d(p, q)
/// continues beyond q.
pub fn geodesic_point(p: &ModelPoint, q: &ModelPoint, t: f64) -> Result<ModelPoint, ModelError> {
    same_chart(p, q)?;
    p.validate()?;
    q.validate()?;
    if !t.is_finite() || t.abs() > 700.0 {
        // cosh overflows past ~710; stay comfortably below.
        return Err(ModelError::OutOfRange {
            what: "geodesic parameter".into(),
            value: t,
        });
    }
    let z = p.lift();
    let y = q.lift();
    let c = -bilinear_q(&z, &y); // cosh d(p, q)
    if c - 1.0 < tol::IDENTITY {
        return Err(ModelError::Degenerate {
            reason: "coincident endpoints give no geodesic direction".into(),
        });
    }
    // Unit tangent at p toward q: w = (y - c z) / sqrt(c^2 - 1), which
    // satisfies Q(w) = 1 and B(z, w) = 0.
    let w = (&y - &z * c) / (c * c - 1.0).sqrt();
    let x = &z * t.cosh() + &w * t.sinh();
    ModelPoint::from_lift(p.model, &x)
}
