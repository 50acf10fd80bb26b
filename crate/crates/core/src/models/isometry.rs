//! Isometries of the models: Lorentz matrices on the hyperboloid and
//! Poincare extensions of boundary similarities on the half-space.

use nalgebra::{DMatrix, DVector};

use super::{bilinear_q, BoundaryPoint, BoundaryRep, Model, ModelError, ModelPoint};
use crate::tol;

fn minkowski_j(m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::identity(m, m);
    j[(0, 0)] = -1.0;
    j
}

/// A linear isometry of the hyperboloid model: a matrix M with M^T J M = J
/// preserving the upper sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzMap {
    pub mat: DMatrix<f64>,
}

impl LorentzMap {
    pub fn identity(n: usize) -> Self {
        LorentzMap {
            mat: DMatrix::identity(n + 1, n + 1),
        }
    }

    /// Hyperbolic translation by t along the coordinate axis `axis`
    /// (1-based among the spatial coordinates):
    /// x_0' = cosh(t) x_0 + sinh(t) x_axis, x_axis' = sinh(t) x_0 + cosh(t) x_axis.
    pub fn boost(axis: usize, t: f64, n: usize) -> Result<Self, ModelError> {
        if axis == 0 || axis > n {
            return Err(ModelError::BadAxis { axis, dim: n });
        }
        if !t.is_finite() || t.abs() > 700.0 {
            return Err(ModelError::OutOfRange {
                what: "boost parameter".into(),
                value: t,
            });
        }
        let mut m = DMatrix::identity(n + 1, n + 1);
        m[(0, 0)] = t.cosh();
        m[(axis, axis)] = t.cosh();
        m[(0, axis)] = t.sinh();
        m[(axis, 0)] = t.sinh();
        Ok(LorentzMap { mat: m })
    }

    /// Rotation by `angle` in the spatial (i, j) plane, fixing the apex.
    pub fn rotation(i: usize, j: usize, angle: f64, n: usize) -> Result<Self, ModelError> {
        if i == 0 || i > n {
            return Err(ModelError::BadAxis { axis: i, dim: n });
        }
        if j == 0 || j > n || i == j {
            return Err(ModelError::BadAxis { axis: j, dim: n });
        }
        let mut m = DMatrix::identity(n + 1, n + 1);
        m[(i, i)] = angle.cos();
        m[(j, j)] = angle.cos();
        m[(i, j)] = -angle.sin();
        m[(j, i)] = angle.sin();
        Ok(LorentzMap { mat: m })
    }

    /// The translation along the geodesic through the lifted points x, y
    /// carrying x to y. Built from the rank-two update
    /// T = I + (cosh d - 1)(-z (Jz)^T + w (Jw)^T) + sinh d (z (Jw)^T - w (Jz)^T)
    /// where z = x and w is the unit tangent at x toward y.
    pub fn translation(x: &DVector<f64>, y: &DVector<f64>) -> Result<Self, ModelError> {
        let c = -bilinear_q(x, y);
        if c - 1.0 < tol::IDENTITY {
            return Err(ModelError::Degenerate {
                reason: "translation axis needs distinct endpoints".into(),
            });
        }
        let m = x.len();
        let w = (y - x * c) / (c * c - 1.0).sqrt();
        let j = minkowski_j(m);
        let jz = (&j * x).transpose();
        let jw = (&j * &w).transpose();
        let s = (c * c - 1.0).sqrt(); // sinh d
        let mat = DMatrix::identity(m, m) + (c - 1.0) * (-x * &jz + &w * &jw)
            - s * (&w * &jz)
            + s * (x * &jw);
        Ok(LorentzMap { mat })
    }

    /// Composition self after other.
    pub fn compose(&self, other: &LorentzMap) -> LorentzMap {
        LorentzMap {
            mat: &self.mat * &other.mat,
        }
    }

    /// Inverse via the form: M^{-1} = J M^T J.
    pub fn inverse(&self) -> LorentzMap {
        let j = minkowski_j(self.mat.nrows());
        LorentzMap {
            mat: &j * self.mat.transpose() * &j,
        }
    }

    /// Largest entry of |M^T J M - J|; zero for an exact Lorentz matrix.
    pub fn lorentz_defect(&self) -> f64 {
        let j = minkowski_j(self.mat.nrows());
        let d = self.mat.transpose() * &j * &self.mat - &j;
        d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Validates the defining identity to the standard tolerance.
    pub fn check(&self) -> Result<(), ModelError> {
        let d = self.lorentz_defect();
        if d > tol::EXACT {
            return Err(ModelError::Degenerate {
                reason: format!("matrix fails M^T J M = J by {d:.3e}"),
            });
        }
        Ok(())
    }

    /// Applies the map to a point in any model by conjugating with the lift.
    pub fn apply(&self, p: &ModelPoint) -> Result<ModelPoint, ModelError> {
        p.validate()?;
        if self.mat.nrows() != p.dim() + 1 {
            return Err(ModelError::ModelMismatch {
                expected: format!("matrix of size {}", p.dim() + 1),
                got: format!("matrix of size {}", self.mat.nrows()),
            });
        }
        let v = &self.mat * p.lift();
        ModelPoint::from_lift(p.model, &v)
    }

    /// Applies the map to a boundary point through its null lift.
    pub fn apply_boundary(&self, b: &BoundaryPoint) -> Result<BoundaryPoint, ModelError> {
        let v = &self.mat * b.null_lift()?;
        BoundaryPoint::from_null(b.model, &v)
    }

    /// Operator norm (largest singular value). For a Lorentz matrix this
    /// equals exp(d(o, M o)) at the apex basepoint o.
    pub fn operator_norm(&self) -> f64 {
        self.mat.clone().svd(false, false).singular_values[0]
    }

    /// The matrix acting on hyperboloid lifts the way `h` acts on half-space
    /// points. Solved from the images of n+1 points whose lifts span R^{n+1}.
    pub fn from_half_space(h: &HalfSpaceMap) -> Result<LorentzMap, ModelError> {
        let n = h.dim();
        let mut pts: Vec<ModelPoint> = Vec::with_capacity(n + 1);
        let mut c = vec![0.0; n];
        c[0] = 1.0;
        pts.push(ModelPoint::half_space(c.clone())?);
        c[0] = 2.0;
        pts.push(ModelPoint::half_space(c)?);
        for i in 1..n {
            let mut c = vec![0.0; n];
            c[0] = 1.0;
            c[i] = 0.5;
            pts.push(ModelPoint::half_space(c)?);
        }
        let mut x = DMatrix::zeros(n + 1, n + 1);
        let mut y = DMatrix::zeros(n + 1, n + 1);
        for (k, p) in pts.iter().enumerate() {
            x.set_column(k, &p.lift());
            y.set_column(k, &h.apply(p)?.lift());
        }
        let x_inv = x.try_inverse().ok_or_else(|| ModelError::Degenerate {
            reason: "sample lifts do not span".into(),
        })?;
        let map = LorentzMap { mat: y * x_inv };
        map.check()?;
        Ok(map)
    }
}

/// A similarity g(x) = scale * rot * x + shift of Euclidean R^{n-1},
/// the boundary of the half-space model minus infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rot: DMatrix<f64>,
    pub shift: DVector<f64>,
}

impl Similarity {
    pub fn identity(boundary_dim: usize) -> Self {
        Similarity {
            scale: 1.0,
            rot: DMatrix::identity(boundary_dim, boundary_dim),
            shift: DVector::zeros(boundary_dim),
        }
    }

    pub fn new(scale: f64, rot: DMatrix<f64>, shift: DVector<f64>) -> Result<Self, ModelError> {
        let s = Similarity { scale, rot, shift };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(ModelError::OutOfRange {
                what: "similarity scale".into(),
                value: self.scale,
            });
        }
        let d = self.rot.nrows();
        if self.rot.ncols() != d || self.shift.len() != d {
            return Err(ModelError::ModelMismatch {
                expected: format!("square rotation and shift of size {d}"),
                got: format!("{}x{} and {}", self.rot.nrows(), self.rot.ncols(), self.shift.len()),
            });
        }
        let defect = (self.rot.transpose() * &self.rot - DMatrix::identity(d, d))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if defect > tol::EXACT {
            return Err(ModelError::Degenerate {
                reason: format!("rotation fails A^T A = I by {defect:.3e}"),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        let y = &self.rot * v * self.scale + &self.shift;
        y.iter().copied().collect()
    }

    /// Composition self after other.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity {
            scale: self.scale * other.scale,
            rot: &self.rot * &other.rot,
            shift: &self.rot * &other.shift * self.scale + &self.shift,
        }
    }

    pub fn inverse(&self) -> Similarity {
        let rinv = self.rot.transpose();
        Similarity {
            scale: 1.0 / self.scale,
            shift: -(&rinv * &self.shift) / self.scale,
            rot: rinv,
        }
    }
}

/// The Poincare extension of a boundary similarity: an isometry of the
/// half-space acting by g(x) = (scale * x_1, g(x_2, ..., x_n)).
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceMap {
    pub sim: Similarity,
}

/// Extends a similarity of the boundary to the half-space isometry over it.
pub fn poincare_extension(sim: Similarity) -> Result<HalfSpaceMap, ModelError> {
    sim.validate()?;
    Ok(HalfSpaceMap { sim })
}

impl HalfSpaceMap {
    pub fn dim(&self) -> usize {
        self.sim.rot.nrows() + 1
    }

    pub fn apply(&self, p: &ModelPoint) -> Result<ModelPoint, ModelError> {
        p.validate()?;
        if p.model != Model::HalfSpace || p.dim() != self.dim() {
            return Err(ModelError::ModelMismatch {
                expected: format!("half-space point of dimension {}", self.dim()),
                got: format!("{} point of dimension {}", p.model, p.dim()),
            });
        }
        let mut coords = vec![0.0; p.coords.len()];
        coords[0] = self.sim.scale * p.coords[0];
        let img = self.sim.apply(&p.coords[1..]);
        coords[1..].copy_from_slice(&img);
        ModelPoint::half_space(coords)
    }

    /// Boundary action: finite points move by the similarity, infinity is
    /// fixed.
    pub fn apply_boundary(&self, b: &BoundaryPoint) -> Result<BoundaryPoint, ModelError> {
        if b.model != Model::HalfSpace {
            return Err(ModelError::ModelMismatch {
                expected: "half-space boundary point".into(),
                got: format!("{} boundary point", b.model),
            });
        }
        match &b.rep {
            BoundaryRep::Infinity => Ok(b.clone()),
            BoundaryRep::Vector(v) => BoundaryPoint::half_space_finite(self.sim.apply(v)),
        }
    }

    /// Scaling factor of the induced boundary map at a fixed boundary point:
    /// `scale` at finite points, 1 / `scale` at infinity.
    pub fn boundary_derivative(&self, b: &BoundaryPoint) -> Result<f64, ModelError> {
        match &b.rep {
            BoundaryRep::Infinity => Ok(1.0 / self.sim.scale),
            BoundaryRep::Vector(_) => Ok(self.sim.scale),
        }
    }

    pub fn compose(&self, other: &HalfSpaceMap) -> HalfSpaceMap {
        HalfSpaceMap {
            sim: self.sim.compose(&other.sim),
        }
    }

    pub fn inverse(&self) -> HalfSpaceMap {
        HalfSpaceMap {
            sim: self.sim.inverse(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dist;

    #[test]
    fn boost_is_lorentz_and_translates_the_apex() {
        let n = 3;
        let t = 0.8;
        let b = LorentzMap::boost(2, t, n).unwrap();
        assert!(b.lorentz_defect() <= tol::IDENTITY);
        let o = ModelPoint::base(Model::Hyperboloid, n);
        let img = b.apply(&o).unwrap();
        assert!((dist(&o, &img).unwrap() - t).abs() <= tol::EXACT);
    }

    #[test]
    fn operator_norm_law_at_the_apex() {
        let n = 2;
        let o = ModelPoint::base(Model::Hyperboloid, n);
        // A boost conjugated by a rotation still satisfies |T| = e^{d(o, To)}.
        let r = LorentzMap::rotation(1, 2, 0.7, n).unwrap();
        let t = LorentzMap::boost(1, 1.3, n).unwrap();
        let m = r.compose(&t).compose(&r.inverse());
        let d = dist(&o, &m.apply(&o).unwrap()).unwrap();
        assert!((m.operator_norm() - d.exp()).abs() <= tol::MATRIX * d.exp());
    }

    #[test]
    fn translation_moves_along_the_axis() {
        let p = ModelPoint::ball(vec![0.1, 0.2]).unwrap();
        let q = ModelPoint::ball(vec![-0.3, 0.5]).unwrap();
        let t = LorentzMap::translation(&p.lift(), &q.lift()).unwrap();
        assert!(t.lorentz_defect() <= tol::MATRIX);
        let img = ModelPoint::from_lift(Model::Ball, &(&t.mat * p.lift())).unwrap();
        for i in 0..2 {
            assert!((img.coords[i] - q.coords[i]).abs() <= tol::MATRIX);
        }
        // Applying it again doubles the distance (same axis).
        let img2 = t.apply(&img).unwrap();
        let d = dist(&p, &q).unwrap();
        assert!((dist(&p, &img2).unwrap() - 2.0 * d).abs() <= tol::MATRIX);
    }

    #[test]
    fn inverse_and_bad_axis() {
        let b = LorentzMap::boost(1, 0.5, 2).unwrap();
        let prod = b.compose(&b.inverse());
        let defect = (&prod.mat - DMatrix::identity(3, 3))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(defect <= tol::IDENTITY);
        assert!(matches!(
            LorentzMap::boost(0, 1.0, 2),
            Err(ModelError::BadAxis { .. })
        ));
        assert!(matches!(
            LorentzMap::boost(3, 1.0, 2),
            Err(ModelError::BadAxis { .. })
        ));
    }

    #[test]
    fn poincare_extension_is_an_isometry() {
        // Rotation by 90 degrees, dilation by 2, and a shift of the plane.
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sim = Similarity::new(2.0, rot, DVector::from_column_slice(&[1.0, -0.5])).unwrap();
        let g = poincare_extension(sim).unwrap();
        let p = ModelPoint::half_space(vec![1.0, 0.3, 0.4]).unwrap();
        let q = ModelPoint::half_space(vec![2.5, -1.0, 0.8]).unwrap();
        let d = dist(&p, &q).unwrap();
        let d2 = dist(&g.apply(&p).unwrap(), &g.apply(&q).unwrap()).unwrap();
        assert!((d - d2).abs() <= tol::EXACT);
        // Composition with the inverse is the identity on points.
        let back = g.inverse().apply(&g.apply(&p).unwrap()).unwrap();
        for i in 0..3 {
            assert!((back.coords[i] - p.coords[i]).abs() <= tol::EXACT);
        }
    }

    #[test]
    fn non_orthogonal_rotation_is_rejected() {
        let rot = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            Similarity::new(1.0, rot, DVector::zeros(2)),
            Err(ModelError::Degenerate { .. })
        ));
    }
}
