//! Computational workbench for negatively curved spaces.
//!
//! The crate provides exact coordinate models of hyperbolic n-space together
//! with their isometries and boundary charts, coarse-geometry primitives
//! (Gromov products, Busemann cocycles, visual and based boundary metrics,
//! shadows) that work uniformly over the models and over finite R-trees, a
//! construction kit for R-trees (cones over ultrametric spaces, stapled
//! unions, orbit trees of free products, geometric products), isometric group
//! actions given by words in factor groups, isometric embeddings of finite
//! tree configurations through a bilinear form, orbit-counting exponents with
//! divergence criteria, conformal boundary measures with shadow and global
//! measure estimates, and Ahlfors-regular partition structures.
//!
//! Everything is double precision. Routines that admit exact arithmetic
//! (cylinder measures with rational weight base, uniform partition weights)
//! carry it internally and only round on output.

pub mod actions;
pub mod bim;
pub mod coarse;
pub mod measures;
pub mod models;
pub mod numeric;
pub mod partition;
pub mod poincare;
pub mod rtree;

/// Named tolerances used across checks. Tightest first.
pub mod tol {
    /// Closed-form identities and zero-defect tree checks.
    pub const IDENTITY: f64 = 1e-12;
    /// Default for exact numerical pipelines (distances, conversions).
    pub const EXACT: f64 = 1e-9;
    /// Matrix identities that accumulate a few products.
    pub const MATRIX: f64 = 1e-8;
    /// Compositions of matrix identities.
    pub const COMPOSED: f64 = 1e-7;
    /// Fitted or iteratively estimated quantities.
    pub const FITTED: f64 = 1e-6;
}
