//! Shared numerical helpers: stable inverse hyperbolic cosine, least-squares
//! line fits, and bracketed root finding.

/// Inverse hyperbolic cosine, stable near 1.
///
/// The naive `ln(x + sqrt(x*x - 1))` loses half the significant digits when
/// x is close to 1; writing everything in terms of u = x - 1 keeps full
/// precision. Arguments that rounding pushed slightly below 1 are clamped.
pub fn acosh_stable(x: f64) -> f64 {
    let u = x - 1.0;
    if u <= 0.0 {
        // Tolerate representation error on cosh values that are exactly 1.
        return if u > -1e-9 { 0.0 } else { f64::NAN };
    }
    (u + (u * (x + 1.0)).sqrt()).ln_1p()
}

/// Least-squares line fit y = slope * x + intercept.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest |y_i - (slope * x_i + intercept)| over the fit window.
    pub max_residual: f64,
    /// Half-width of the x window; used to convert residuals to slope error.
    pub half_span: f64,
}

impl LineFit {
    /// Residual-based slope uncertainty: a line tilted by more than
    /// `max_residual / half_span` about the window center would exceed the
    /// observed residual at an endpoint.
    pub fn slope_band(&self) -> f64 {
        if self.half_span > 0.0 {
            self.max_residual / self.half_span
        } else {
            f64::INFINITY
        }
    }
}

/// Fits a line through (xs, ys) by least squares. Panics on length mismatch;
/// returns None when fewer than two distinct x values are given.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len(), "line_fit: mismatched inputs");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut max_residual: f64 = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        max_residual = max_residual.max((ys[i] - slope * xs[i] - intercept).abs());
        lo = lo.min(xs[i]);
        hi = hi.max(xs[i]);
    }
    Some(LineFit {
        slope,
        intercept,
        max_residual,
        half_span: (hi - lo) / 2.0,
    })
}

/// Bisection for a root of a continuous function with a sign change on
/// [lo, hi]. Returns None when f(lo) and f(hi) have the same sign. The
/// bracket is shrunk until its width drops below `width_tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, width_tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return None;
    }
    while hi - lo > width_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // float resolution reached
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
