//! Monotone linear rational splines.
//!
//! Each bin `[x_k, x_{k+1}]` is split at an intermediate point
//! `x_m = (1 - λ) x_k + λ x_{k+1}` and carries two homographic pieces that
//! share value and slope at `x_m`. Given knot values, knot derivatives and
//! `λ`, the interior weight and value are fixed in closed form
//! ([`derive_bin_params`]); evaluation, the derivative, the inverse and the
//! inverse derivative are all closed-form rational expressions.
//!
//! Outside the knot span the transform is the identity (linear tails with unit
//! slope). Splines produced by [`squash_raw_params`] always map `[lo, hi]` onto
//! itself with unit boundary derivatives, so the tails join continuously.

mod gradient;
mod squash;

pub use gradient::{bin_vjp, spline_gradient, KnotGradient, SplineGradient};
pub(crate) use squash::{sigmoid, softplus};
pub use squash::{
    squash_gradient, squash_raw_params, transform_raw, transform_raw_vjp, SquashConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bins narrower than this are rejected as degenerate.
pub const WIDTH_EPS: f64 = 1e-12;

/// Which way a spline is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Knots, knot derivatives and per-bin intermediate fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSpec {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ds: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl KnotSpec {
    /// Builds and validates a knot specification.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        let knots = KnotSpec {
            xs,
            ys,
            ds,
            lambdas,
        };
        knots.validate()?;
        Ok(knots)
    }

    pub fn num_bins(&self) -> usize {
        self.lambdas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.lambdas.len();
        if k == 0 {
            return Err(Error::InvalidKnots {
                bin: 0,
                reason: "at least one bin is required".into(),
            });
        }
        for (name, len) in [
            ("xs", self.xs.len()),
            ("ys", self.ys.len()),
            ("ds", self.ds.len()),
        ] {
            if len != k + 1 {
                return Err(Error::InvalidKnots {
                    bin: 0,
                    reason: format!("{name} has {len} entries, expected {}", k + 1),
                });
            }
        }
        for bin in 0..k {
            self.check_bin(bin)?;
        }
        Ok(())
    }

    fn check_bin(&self, bin: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidKnots { bin, reason });
        let (x0, x1) = (self.xs[bin], self.xs[bin + 1]);
        let (y0, y1) = (self.ys[bin], self.ys[bin + 1]);
        let (d0, d1) = (self.ds[bin], self.ds[bin + 1]);
        let lambda = self.lambdas[bin];
        if !(x1 - x0 >= WIDTH_EPS) {
            return fail(format!("degenerate width [{x0}, {x1}]"));
        }
        if !(y1 - y0 >= WIDTH_EPS) {
            return fail(format!("degenerate height [{y0}, {y1}]"));
        }
        if !(d0 > 0.0 && d1 > 0.0 && d0.is_finite() && d1.is_finite()) {
            return fail(format!("non-positive derivative ({d0}, {d1})"));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return fail(format!("lambda {lambda} outside (0, 1)"));
        }
        Ok(())
    }

    /// Returns `B` when the knots span `[-B, B]` onto itself with unit
    /// boundary derivatives.
    pub fn tail_bound(&self) -> Option<f64> {
        let k = self.num_bins();
        let b = self.xs[k];
        let symmetric = self.xs[0] == -b && self.ys[0] == -b && self.ys[k] == b;
        (symmetric && self.ds[0] == 1.0 && self.ds[k] == 1.0).then_some(b)
    }
}

/// Outputs of the per-bin interpolation: the two homographic pieces of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineBinParams {
    pub bin: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub delta: f64,
    pub lambda: f64,
    pub w_lo: f64,
    pub w_mid: f64,
    pub w_hi: f64,
    pub y_mid: f64,
}

/// Derives the intermediate value and the three weights of bin `k`.
///
/// `w_hi = sqrt(d_lo / d_hi) w_lo`, `y_mid` is the weighted mean of the bin
/// ends, and `w_mid` is fixed so the slope is continuous at the intermediate
/// point.
pub fn derive_bin_params(knots: &KnotSpec, k: usize, w_lo: f64) -> Result<SplineBinParams> {
    if k >= knots.num_bins() {
        return Err(Error::InvalidKnots {
            bin: k,
            reason: format!("bin index out of range (K = {})", knots.num_bins()),
        });
    }
    if knots.xs.len() <= k + 1 || knots.ys.len() <= k + 1 || knots.ds.len() <= k + 1 {
        return Err(Error::InvalidKnots {
            bin: k,
            reason: "knot arrays shorter than K + 1".into(),
        });
    }
    if !(w_lo > 0.0 && w_lo.is_finite()) {
        return Err(Error::InvalidKnots {
            bin: k,
            reason: format!("w_lo must be positive, got {w_lo}"),
        });
    }
    knots.check_bin(k)?;
    Ok(bin_params_unchecked(knots, k, w_lo))
}

pub(crate) fn bin_params_unchecked(knots: &KnotSpec, k: usize, w_lo: f64) -> SplineBinParams {
    let (x_lo, x_hi) = (knots.xs[k], knots.xs[k + 1]);
    let (y_lo, y_hi) = (knots.ys[k], knots.ys[k + 1]);
    let (d_lo, d_hi) = (knots.ds[k], knots.ds[k + 1]);
    let lambda = knots.lambdas[k];

    let w_hi = (d_lo / d_hi).sqrt() * w_lo;
    let y_mid = ((1.0 - lambda) * w_lo * y_lo + lambda * w_hi * y_hi)
        / ((1.0 - lambda) * w_lo + lambda * w_hi);
    let w_mid =
        (lambda * w_lo * d_lo + (1.0 - lambda) * w_hi * d_hi) * (x_hi - x_lo) / (y_hi - y_lo);

    SplineBinParams {
        bin: k,
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        delta: x_hi - x_lo,
        lambda,
        w_lo,
        w_mid,
        w_hi,
        y_mid,
    }
}

impl SplineBinParams {
    /// Evaluates the bin at relative position `phi` in `[0, 1]`.
    ///
    /// Returns `(g(phi), dg/dphi)`.
    pub fn eval(&self, phi: f64) -> (f64, f64) {
        let lambda = self.lambda;
        if phi < lambda {
            let den = self.w_lo * (lambda - phi) + self.w_mid * phi;
            let rise = self.y_mid - self.y_lo;
            let value = self.y_lo + self.w_mid * phi * rise / den;
            let slope = lambda * self.w_lo * self.w_mid * rise / (den * den);
            (value, slope)
        } else {
            let den = self.w_mid * (1.0 - phi) + self.w_hi * (phi - lambda);
            let rise = self.y_hi - self.y_mid;
            let value = self.y_hi - self.w_mid * (1.0 - phi) * rise / den;
            let slope = (1.0 - lambda) * self.w_mid * self.w_hi * rise / (den * den);
            (value, slope)
        }
    }

    /// Closed-form inverse of [`eval`](Self::eval): returns `(phi, dphi/dy)`.
    pub fn invert(&self, y: f64) -> (f64, f64) {
        let lambda = self.lambda;
        if y < self.y_mid {
            let t = y - self.y_lo;
            let u = self.y_mid - y;
            let den = self.w_lo * t + self.w_mid * u;
            let phi = lambda * self.w_lo * t / den;
            let slope = lambda * self.w_lo * self.w_mid * (self.y_mid - self.y_lo) / (den * den);
            (phi, slope)
        } else {
            let p = self.y_hi - y;
            let r = y - self.y_mid;
            let den = self.w_hi * p + self.w_mid * r;
            let phi = (lambda * self.w_hi * p + self.w_mid * r) / den;
            let slope =
                (1.0 - lambda) * self.w_mid * self.w_hi * (self.y_hi - self.y_mid) / (den * den);
            (phi, slope)
        }
    }

    /// Abscissa of the intermediate point.
    pub fn x_mid(&self) -> f64 {
        (1.0 - self.lambda) * self.x_lo + self.lambda * self.x_hi
    }
}

/// Transformed value and `ln |dy/dx|` at the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineResult {
    pub value: f64,
    pub log_abs_det: f64,
}

/// A complete spline for one scalar dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSpline {
    knots: KnotSpec,
}

impl ElementSpline {
    pub fn new(knots: KnotSpec) -> Result<Self> {
        knots.validate()?;
        Ok(ElementSpline { knots })
    }

    /// Skips validation; callers guarantee the invariants (the squash map does).
    pub(crate) fn from_trusted(knots: KnotSpec) -> Self {
        ElementSpline { knots }
    }

    pub fn knots(&self) -> &KnotSpec {
        &self.knots
    }

    pub fn into_knots(self) -> KnotSpec {
        self.knots
    }

    pub fn num_bins(&self) -> usize {
        self.knots.num_bins()
    }

    /// Bin containing `x`; knots belong to the bin on their right, except the last.
    pub fn locate_x(&self, x: f64) -> usize {
        locate(&self.knots.xs, x)
    }

    /// Bin whose output range contains `y`.
    pub fn locate_y(&self, y: f64) -> usize {
        locate(&self.knots.ys, y)
    }

    pub fn bin(&self, k: usize) -> SplineBinParams {
        bin_params_unchecked(&self.knots, k, 1.0)
    }

    pub fn in_domain(&self, x: f64) -> bool {
        let k = self.num_bins();
        x >= self.knots.xs[0] && x <= self.knots.xs[k]
    }

    fn in_range(&self, y: f64) -> bool {
        let k = self.num_bins();
        y >= self.knots.ys[0] && y <= self.knots.ys[k]
    }

    pub fn forward(&self, x: f64) -> SplineResult {
        if !self.in_domain(x) {
            return SplineResult {
                value: x,
                log_abs_det: 0.0,
            };
        }
        let bin = self.bin(self.locate_x(x));
        let phi = (x - bin.x_lo) / bin.delta;
        let (value, slope) = bin.eval(phi);
        SplineResult {
            value,
            log_abs_det: slope.ln() - bin.delta.ln(),
        }
    }

    pub fn inverse(&self, y: f64) -> SplineResult {
        if !self.in_range(y) {
            return SplineResult {
                value: y,
                log_abs_det: 0.0,
            };
        }
        let bin = self.bin(self.locate_y(y));
        let (phi, slope) = bin.invert(y);
        SplineResult {
            value: bin.delta * phi + bin.x_lo,
            log_abs_det: slope.ln() + bin.delta.ln(),
        }
    }

    pub fn apply(&self, input: f64, direction: Direction) -> SplineResult {
        match direction {
            Direction::Forward => self.forward(input),
            Direction::Inverse => self.inverse(input),
        }
    }
}

pub(crate) fn locate(knots: &[f64], v: f64) -> usize {
    let k = knots.len() - 1;
    knots.partition_point(|&t| t <= v).saturating_sub(1).min(k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bin(ys: [f64; 2], ds: [f64; 2], lambda: f64) -> KnotSpec {
        KnotSpec::new(vec![0.0, 1.0], ys.to_vec(), ds.to_vec(), vec![lambda]).unwrap()
    }

    fn identity(k: usize, b: f64) -> ElementSpline {
        let xs: Vec<f64> = (0..=k).map(|i| -b + 2.0 * b * i as f64 / k as f64).collect();
        ElementSpline::new(KnotSpec::new(xs.clone(), xs, vec![1.0; k + 1], vec![0.5; k]).unwrap())
            .unwrap()
    }

    #[test]
    fn identity_bin_params() {
        let knots = single_bin([0.0, 1.0], [1.0, 1.0], 0.5);
        let p = derive_bin_params(&knots, 0, 1.0).unwrap();
        assert_eq!(p.w_hi, 1.0);
        assert_eq!(p.y_mid, 0.5);
        assert_eq!(p.w_mid, 1.0);
    }

    #[test]
    fn hand_evaluated_bin_params() {
        // w_hi = sqrt(1/4) = 0.5
        // y_mid = (0.5*1*0 + 0.5*0.5*2) / (0.5*1 + 0.5*0.5) = 0.5 / 0.75 = 2/3
        // w_mid = (0.5*1*1 + 0.5*0.5*4) * (1 - 0) / (2 - 0) = 1.5 / 2 = 0.75
        let knots = single_bin([0.0, 2.0], [1.0, 4.0], 0.5);
        let p = derive_bin_params(&knots, 0, 1.0).unwrap();
        assert!((p.w_hi - 0.5).abs() < 1e-15);
        assert!((p.y_mid - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.w_mid - 0.75).abs() < 1e-15);
        assert!(p.w_lo > 0.0 && p.w_mid > 0.0 && p.w_hi > 0.0);
        assert!(p.y_lo < p.y_mid && p.y_mid < p.y_hi);
    }

    #[test]
    fn w_lo_scales_weights_without_changing_curve() {
        let knots = single_bin([0.0, 2.0], [1.0, 4.0], 0.3);
        let a = derive_bin_params(&knots, 0, 1.0).unwrap();
        let b = derive_bin_params(&knots, 0, 3.7).unwrap();
        assert!((b.w_hi - 3.7 * a.w_hi).abs() < 1e-12);
        assert!((b.y_mid - a.y_mid).abs() < 1e-14);
        for phi in [0.05, 0.2, 0.3, 0.6, 0.95] {
            let (va, sa) = a.eval(phi);
            let (vb, sb) = b.eval(phi);
            assert!((va - vb).abs() < 1e-13 && (sa - sb).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_derivative_is_rejected() {
        let knots = KnotSpec {
            xs: vec![0.0, 1.0],
            ys: vec![0.0, 1.0],
            ds: vec![0.0, 1.0],
            lambdas: vec![0.5],
        };
        assert!(matches!(
            derive_bin_params(&knots, 0, 1.0),
            Err(Error::InvalidKnots { bin: 0, .. })
        ));
        assert!(KnotSpec::new(knots.xs, knots.ys, knots.ds, knots.lambdas).is_err());
    }

    #[test]
    fn degenerate_width_names_bin() {
        let err = KnotSpec::new(
            vec![0.0, 1.0, 1.0],
            vec![0.0, 1.0, 2.0],
            vec![1.0; 3],
            vec![0.5; 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidKnots { bin: 1, .. }), "{err}");
    }

    #[test]
    fn forward_identity_spline() {
        let s = identity(4, 3.0);
        let r = s.forward(0.3);
        assert!((r.value - 0.3).abs() < 1e-15);
        assert!(r.log_abs_det.abs() < 1e-15);
        let r = s.inverse(-0.4);
        assert!((r.value + 0.4).abs() < 1e-15);
        assert!(r.log_abs_det.abs() < 1e-15);
    }

    #[test]
    fn forward_hand_evaluated_point() {
        // (0.75 * (2/3) * 0.25) / (1 * 0.25 + 0.75 * 0.25) = 0.125 / 0.4375
        let s = ElementSpline::new(single_bin([0.0, 2.0], [1.0, 4.0], 0.5)).unwrap();
        let r = s.forward(0.25);
        assert!((r.value - 0.125 / 0.4375).abs() < 1e-15);
        let h = 1e-6;
        let fd = (s.forward(0.25 + h).value - s.forward(0.25 - h).value) / (2.0 * h);
        assert!((r.log_abs_det - fd.ln()).abs() < 1e-8);
    }

    #[test]
    fn tails_are_identity() {
        let s = identity(5, 2.5);
        let r = s.forward(2.5 + 7.2);
        assert_eq!(r.value, 2.5 + 7.2);
        assert_eq!(r.log_abs_det, 0.0);
        let r = s.inverse(-11.0);
        assert_eq!(r.value, -11.0);
        assert_eq!(r.log_abs_det, 0.0);
    }

    #[test]
    fn knot_ties_go_right_except_last() {
        let s = identity(4, 2.0);
        assert_eq!(s.locate_x(-2.0), 0);
        assert_eq!(s.locate_x(-1.0), 1);
        assert_eq!(s.locate_x(0.0), 2);
        assert_eq!(s.locate_x(2.0), 3);
    }

    #[test]
    fn endpoints_map_exactly() {
        let knots = KnotSpec::new(
            vec![-3.0, -1.0, 0.5, 3.0],
            vec![-3.0, 0.0, 1.0, 3.0],
            vec![1.0, 2.5, 0.3, 1.0],
            vec![0.2, 0.5, 0.9],
        )
        .unwrap();
        assert_eq!(knots.tail_bound(), Some(3.0));
        let s = ElementSpline::new(knots).unwrap();
        assert_eq!(s.forward(-3.0).value, -3.0);
        assert_eq!(s.forward(3.0).value, 3.0);
    }
}
