//! Analytic reverse-mode derivatives of the forward spline with respect to the
//! input and every knot parameter.

use super::ElementSpline;

/// Gradients with respect to every entry of a [`KnotSpec`](super::KnotSpec).
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGradient {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ds: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl KnotGradient {
    pub fn zeros(num_bins: usize) -> Self {
        KnotGradient {
            xs: vec![0.0; num_bins + 1],
            ys: vec![0.0; num_bins + 1],
            ds: vec![0.0; num_bins + 1],
            lambdas: vec![0.0; num_bins],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineGradient {
    pub x: f64,
    pub knots: KnotGradient,
}

/// Local gradient of one bin evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinGrad {
    pub x: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub d_lo: f64,
    pub d_hi: f64,
    pub lambda: f64,
}

/// Vector-Jacobian product of `(value, log_abs_det)` for a point inside one
/// bin, with `w_lo = 1`.
///
/// `knots` is `[x_lo, x_hi, y_lo, y_hi, d_lo, d_hi, lambda]`; `gv` and `gl` are
/// the upstream gradients on the value and on the log-derivative.
pub fn bin_vjp(x: f64, knots: [f64; 7], gv: f64, gl: f64) -> BinGrad {
    let [x_lo, x_hi, y_lo, y_hi, d_lo, d_hi, lam] = knots;
    let delta = x_hi - x_lo;
    let phi = (x - x_lo) / delta;
    let s = (d_lo / d_hi).sqrt();
    let dy = y_hi - y_lo;
    let bden = (1.0 - lam) + lam * s;
    let p = lam * d_lo + (1.0 - lam) * s * d_hi;
    let wm = p * delta / dy;

    let mut g = BinGrad::default();
    let mut g_phi = 0.0;
    let mut g_s = 0.0;
    let mut g_dy = 0.0;
    let mut g_bden = 0.0;
    let mut g_wm = 0.0;
    let mut g_delta = 0.0;

    if phi < lam {
        // value = y_lo + wm*phi*e1/den, den = lam - phi + wm*phi
        let e1 = lam * s * dy / bden;
        let den = lam - phi + wm * phi;
        let q = wm * phi * e1 / den;
        g.y_lo += gv;
        g_wm += gv * phi * e1 / den + gl / wm;
        g_phi += gv * wm * e1 / den;
        let g_e1 = gv * wm * phi / den + gl / e1;
        let g_den = -gv * q / den - 2.0 * gl / den;
        g.lambda += gl / lam + g_den;
        g_delta -= gl / delta;
        g_phi += g_den * (wm - 1.0);
        g_wm += g_den * phi;
        g.lambda += g_e1 * s * dy / bden;
        g_s += g_e1 * lam * dy / bden;
        g_dy += g_e1 * lam * s / bden;
        g_bden -= g_e1 * e1 / bden;
    } else {
        // value = y_hi - wm*(1-phi)*e2/den, den = wm*(1-phi) + s*(phi-lam)
        let e2 = (1.0 - lam) * dy / bden;
        let b = 1.0 - phi;
        let c = phi - lam;
        let den = wm * b + s * c;
        let r = wm * b * e2 / den;
        g.y_hi += gv;
        g_wm += -gv * b * e2 / den + gl / wm;
        g_phi += gv * wm * e2 / den;
        let g_e2 = -gv * wm * b / den + gl / e2;
        let g_den = gv * r / den - 2.0 * gl / den;
        g.lambda -= gl / (1.0 - lam);
        g_s += gl / s;
        g_delta -= gl / delta;
        g_wm += g_den * b;
        g_phi += g_den * (s - wm);
        g_s += g_den * c;
        g.lambda -= g_den * s;
        g.lambda -= g_e2 * dy / bden;
        g_dy += g_e2 * (1.0 - lam) / bden;
        g_bden -= g_e2 * e2 / bden;
    }

    // bden = (1 - lam) + lam*s
    g.lambda += g_bden * (s - 1.0);
    g_s += g_bden * lam;
    // wm = p*delta/dy
    let g_p = g_wm * delta / dy;
    g_delta += g_wm * p / dy;
    g_dy -= g_wm * wm / dy;
    g.lambda += g_p * (d_lo - s * d_hi);
    g.d_lo += g_p * lam;
    g_s += g_p * (1.0 - lam) * d_hi;
    g.d_hi += g_p * (1.0 - lam) * s;
    // s = sqrt(d_lo/d_hi)
    g.d_lo += g_s * s / (2.0 * d_lo);
    g.d_hi -= g_s * s / (2.0 * d_hi);
    g.y_hi += g_dy;
    g.y_lo -= g_dy;
    // phi = (x - x_lo)/delta
    g.x += g_phi / delta;
    g.x_lo -= g_phi / delta;
    g_delta -= g_phi * phi / delta;
    g.x_hi += g_delta;
    g.x_lo -= g_delta;
    g
}

/// Exact partial derivatives of `forward(x)` with respect to the input and
/// all knot parameters, contracted with upstream gradients `gv` (value) and
/// `gl` (log-abs-det).
pub fn spline_gradient(spline: &ElementSpline, x: f64, gv: f64, gl: f64) -> SplineGradient {
    let k = spline.num_bins();
    let mut knots = KnotGradient::zeros(k);
    if !spline.in_domain(x) {
        return SplineGradient { x: gv, knots };
    }
    let bin = spline.locate_x(x);
    let kn = spline.knots();
    let g = bin_vjp(
        x,
        [
            kn.xs[bin],
            kn.xs[bin + 1],
            kn.ys[bin],
            kn.ys[bin + 1],
            kn.ds[bin],
            kn.ds[bin + 1],
            kn.lambdas[bin],
        ],
        gv,
        gl,
    );
    knots.xs[bin] = g.x_lo;
    knots.xs[bin + 1] = g.x_hi;
    knots.ys[bin] = g.y_lo;
    knots.ys[bin + 1] = g.y_hi;
    knots.ds[bin] = g.d_lo;
    knots.ds[bin + 1] = g.d_hi;
    knots.lambdas[bin] = g.lambda;
    SplineGradient { x: g.x, knots }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{KnotSpec, SplineResult};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spline(rng: &mut ChaCha8Rng) -> ElementSpline {
        let k = rng.random_range(1..=8);
        let b = 3.0;
        let mut widths: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let mut heights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let (sw, sh): (f64, f64) = (widths.iter().sum(), heights.iter().sum());
        widths.iter_mut().for_each(|w| *w *= 2.0 * b / sw);
        heights.iter_mut().for_each(|h| *h *= 2.0 * b / sh);
        let cum = |v: &[f64]| {
            let mut out = vec![-b];
            for w in v {
                out.push(out.last().unwrap() + w);
            }
            out[k] = b;
            out
        };
        let mut ds: Vec<f64> = (0..=k).map(|_| rng.random_range(0.2..3.0)).collect();
        ds[0] = 1.0;
        ds[k] = 1.0;
        let lambdas = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        ElementSpline::new(KnotSpec::new(cum(&widths), cum(&heights), ds, lambdas).unwrap())
            .unwrap()
    }

    fn combined(r: SplineResult, gv: f64, gl: f64) -> f64 {
        gv * r.value + gl * r.log_abs_det
    }

    fn param_mut(kn: &mut KnotSpec, field: usize, i: usize) -> &mut f64 {
        match field {
            0 => &mut kn.xs[i],
            1 => &mut kn.ys[i],
            2 => &mut kn.ds[i],
            _ => &mut kn.lambdas[i],
        }
    }

    fn close(a: f64, n: f64) -> bool {
        (a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-4)
    }

    #[test]
    fn identity_spline_unit_input_gradient() {
        let s = ElementSpline::new(
            KnotSpec::new(
                vec![-1.0, 0.0, 1.0],
                vec![-1.0, 0.0, 1.0],
                vec![1.0; 3],
                vec![0.5; 2],
            )
            .unwrap(),
        )
        .unwrap();
        let g = spline_gradient(&s, 0.37, 1.0, 0.0);
        assert!((g.x - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tail_parameter_gradients_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spline(&mut rng);
        let g = spline_gradient(&s, 4.2, 0.7, -1.3);
        assert_eq!(g.x, 0.7);
        for v in g.knots.xs.iter().chain(&g.knots.ys).chain(&g.knots.ds) {
            assert_eq!(*v, 0.0);
        }
        assert!(g.knots.lambdas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let s = random_spline(&mut rng);
            let x = rng.random_range(-2.99..2.99);
            let (gv, gl) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let grad = spline_gradient(&s, x, gv, gl);
            let f = |s: &ElementSpline, x: f64| combined(s.forward(x), gv, gl);
            let fd = (f(&s, x + h) - f(&s, x - h)) / (2.0 * h);
            assert!(close(grad.x, fd), "x: {} vs {}", grad.x, fd);

            let bin = s.locate_x(x);
            let knots = s.knots().clone();
            let fd_param = |field: usize, i: usize| {
                let mut plus = knots.clone();
                let mut minus = knots.clone();
                *param_mut(&mut plus, field, i) += h;
                *param_mut(&mut minus, field, i) -= h;
                (f(&ElementSpline::from_trusted(plus), x) - f(&ElementSpline::from_trusted(minus), x))
                    / (2.0 * h)
            };
            for i in [bin, bin + 1] {
                for (field, a) in [(0, grad.knots.xs[i]), (1, grad.knots.ys[i]), (2, grad.knots.ds[i])] {
                    let fd = fd_param(field, i);
                    assert!(close(a, fd), "field {field}[{i}] (bin {bin}): {a} vs {fd}");
                }
            }
            let fd = fd_param(3, bin);
            assert!(close(grad.knots.lambdas[bin], fd), "lambda: {} vs {fd}", grad.knots.lambdas[bin]);
        }
    }
}
