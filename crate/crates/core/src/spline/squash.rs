//! Mapping from `4K - 1` unconstrained reals to a valid [`KnotSpec`].
//!
//! Raw layout: `[K width logits | K height logits | K-1 interior derivative
//! pre-activations | K lambda logits]`.
//!
//! * widths and heights: softmax, mixed with a uniform floor so every bin is at
//!   least `min_bin` wide, then cumulatively summed from `lo` to `hi`;
//! * interior derivatives: `min_derivative + softplus(raw + c)` where `c` makes a
//!   zero pre-activation map to exactly 1; boundary derivatives are fixed at 1;
//! * lambdas: logistic, rescaled into `[lambda_eps, 1 - lambda_eps]`.
//!
//! A zero raw vector therefore yields uniform bins, unit derivatives and
//! `λ = 0.5`, which is the identity map up to rounding.

use serde::{Deserialize, Serialize};

use super::gradient::{bin_vjp, KnotGradient};
use super::{locate, Direction, ElementSpline, KnotSpec, SplineResult};
use crate::error::{Error, Result};

/// Hyperparameters of the raw-to-knot squashing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquashConfig {
    pub num_bins: usize,
    /// Left end of the spline interval (`-B` for a tail bound `B`).
    pub lo: f64,
    /// Right end of the spline interval.
    pub hi: f64,
    /// Minimum bin width as a fraction of the uniform width `(hi - lo) / K`.
    pub min_bin_frac: f64,
    pub min_derivative: f64,
    pub lambda_eps: f64,
    /// Every bin uses the first lambda logit.
    pub shared_lambda: bool,
}

impl SquashConfig {
    pub fn symmetric(num_bins: usize, tail_bound: f64) -> Self {
        SquashConfig {
            num_bins,
            lo: -tail_bound,
            hi: tail_bound,
            min_bin_frac: 1e-3,
            min_derivative: 1e-3,
            lambda_eps: 0.025,
            shared_lambda: false,
        }
    }

    /// Spline interval `[0, 1]`, used with a uniform base distribution.
    pub fn unit(num_bins: usize) -> Self {
        SquashConfig {
            lo: 0.0,
            hi: 1.0,
            ..Self::symmetric(num_bins, 1.0)
        }
    }

    /// Number of raw parameters per transformed dimension.
    pub fn num_raw(&self) -> usize {
        4 * self.num_bins - 1
    }

    pub fn min_bin(&self) -> f64 {
        self.min_bin_frac * (self.hi - self.lo) / self.num_bins as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.num_bins >= 1
            && self.hi > self.lo
            && self.min_bin_frac >= 0.0
            && self.min_bin_frac < 1.0
            && self.min_derivative > 0.0
            && self.min_derivative < 1.0
            && self.lambda_eps > 0.0
            && self.lambda_eps < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid spline settings {self:?}")))
        }
    }

    fn derivative_shift(&self) -> f64 {
        (1.0 - self.min_derivative).exp_m1().ln()
    }

    fn lambda_index(&self, bin: usize) -> usize {
        if self.shared_lambda {
            0
        } else {
            bin
        }
    }

    fn check_len(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.num_raw() {
            return Err(Error::shape("squash", &[raw.len()], &[self.num_raw()]));
        }
        Ok(())
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Knot positions and the softmax probabilities behind them, kept for the
/// backward pass. Derivatives and lambdas are evaluated on demand.
struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    width_probs: Vec<f64>,
    height_probs: Vec<f64>,
}

fn cumulative_knots(probs: &[f64], cfg: &SquashConfig, out: &mut Vec<f64>) {
    let k = cfg.num_bins;
    let range = cfg.hi - cfg.lo;
    let mf = cfg.min_bin_frac / k as f64;
    let scale = 1.0 - k as f64 * mf;
    out.clear();
    out.push(cfg.lo);
    let mut acc = cfg.lo;
    for &p in &probs[..k - 1] {
        acc += range * (mf + scale * p);
        out.push(acc);
    }
    out.push(cfg.hi);
}

fn grid(raw: &[f64], cfg: &SquashConfig) -> Grid {
    let k = cfg.num_bins;
    let mut width_probs = vec![0.0; k];
    let mut height_probs = vec![0.0; k];
    softmax_into(&raw[..k], &mut width_probs);
    softmax_into(&raw[k..2 * k], &mut height_probs);
    let mut xs = Vec::with_capacity(k + 1);
    let mut ys = Vec::with_capacity(k + 1);
    cumulative_knots(&width_probs, cfg, &mut xs);
    cumulative_knots(&height_probs, cfg, &mut ys);
    Grid {
        xs,
        ys,
        width_probs,
        height_probs,
    }
}

/// Derivative at knot `j`; both boundary knots are pinned to 1.
fn knot_derivative(raw: &[f64], cfg: &SquashConfig, shift: f64, j: usize) -> f64 {
    if j == 0 || j == cfg.num_bins {
        1.0
    } else {
        cfg.min_derivative + softplus(raw[2 * cfg.num_bins + j - 1] + shift)
    }
}

fn bin_lambda(raw: &[f64], cfg: &SquashConfig, bin: usize) -> f64 {
    let z = raw[3 * cfg.num_bins - 1 + cfg.lambda_index(bin)];
    cfg.lambda_eps + (1.0 - 2.0 * cfg.lambda_eps) * sigmoid(z)
}

fn squash(raw: &[f64], cfg: &SquashConfig) -> KnotSpec {
    let k = cfg.num_bins;
    let g = grid(raw, cfg);
    let shift = cfg.derivative_shift();
    let ds = (0..=k).map(|j| knot_derivative(raw, cfg, shift, j)).collect();
    let lambdas = (0..k).map(|b| bin_lambda(raw, cfg, b)).collect();
    KnotSpec {
        xs: g.xs,
        ys: g.ys,
        ds,
        lambdas,
    }
}

/// The single bin of the squashed spline that `input` falls in.
fn local_bin(raw: &[f64], cfg: &SquashConfig, g: &Grid, input: f64, direction: Direction) -> (usize, KnotSpec) {
    let bin = match direction {
        Direction::Forward => locate(&g.xs, input),
        Direction::Inverse => locate(&g.ys, input),
    };
    let shift = cfg.derivative_shift();
    let knots = KnotSpec {
        xs: vec![g.xs[bin], g.xs[bin + 1]],
        ys: vec![g.ys[bin], g.ys[bin + 1]],
        ds: vec![knot_derivative(raw, cfg, shift, bin), knot_derivative(raw, cfg, shift, bin + 1)],
        lambdas: vec![bin_lambda(raw, cfg, bin)],
    };
    (bin, knots)
}

/// Maps raw network outputs to a knot specification satisfying every spline
/// invariant, for any finite input.
pub fn squash_raw_params(raw: &[f64], cfg: &SquashConfig) -> Result<KnotSpec> {
    cfg.check_len(raw)?;
    Ok(squash(raw, cfg))
}

fn cumulative_backward(probs: &[f64], grad_knots: &[f64], cfg: &SquashConfig, out: &mut [f64]) {
    let k = cfg.num_bins;
    let range = cfg.hi - cfg.lo;
    let scale = 1.0 - cfg.min_bin_frac;
    // Knot j (1 <= j <= K-1) is lo + sum of the first j widths; both ends are fixed.
    let mut suffix = 0.0;
    let mut grad_probs = vec![0.0; k];
    for i in (0..k - 1).rev() {
        suffix += grad_knots[i + 1];
        grad_probs[i] = range * scale * suffix;
    }
    let dot: f64 = probs.iter().zip(&grad_probs).map(|(p, g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(probs).zip(&grad_probs) {
        *o += p * (g - dot);
    }
}

fn squash_backward(raw: &[f64], cfg: &SquashConfig, g: &Grid, up: &KnotGradient, bins: std::ops::Range<usize>, out: &mut [f64]) {
    let k = cfg.num_bins;
    cumulative_backward(&g.width_probs, &up.xs, cfg, &mut out[..k]);
    cumulative_backward(&g.height_probs, &up.ys, cfg, &mut out[k..2 * k]);
    let shift = cfg.derivative_shift();
    // Only knots bordering `bins` can carry a derivative gradient.
    for j in bins.start.max(1)..(bins.end + 1).min(k) {
        out[2 * k + j - 1] += up.ds[j] * sigmoid(raw[2 * k + j - 1] + shift);
    }
    let span = 1.0 - 2.0 * cfg.lambda_eps;
    for b in bins {
        let idx = 3 * k - 1 + cfg.lambda_index(b);
        let s = sigmoid(raw[idx]);
        out[idx] += up.lambdas[b] * span * s * (1.0 - s);
    }
}

/// Vector-Jacobian product of [`squash_raw_params`].
pub fn squash_gradient(raw: &[f64], cfg: &SquashConfig, upstream: &KnotGradient) -> Result<Vec<f64>> {
    cfg.check_len(raw)?;
    let k = cfg.num_bins;
    if upstream.xs.len() != k + 1
        || upstream.ys.len() != k + 1
        || upstream.ds.len() != k + 1
        || upstream.lambdas.len() != k
    {
        return Err(Error::shape(
            "squash_gradient",
            &[upstream.xs.len(), upstream.ys.len(), upstream.ds.len(), upstream.lambdas.len()],
            &[k + 1, k + 1, k + 1, k],
        ));
    }
    let g = grid(raw, cfg);
    let mut out = vec![0.0; raw.len()];
    squash_backward(raw, cfg, &g, upstream, 0..k, &mut out);
    Ok(out)
}

/// Squashes `raw` and evaluates the resulting spline at `input`.
///
/// `raw` must have `cfg.num_raw()` entries.
pub fn transform_raw(raw: &[f64], cfg: &SquashConfig, input: f64, direction: Direction) -> SplineResult {
    debug_assert_eq!(raw.len(), cfg.num_raw());
    if input < cfg.lo || input > cfg.hi {
        return SplineResult {
            value: input,
            log_abs_det: 0.0,
        };
    }
    let (_, knots) = local_bin(raw, cfg, &grid(raw, cfg), input, direction);
    ElementSpline::from_trusted(knots).apply(input, direction)
}

/// Reverse pass of [`transform_raw`]: accumulates the raw-parameter gradient
/// into `raw_grad` and returns the gradient with respect to `input`.
///
/// For the inverse direction the parameter gradient follows from the implicit
/// function theorem applied to the forward map at `x = inverse(input)`.
pub fn transform_raw_vjp(
    raw: &[f64],
    cfg: &SquashConfig,
    input: f64,
    direction: Direction,
    gv: f64,
    gl: f64,
    raw_grad: &mut [f64],
) -> f64 {
    debug_assert_eq!(raw.len(), cfg.num_raw());
    if input < cfg.lo || input > cfg.hi {
        return gv;
    }
    let g = grid(raw, cfg);
    let (bin, kn) = local_bin(raw, cfg, &g, input, direction);
    let params = super::bin_params_unchecked(&kn, 0, 1.0);
    let x = match direction {
        Direction::Forward => input,
        Direction::Inverse => params.delta * params.invert(input).0 + params.x_lo,
    };
    let local = [kn.xs[0], kn.xs[1], kn.ys[0], kn.ys[1], kn.ds[0], kn.ds[1], kn.lambdas[0]];
    let (input_grad, lg) = match direction {
        Direction::Forward => {
            let lg = bin_vjp(x, local, gv, gl);
            (lg.x, lg)
        }
        Direction::Inverse => {
            let (_, slope_phi) = params.eval((x - params.x_lo) / params.delta);
            let slope = slope_phi / params.delta;
            let lad_x = bin_vjp(x, local, 0.0, 1.0).x;
            let a = (gv - gl * lad_x) / slope;
            (a, bin_vjp(x, local, -a, -gl))
        }
    };
    let k = cfg.num_bins;
    let mut up = KnotGradient::zeros(k);
    up.xs[bin] = lg.x_lo;
    up.xs[bin + 1] = lg.x_hi;
    up.ys[bin] = lg.y_lo;
    up.ys[bin + 1] = lg.y_hi;
    up.ds[bin] = lg.d_lo;
    up.ds[bin + 1] = lg.d_hi;
    up.lambdas[bin] = lg.lambda;
    squash_backward(raw, cfg, &g, &up, bin..bin + 1, raw_grad);
    input_grad
}
