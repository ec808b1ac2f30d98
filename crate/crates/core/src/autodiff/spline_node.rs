use rayon::prelude::*;

use super::graph::{CustomOp, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::spline::{transform_raw, transform_raw_vjp, Direction, SquashConfig};

/// Checks shapes and returns `(rows, dims, broadcast)`.
fn check_shapes(raw: &Tensor, x: &Tensor, cfg: &SquashConfig) -> Result<(usize, usize, bool)> {
    let (rows, dims) = x.require_matrix("spline")?;
    let width = dims * cfg.num_raw();
    match raw.shape() {
        [r, w] if *r == rows && *w == width => Ok((rows, dims, false)),
        [w] if *w == width => Ok((rows, dims, true)),
        _ => Err(Error::shape("spline", raw.shape(), &[rows, width])),
    }
}

fn raw_row<'a>(raw: &'a Tensor, row: usize, broadcast: bool) -> &'a [f64] {
    if broadcast {
        raw.data()
    } else {
        raw.row(row)
    }
}

/// Applies an element-wise spline to every entry of `x` (`[rows, dims]`).
///
/// `raw` holds `cfg.num_raw()` unconstrained parameters per dimension, either
/// per row (`[rows, dims * P]`) or shared by all rows (`[dims * P]`). Returns
/// the transformed values and the per-row summed log-abs-determinant.
pub fn spline_batch(raw: &Tensor, x: &Tensor, cfg: &SquashConfig, direction: Direction) -> Result<(Tensor, Vec<f64>)> {
    let (rows, dims, broadcast) = check_shapes(raw, x, cfg)?;
    let p = cfg.num_raw();
    let mut values = vec![0.0; rows * dims];
    let mut lad = vec![0.0; rows];
    if dims > 0 {
        values
            .par_chunks_mut(dims)
            .zip(lad.par_iter_mut())
            .enumerate()
            .for_each(|(r, (out, l))| {
                let params = raw_row(raw, r, broadcast);
                let xr = x.row(r);
                for j in 0..dims {
                    let res = transform_raw(&params[j * p..(j + 1) * p], cfg, xr[j], direction);
                    out[j] = res.value;
                    *l += res.log_abs_det;
                }
            });
    }
    Ok((Tensor::matrix(rows, dims, values)?, lad))
}

struct SplineOp {
    cfg: SquashConfig,
    direction: Direction,
}

impl CustomOp for SplineOp {
    fn name(&self) -> &'static str {
        "spline"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (raw, x) = (inputs[0], inputs[1]);
        let (rows, dims, broadcast) = check_shapes(raw, x, &self.cfg)?;
        let p = self.cfg.num_raw();
        let width = dims * p;
        let mut raw_grad = vec![0.0; rows * width];
        let mut x_grad = vec![0.0; rows * dims];
        if dims > 0 {
            raw_grad
                .par_chunks_mut(width)
                .zip(x_grad.par_chunks_mut(dims))
                .enumerate()
                .for_each(|(r, (rg, xg))| {
                    let params = raw_row(raw, r, broadcast);
                    let xr = x.row(r);
                    let gr = grad.row(r);
                    let gl = gr[dims];
                    for j in 0..dims {
                        xg[j] = transform_raw_vjp(
                            &params[j * p..(j + 1) * p],
                            &self.cfg,
                            xr[j],
                            self.direction,
                            gr[j],
                            gl,
                            &mut rg[j * p..(j + 1) * p],
                        );
                    }
                });
        }
        let raw_grad = if broadcast {
            // Summed in row order so the result does not depend on scheduling.
            let mut total = vec![0.0; width];
            for chunk in raw_grad.chunks(width.max(1)) {
                for (t, v) in total.iter_mut().zip(chunk) {
                    *t += v;
                }
            }
            Tensor::vector(total)
        } else {
            Tensor::matrix(rows, width, raw_grad)?
        };
        Ok(vec![Some(raw_grad), Some(Tensor::matrix(rows, dims, x_grad)?)])
    }
}

/// Graph version of [`spline_batch`]. Returns `(values [rows, dims], log_abs_det [rows])`.
pub fn spline_node(g: &mut Graph, raw: Var, x: Var, cfg: &SquashConfig, direction: Direction) -> Result<(Var, Var)> {
    let (values, lad) = spline_batch(g.value(raw), g.value(x), cfg, direction)?;
    let (rows, dims) = (values.rows(), values.cols());
    let mut packed = Vec::with_capacity(rows * (dims + 1));
    for r in 0..rows {
        packed.extend_from_slice(values.row(r));
        packed.push(lad[r]);
    }
    let out = g.custom(
        &[raw, x],
        Tensor::matrix(rows, dims + 1, packed)?,
        Box::new(SplineOp {
            cfg: *cfg,
            direction,
        }),
    );
    let v = g.slice_cols(out, 0, dims)?;
    let l = g.slice_cols(out, dims, dims + 1)?;
    let l = g.sum_last(l);
    Ok((v, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(broadcast: bool) -> (Tensor, Tensor, SquashConfig) {
        let cfg = SquashConfig::symmetric(4, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (rows, dims) = (3, 2);
        let width = dims * cfg.num_raw();
        let n = if broadcast { width } else { rows * width };
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw = if broadcast {
            Tensor::vector(raw)
        } else {
            Tensor::matrix(rows, width, raw).unwrap()
        };
        let x = Tensor::matrix(rows, dims, vec![0.4, -1.1, 2.5, 0.0, -3.5, 1.7]).unwrap();
        (raw, x, cfg)
    }

    fn objective(raw: &Tensor, x: &Tensor, cfg: &SquashConfig, dir: Direction) -> (Graph, Var, Var, Var) {
        let mut g = Graph::new();
        let r = g.leaf(raw.clone());
        let xv = g.leaf(x.clone());
        let (v, l) = spline_node(&mut g, r, xv, cfg, dir).unwrap();
        let w = g.constant(Tensor::vector(vec![0.7, -0.3]));
        let vw = g.mul(v, w).unwrap();
        let a = g.sum(vw);
        let b = g.sum(l);
        let b = g.scale(b, 0.9);
        let total = g.add(a, b).unwrap();
        (g, r, xv, total)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for broadcast in [false, true] {
            for dir in [Direction::Forward, Direction::Inverse] {
                let (raw, x, cfg) = setup(broadcast);
                let (mut g, r, xv, total) = objective(&raw, &x, &cfg, dir);
                g.backward(total).unwrap();
                let value = |raw: &Tensor, x: &Tensor| {
                    let (g, _, _, t) = objective(raw, x, &cfg, dir);
                    g.value(t).data()[0]
                };
                let h = 1e-6;
                for (var, base, is_raw) in [(r, &raw, true), (xv, &x, false)] {
                    let grad = g.grad(var).unwrap();
                    for i in 0..base.len() {
                        let mut p = base.clone();
                        let mut q = base.clone();
                        p.data_mut()[i] += h;
                        q.data_mut()[i] -= h;
                        let fd = if is_raw {
                            (value(&p, &x) - value(&q, &x)) / (2.0 * h)
                        } else {
                            (value(&raw, &p) - value(&raw, &q)) / (2.0 * h)
                        };
                        let a = grad.data()[i];
                        assert!(
                            (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3),
                            "{dir:?} broadcast={broadcast} raw={is_raw} [{i}]: {a} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn batch_shape_is_checked() {
        let (raw, _, cfg) = setup(false);
        let x = Tensor::zeros(&[4, 2]);
        assert!(spline_batch(&raw, &x, &cfg, Direction::Forward).is_err());
    }
}
