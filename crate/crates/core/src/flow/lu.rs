use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{CustomOp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::spline::Direction;

/// Invertible linear map `x = P L U z` with a fixed permutation `P`, unit
/// lower-triangular `L` and upper-triangular `U` whose diagonal is stored as
/// logarithms.
///
/// `lower` and `upper` are stored as full `[D, D]` tensors; only their strictly
/// lower and strictly upper entries are used.
#[derive(Debug, Clone, PartialEq)]
pub struct LuLinear {
    dim: usize,
    perm: Vec<usize>,
    lower: ParamId,
    upper: ParamId,
    log_diag: ParamId,
}

/// Dense factors assembled from the parameters.
struct Factors {
    dim: usize,
    l: Vec<f64>,
    u: Vec<f64>,
    diag: Vec<f64>,
    log_det: f64,
}

impl Factors {
    fn new(lower: &Tensor, upper: &Tensor, log_diag: &Tensor) -> Self {
        let dim = log_diag.len();
        let mut l = vec![0.0; dim * dim];
        let mut u = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let idx = i * dim + j;
                if i > j {
                    l[idx] = lower.data()[idx];
                } else if i < j {
                    u[idx] = upper.data()[idx];
                }
            }
            l[i * dim + i] = 1.0;
            u[i * dim + i] = log_diag.data()[i].exp();
        }
        Factors {
            dim,
            l,
            u,
            diag: log_diag.data().iter().map(|v| v.exp()).collect(),
            log_det: log_diag.sum(),
        }
    }

    fn mul_u(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            out[i] = (i..n).map(|j| self.u[i * n + j] * z[j]).sum();
        }
    }

    fn mul_l(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            out[i] = (0..=i).map(|j| self.l[i * n + j] * u[j]).sum();
        }
    }

    /// Solves `L u = l`.
    fn solve_l(&self, l: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            out[i] = l[i] - (0..i).map(|j| self.l[i * n + j] * out[j]).sum::<f64>();
        }
    }

    /// Solves `U z = u`.
    fn solve_u(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.u[i * n + j] * out[j]).sum();
            out[i] = (u[i] - s) / self.diag[i];
        }
    }

    /// Solves `L^T a = b`.
    fn solve_lt(&self, b: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            out[i] = b[i] - (i + 1..n).map(|j| self.l[j * n + i] * out[j]).sum::<f64>();
        }
    }

    /// Solves `U^T a = b`.
    fn solve_ut(&self, b: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.u[j * n + i] * out[j]).sum();
            out[i] = (b[i] - s) / self.diag[i];
        }
    }
}

/// Applies the map to every row of `x`. Returns the output and the
/// log-abs-determinant shared by all rows.
fn apply(factors: &Factors, perm: &[usize], x: &Tensor, direction: Direction) -> Result<(Tensor, f64)> {
    let n = factors.dim;
    let (rows, cols) = x.require_matrix("lu")?;
    if cols != n {
        return Err(Error::shape("lu", x.shape(), &[rows, n]));
    }
    let mut out = vec![0.0; rows * n];
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for (r, dst) in out.chunks_mut(n.max(1)).enumerate().take(rows) {
        let src = x.row(r);
        match direction {
            Direction::Forward => {
                factors.mul_u(src, &mut a);
                factors.mul_l(&a, &mut b);
                for (i, &p) in perm.iter().enumerate() {
                    dst[i] = b[p];
                }
            }
            Direction::Inverse => {
                for (i, &p) in perm.iter().enumerate() {
                    a[p] = src[i];
                }
                factors.solve_l(&a, &mut b);
                factors.solve_u(&b, dst);
            }
        }
    }
    let log_det = match direction {
        Direction::Forward => factors.log_det,
        Direction::Inverse => -factors.log_det,
    };
    Ok((Tensor::matrix(rows, n, out)?, log_det))
}

struct LuOp {
    perm: Vec<usize>,
    direction: Direction,
}

impl CustomOp for LuOp {
    fn name(&self) -> &'static str {
        "lu"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let f = Factors::new(inputs[0], inputs[1], inputs[2]);
        let x = inputs[3];
        let n = f.dim;
        let mut gl_mat = vec![0.0; n * n];
        let mut gu_mat = vec![0.0; n * n];
        let mut g_ld = vec![0.0; n];
        let mut g_x = vec![0.0; x.len()];
        let (mut u, mut ubar, mut lbar) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for r in 0..x.rows() {
            let g = grad.row(r);
            let gl = g[n];
            match self.direction {
                Direction::Forward => {
                    let z = x.row(r);
                    for (i, &p) in self.perm.iter().enumerate() {
                        lbar[p] = g[i];
                    }
                    f.mul_u(z, &mut u);
                    for i in 0..n {
                        ubar[i] = (i..n).map(|j| f.l[j * n + i] * lbar[j]).sum();
                        for j in 0..i {
                            gl_mat[i * n + j] += lbar[i] * u[j];
                        }
                    }
                    for i in 0..n {
                        for j in i + 1..n {
                            gu_mat[i * n + j] += ubar[i] * z[j];
                        }
                        g_ld[i] += ubar[i] * z[i] * f.diag[i] + gl;
                        g_x[r * n + i] = (0..=i).map(|j| f.u[j * n + i] * ubar[j]).sum();
                    }
                }
                Direction::Inverse => {
                    let z = output.row(r);
                    f.solve_ut(&g[..n], &mut ubar);
                    for i in 0..n {
                        for j in i + 1..n {
                            gu_mat[i * n + j] -= ubar[i] * z[j];
                        }
                        g_ld[i] -= ubar[i] * z[i] * f.diag[i] + gl;
                    }
                    f.mul_u(&z[..n], &mut u);
                    f.solve_lt(&ubar, &mut lbar);
                    for i in 0..n {
                        for j in 0..i {
                            gl_mat[i * n + j] -= lbar[i] * u[j];
                        }
                    }
                    for (i, &p) in self.perm.iter().enumerate() {
                        g_x[r * n + i] = lbar[p];
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::matrix(n, n, gl_mat)?),
            Some(Tensor::matrix(n, n, gu_mat)?),
            Some(Tensor::vector(g_ld)),
            Some(Tensor::new(x.shape().to_vec(), g_x)?),
        ])
    }
}

impl LuLinear {
    /// Identity factors with a random permutation, so the layer starts as a
    /// pure permutation.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(rng);
        LuLinear {
            dim,
            perm,
            lower: store.add(format!("{name}.lower"), Tensor::zeros(&[dim, dim])),
            upper: store.add(format!("{name}.upper"), Tensor::zeros(&[dim, dim])),
            log_diag: store.add(format!("{name}.log_diag"), Tensor::zeros(&[dim])),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// The assembled matrix `W = P L U`.
    pub fn matrix(&self, store: &ParamStore) -> Tensor {
        let f = Factors::new(store.get(self.lower), store.get(self.upper), store.get(self.log_diag));
        let n = self.dim;
        let mut w = vec![0.0; n * n];
        for (i, &p) in self.perm.iter().enumerate() {
            for j in 0..n {
                w[i * n + j] = (0..n).map(|k| f.l[p * n + k] * f.u[k * n + j]).sum();
            }
        }
        Tensor::matrix(n, n, w).expect("square")
    }

    pub fn log_abs_det(&self, store: &ParamStore) -> f64 {
        store.get(self.log_diag).sum()
    }

    /// Applies `W` (forward) or `W^-1` (inverse) to each row; the second value
    /// is the per-row log-abs-determinant `[rows]`.
    pub fn transform(&self, tape: &mut Tape, x: Var, direction: Direction) -> Result<(Var, Var)> {
        let (lo, up, ld) = (tape.param(self.lower), tape.param(self.upper), tape.param(self.log_diag));
        let g = &mut tape.graph;
        let factors = Factors::new(g.value(lo), g.value(up), g.value(ld));
        let (out, log_det) = apply(&factors, &self.perm, g.value(x), direction)?;
        let (rows, n) = (out.rows(), self.dim);
        let mut packed = Vec::with_capacity(rows * (n + 1));
        for r in 0..rows {
            packed.extend_from_slice(out.row(r));
            packed.push(log_det);
        }
        let node = g.custom(
            &[lo, up, ld, x],
            Tensor::matrix(rows, n + 1, packed)?,
            Box::new(LuOp {
                perm: self.perm.clone(),
                direction,
            }),
        );
        let values = g.slice_cols(node, 0, n)?;
        let lad = g.slice_cols(node, n, n + 1)?;
        Ok((values, g.sum_last(lad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_layer(dim: usize, seed: u64) -> (ParamStore, LuLinear) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lu = LuLinear::new(&mut store, "lu", dim, &mut rng);
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        (store, lu)
    }

    fn run(store: &ParamStore, lu: &LuLinear, x: &Tensor, dir: Direction) -> (Tensor, Vec<f64>) {
        let mut tape = Tape::inference(store);
        let xv = tape.graph.constant(x.clone());
        let (y, l) = lu.transform(&mut tape, xv, dir).unwrap();
        (tape.graph.value(y).clone(), tape.graph.value(l).data().to_vec())
    }

    fn det3(m: &Tensor) -> f64 {
        let a = |i, j| m.get2(i, j);
        a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
    }

    #[test]
    fn identity_factors_are_a_permutation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lu = LuLinear::new(&mut store, "lu", 4, &mut rng);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (y, l) = run(&store, &lu, &x, Direction::Forward);
        let mut sorted = y.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, x.data());
        assert_eq!(l, vec![0.0]);
    }

    #[test]
    fn roundtrip_and_determinant() {
        let (store, lu) = random_layer(3, 8);
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.2], vec![-0.5, 0.0, 1.0]]).unwrap();
        let (y, lf) = run(&store, &lu, &x, Direction::Forward);
        let (back, li) = run(&store, &lu, &y, Direction::Inverse);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let w = lu.matrix(&store);
        let expected = det3(&w).abs().ln();
        assert!((lf[0] - expected).abs() < 1e-10);
        assert!((li[1] + expected).abs() < 1e-10);
        // forward output equals W x
        for j in 0..3 {
            let wx: f64 = (0..3).map(|k| w.get2(j, k) * x.get2(0, k)).sum();
            assert!((y.get2(0, j) - wx).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for dir in [Direction::Forward, Direction::Inverse] {
            let (store, lu) = random_layer(3, 21);
            let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.2], vec![-0.5, 0.4, 1.0]]).unwrap();
            let weights = Tensor::vector(vec![0.3, -0.7, 1.1]);
            let objective = |store: &ParamStore, x: &Tensor| {
                let mut tape = Tape::training(store, None);
                let xv = tape.graph.leaf(x.clone());
                let (y, l) = lu.transform(&mut tape, xv, dir).unwrap();
                let w = tape.graph.constant(weights.clone());
                let yw = tape.graph.mul(y, w).unwrap();
                let yw = tape.graph.tanh(yw);
                let a = tape.graph.sum(yw);
                let b = tape.graph.sum(l);
                let total = tape.graph.add(a, b).unwrap();
                (tape, xv, total)
            };
            let (mut tape, xv, total) = objective(&store, &x);
            tape.graph.backward(total).unwrap();
            let grads = tape.param_grads(&store);
            let gx = tape.graph.grad(xv).unwrap().clone();
            let value = |s: &ParamStore, x: &Tensor| {
                let (t, _, tot) = objective(s, x);
                t.graph.value(tot).data()[0]
            };
            let h = 1e-6;
            for (p, grad) in grads.iter().enumerate() {
                for i in 0..grad.len() {
                    let mut plus = store.clone();
                    let mut minus = store.clone();
                    plus.tensors_mut()[p].data_mut()[i] += h;
                    minus.tensors_mut()[p].data_mut()[i] -= h;
                    let fd = (value(&plus, &x) - value(&minus, &x)) / (2.0 * h);
                    assert!((grad.data()[i] - fd).abs() < 1e-7, "{dir:?} param {p}[{i}]: {} vs {fd}", grad.data()[i]);
                }
            }
            for i in 0..x.len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus.data_mut()[i] += h;
                minus.data_mut()[i] -= h;
                let fd = (value(&store, &plus) - value(&store, &minus)) / (2.0 * h);
                assert!((gx.data()[i] - fd).abs() < 1e-7, "{dir:?} x[{i}]");
            }
        }
    }
}
