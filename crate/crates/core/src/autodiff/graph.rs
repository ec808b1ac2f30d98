use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::spline::{sigmoid, softplus};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the built-in op set.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the gradient of the output.
    /// `None` means the input receives no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    MaskedMatMul(Var, Var, Arc<Tensor>),
    Affine(Var, Var, Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Logistic(Var),
    Softplus(Var),
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    Permute(Var, Vec<usize>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
}

/// Output shape of a broadcasting binary op: one shape must be a suffix of the other.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long[long.len() - short.len()..] == *short {
        Ok(long.to_vec())
    } else {
        Err(Error::shape(op, a, b))
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (ad, bd) = (a.data(), b.data());
    let n: usize = shape.iter().product();
    let data = if ad.len() == bd.len() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % ad.len()], bd[i % bd.len()])).collect()
    };
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(grad: Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    if grad.len() == n {
        return grad.reshape(shape.to_vec()).expect("same size");
    }
    let mut out = vec![0.0; n];
    for chunk in grad.data().chunks(n) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad[v.0])
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.values[v.0], Tensor::scalar(0.0))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let value = broadcast_binary(self.value(a), self.value(b), shape, f);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn matmul_value(&self, name: &'static str, x: Var, w: &Tensor) -> Result<Tensor> {
        let xv = self.value(x);
        let (m, k) = xv.require_matrix(name)?;
        let (k2, n) = w.require_matrix(name)?;
        if k != k2 {
            return Err(Error::shape(name, xv.shape(), w.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, xv.data(), false, w.data(), false, 0.0, &mut out);
        Tensor::matrix(m, n, out)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = self.matmul_value("matmul", x, self.value(w))?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, Op::MatMul(x, w), rg))
    }

    /// `x (w * mask)` with a fixed binary mask of the same shape as `w`.
    pub fn masked_matmul(&mut self, x: Var, w: Var, mask: Arc<Tensor>) -> Result<Var> {
        if mask.shape() != self.shape(w) {
            return Err(Error::shape("masked_matmul", self.shape(w), mask.shape()));
        }
        let masked = broadcast_binary(self.value(w), &mask, mask.shape().to_vec(), |a, b| a * b);
        let value = self.matmul_value("masked_matmul", x, &masked)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, Op::MaskedMatMul(x, w, mask), rg))
    }

    /// `x w + b`, with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let mut value = self.matmul_value("affine", x, self.value(w))?;
        let bias = self.value(b);
        if bias.shape() != [value.cols()] {
            return Err(Error::shape("affine", value.shape(), bias.shape()));
        }
        let n = value.cols();
        for row in value.data_mut().chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(bias.data()) {
                *v += bb;
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Affine(x, w, b), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.requires_grad[x.0];
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Logistic(x))
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad[x.0];
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.requires_grad[x.0];
        self.push(value, Op::Mean(x), rg)
    }

    /// Sums over the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.cols().max(1);
        let data: Vec<f64> = t.data().chunks(n).map(|c| c.iter().sum()).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let value = Tensor::new(shape, data).expect("sum_last shape");
        let rg = self.requires_grad[x.0];
        self.push(value, Op::SumLast(x), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.require_matrix("slice_cols")?;
        if start > end || end > cols {
            return Err(Error::shape("slice_cols", t.shape(), &[start, end]));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, width, data)?;
        let rg = self.requires_grad[x.0];
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", &[], &[]))?;
        let rows = self.value(*first).require_matrix("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_cols")?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(p)));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Reorders the columns of a matrix: output column `j` is input column `perm[j]`.
    pub fn permute_cols(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.require_matrix("permute_cols")?;
        if perm.len() != cols || perm.iter().any(|&p| p >= cols) {
            return Err(Error::shape("permute_cols", t.shape(), &[perm.len()]));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = t.row(r);
            data.extend(perm.iter().map(|&p| row[p]));
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let rg = self.requires_grad[x.0];
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), rg))
    }

    /// Registers the result of an externally computed operation.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagates `d loss / d node` to every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.requires_grad[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let rg = |v: &Var| self.requires_grad[v.0];
        let out = &self.values[idx];
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.ops[idx], Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(a) {
                    Self::accumulate(grads, *a, reduce_to(g.clone(), self.shape(*a)));
                }
                if rg(b) {
                    Self::accumulate(grads, *b, reduce_to(g.map(|v| sign * v), self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if rg(a) {
                    let ga = broadcast_binary(g, bv, g.shape().to_vec(), |x, y| x * y);
                    Self::accumulate(grads, *a, reduce_to(ga, av.shape()));
                }
                if rg(b) {
                    let gb = broadcast_binary(g, av, g.shape().to_vec(), |x, y| x * y);
                    Self::accumulate(grads, *b, reduce_to(gb, bv.shape()));
                }
            }
            Op::MatMul(x, w) => {
                let wv = self.value(*w).clone();
                self.matmul_backward(*x, *w, &wv, None, g, grads);
            }
            Op::MaskedMatMul(x, w, mask) => {
                let masked = broadcast_binary(self.value(*w), mask, mask.shape().to_vec(), |a, b| a * b);
                self.matmul_backward(*x, *w, &masked, Some(mask), g, grads);
            }
            Op::Affine(x, w, b) => {
                let wv = self.value(*w).clone();
                self.matmul_backward(*x, *w, &wv, None, g, grads);
                if rg(b) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    Self::accumulate(grads, *b, Tensor::vector(gb));
                }
            }
            Op::Tanh(x) => self.unary_backward(*x, out, g, grads, |_, y| 1.0 - y * y),
            Op::Relu(x) => self.unary_backward(*x, out, g, grads, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Log(x) => self.unary_backward(*x, out, g, grads, |x, _| 1.0 / x),
            Op::Exp(x) => self.unary_backward(*x, out, g, grads, |_, y| y),
            Op::Logistic(x) => self.unary_backward(*x, out, g, grads, |_, y| y * (1.0 - y)),
            Op::Softplus(x) => self.unary_backward(*x, out, g, grads, |x, _| sigmoid(x)),
            Op::Scale(x, c) => {
                let c = *c;
                self.unary_backward(*x, out, g, grads, |_, _| c)
            }
            Op::Offset(x) => self.unary_backward(*x, out, g, grads, |_, _| 1.0),
            Op::Sum(x) | Op::Mean(x) => {
                if rg(x) {
                    let xv = self.value(*x);
                    let scale = if matches!(self.ops[idx], Op::Mean(_)) {
                        1.0 / xv.len() as f64
                    } else {
                        1.0
                    };
                    Self::accumulate(grads, *x, Tensor::full(xv.shape(), g.data()[0] * scale));
                }
            }
            Op::SumLast(x) => {
                if rg(x) {
                    let xv = self.value(*x);
                    let n = xv.cols().max(1);
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                    Self::accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
            }
            Op::Slice { x, start } => {
                if rg(x) {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let width = out.cols();
                    let mut data = vec![0.0; xv.len()];
                    for (r, grow) in g.data().chunks(width.max(1)).enumerate().take(xv.rows()) {
                        data[r * cols + start..r * cols + start + width].copy_from_slice(grow);
                    }
                    Self::accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let w = pv.cols();
                    if rg(p) {
                        let mut data = Vec::with_capacity(pv.len());
                        for r in 0..pv.rows() {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        Self::accumulate(grads, *p, Tensor::new(pv.shape().to_vec(), data)?);
                    }
                    offset += w;
                }
            }
            Op::Permute(x, perm) => {
                if rg(x) {
                    let cols = perm.len();
                    let mut data = vec![0.0; g.len()];
                    for (dst, src) in data.chunks_mut(cols.max(1)).zip(g.data().chunks(cols.max(1))) {
                        for (j, &p) in perm.iter().enumerate() {
                            dst[p] += src[j];
                        }
                    }
                    Self::accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
                }
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let input_grads = op.backward(&values, out, g)?;
                for (v, ig) in inputs.iter().zip(input_grads) {
                    if let (true, Some(ig)) = (rg(v), ig) {
                        if ig.shape() != self.shape(*v) {
                            return Err(Error::shape(op.name(), self.shape(*v), ig.shape()));
                        }
                        Self::accumulate(grads, *v, ig);
                    }
                }
            }
        }
        Ok(())
    }

    fn unary_backward(
        &self,
        x: Var,
        yv: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        d: impl Fn(f64, f64) -> f64,
    ) {
        if !self.requires_grad[x.0] {
            return;
        }
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .zip(yv.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| gi * d(xi, yi))
            .collect();
        Self::accumulate(grads, x, Tensor::new(xv.shape().to_vec(), data).expect("unary shape"));
    }

    fn matmul_backward(
        &self,
        x: Var,
        w: Var,
        effective_w: &Tensor,
        mask: Option<&Arc<Tensor>>,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.value(x);
        let (m, k) = (xv.rows(), xv.cols());
        let n = g.cols();
        if self.requires_grad[x.0] {
            let mut gx = vec![0.0; m * k];
            gemm(m, n, k, g.data(), false, effective_w.data(), true, 0.0, &mut gx);
            Self::accumulate(grads, x, Tensor::matrix(m, k, gx).expect("gx shape"));
        }
        if self.requires_grad[w.0] {
            let mut gw = vec![0.0; k * n];
            gemm(k, m, n, xv.data(), true, g.data(), false, 0.0, &mut gw);
            if let Some(mask) = mask {
                for (v, mk) in gw.iter_mut().zip(mask.data()) {
                    *v *= mk;
                }
            }
            Self::accumulate(grads, w, Tensor::matrix(k, n, gw).expect("gw shape"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = g.constant(Tensor::eye(2));
        let y = g.matmul(x, i).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn matmul_shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(x, w), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn tanh_matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = random(&mut rng, &[3, 4]);
        let x0 = random(&mut rng, &[5, 3]);
        let f = |w: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let wv = g.leaf(w.clone());
            let h = g.matmul(x, wv).unwrap();
            let t = g.tanh(h);
            let s = g.sum(t);
            (g, wv, s)
        };
        let (mut g, wv, s) = f(&w0);
        g.backward(s).unwrap();
        let grad = g.grad(wv).unwrap().clone();
        let h = 1e-6;
        for i in 0..w0.len() {
            let mut plus = w0.clone();
            let mut minus = w0.clone();
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let (gp, _, sp) = f(&plus);
            let (gm, _, sm) = f(&minus);
            let fd = (gp.value(sp).data()[0] - gm.value(sm).data()[0]) / (2.0 * h);
            let rel = (grad.data()[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "entry {i}: {} vs {fd}", grad.data()[i]);
        }
    }

    #[test]
    fn square_gradient_and_fan_out() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5));
        let a = g.scale(x, 1.0);
        let b = g.scale(x, 1.0);
        let y = g.add(a, b).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar(s)) if s == vec![2]));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = g.leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.slice_cols(c, 1, 2).unwrap();
        let w = g.constant(Tensor::vector(vec![2.0]));
        let sw = g.mul(s, w).unwrap();
        let total = g.sum(sw);
        g.backward(total).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn broadcast_gradient_is_summed_over_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.leaf(Tensor::vector(vec![0.5, -0.5]));
        let y = g.mul(x, b).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x0 = Tensor::vector(vec![0.3, 1.2, 2.0]);
        let build = |x: &Tensor| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let a = g.logistic(xv);
            let b = g.softplus(xv);
            let c = g.log(xv);
            let d = g.exp(xv);
            let ab = g.mul(a, b).unwrap();
            let cd = g.sub(c, d).unwrap();
            let e = g.add(ab, cd).unwrap();
            let e = g.add_scalar(e, 1.0);
            let m = g.mean(e);
            (g, xv, m)
        };
        let (mut g, xv, m) = build(&x0);
        g.backward(m).unwrap();
        let grad = g.grad(xv).unwrap().clone();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = x0.clone();
            let mut q = x0.clone();
            p.data_mut()[i] += h;
            q.data_mut()[i] -= h;
            let (gp, _, mp) = build(&p);
            let (gq, _, mq) = build(&q);
            let fd = (gp.value(mp).data()[0] - gq.value(mq).data()[0]) / (2.0 * h);
            assert!((grad.data()[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn permute_gradient_is_scattered_back() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let y = g.permute_cols(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 1.0, 2.0]);
        let w = g.constant(Tensor::vector(vec![10.0, 20.0, 30.0]));
        let yw = g.mul(y, w).unwrap();
        let s = g.sum(yw);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[20.0, 30.0, 10.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.leaf(Tensor::scalar(1.0));
        let y = g.mul(c, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }
}
