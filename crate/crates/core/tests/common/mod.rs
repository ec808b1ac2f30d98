#![allow(dead_code)]

use lrs_flow::autodiff::Tensor;
use lrs_flow::flow::FlowModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Overwrites every parameter with a uniform draw from `[-scale, scale]`.
pub fn randomize(model: &mut FlowModel, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn random_rows(rows: usize, dim: usize, spread: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, dim, (0..rows * dim).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
}

/// Jacobian of `f` at `x` by a fourth-order central stencil.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let at = |k: f64| {
            let mut p = x.to_vec();
            p[j] += k * h;
            f(&p)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for i in 0..n {
            jac[i][j] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac
}

/// `ln |det m|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, p);
        let pivot = m[c][c];
        total += pivot.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / pivot;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    total
}

pub fn row_tensor(x: &[f64]) -> Tensor {
    Tensor::matrix(1, x.len(), x.to_vec()).unwrap()
}
