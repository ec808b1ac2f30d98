use crate::autodiff::Tensor;

/// `lr0 * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 5e-4), 5e-4);
        assert!(cosine_lr(100, 100, 5e-4).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 5e-4) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn clipping() {
        let mut small = vec![Tensor::vector(vec![3.0, 0.0])];
        clip_gradients(&mut small, 5.0);
        assert_eq!(small[0].data(), &[3.0, 0.0]);

        let mut big = vec![Tensor::vector(vec![6.0]), Tensor::vector(vec![8.0])];
        let before = clip_gradients(&mut big, 5.0);
        assert_eq!(before, 10.0);
        assert!((global_norm(&big) - 5.0).abs() < 1e-12);
        assert_eq!(big[0].data()[0], 3.0);

        let mut zero = vec![Tensor::zeros(&[3])];
        clip_gradients(&mut zero, 5.0);
        assert!(zero[0].data().iter().all(|&v| v == 0.0));
    }
}
